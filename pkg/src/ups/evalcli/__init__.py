"""Evaluation harness, experiment orchestration and the command line."""
from .evaluate import eval_nrmse, eval_superres, params_checksum, rollout, rollout_nrmse, sample_nrmse
from .experiment import (
    ConfigError,
    Experiment,
    ExperimentConfig,
    ablation_overrides,
    fno_baseline_train,
    load_config,
    parse_config,
    run_experiment,
)
from .report import REPORT_HEADER, CsvLog, config_hash

__all__ = [
    "ConfigError", "CsvLog", "Experiment", "ExperimentConfig", "REPORT_HEADER", "ablation_overrides",
    "config_hash", "eval_nrmse", "eval_superres", "fno_baseline_train", "load_config", "params_checksum",
    "parse_config", "rollout", "rollout_nrmse", "run_experiment", "sample_nrmse",
]
