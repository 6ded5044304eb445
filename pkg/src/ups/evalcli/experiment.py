"""End-to-end experiment: data, two training stages, evaluation suites."""
from __future__ import annotations

import configparser
import json
import logging
import os
import re
import shutil
import time
import zlib
from contextlib import contextmanager
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from ..gradkit.fft import is_power_of_two
from ..pdegen import FAMILY_SPECS, generate_family, read_trajectories, write_trajectories
from ..trainer import (
    TrainConfig,
    TrainState,
    fewshot_adapt,
    load_checkpoint,
    load_reference_corpus,
    reference_features,
    run_stage,
    save_checkpoint,
    stage1_train,
    stage2_train,
)
from ..unirep import FamilyData, compute_stats, save_stats, unify
from ..upsnet import FNOBaseline, ModelConfig, UPSModel
from .evaluate import eval_nrmse, eval_superres, rollout_nrmse
from .report import REPORT_HEADER, TIMINGS_HEADER, CsvLog, config_hash, format_coefficients

log = logging.getLogger(__name__)

BASELINE_STAGE = 4  # shuffle-stream id for baseline training


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    out_dir: str = "runs/desk"
    resume: bool = True
    seed: int = 0
    # data
    n: int = 64
    num_traj: int = 200
    num_test: int = 20
    timesteps: int = 0  # keep the first K snapshots of each family; 0 keeps all
    train_families: str = "advection,burgers,diffusion_sorption,shallow_water"
    heldout_families: str = "reaction_diffusion_1d,reaction_diffusion_2d"
    unseen_burgers_nu: float = 1.0  # <= 0 disables the unseen-coefficient suite
    fewshot_pool: int = 0  # training trajectories per held-out target; 0 means num_traj
    # model
    l: int = 32
    modes: int = 12
    fno_depth: int = 3
    e: int = 128
    body_depth: int = 4
    heads: int = 4
    max_meta_len: int = 80
    use_meta: bool = True
    use_coords: bool = True
    # training
    stage1: bool = True
    batch_size: int = 32
    lr: float = 5e-5
    weight_decay: float = 1e-5
    grad_clip: float = -1.0
    stage1_epochs: int = 20
    stage2_epochs: int = 40
    fewshot_lr: float = 1e-5
    fewshot_epochs: int = 100
    align_weight: float = 1.0
    task_weight: float = 1.0
    stage1_trainable: str = "embedder+predictor"
    mmd_bandwidth: str = "median"
    dtype: str = "float64"
    checkpoint_every: int = 5
    eval_every: int = 1
    corpus: str = ""  # empty: the bundled reference corpus
    # suites
    fewshot_k: str = "0,10,50,100"
    superres_m: str = "128"
    rollout_steps: int = 10
    baseline: bool = True
    ablations: str = ""
    eval_batch_size: int = 64

    # -- derived

    @staticmethod
    def _names(s: str) -> list[str]:
        return [x.strip() for x in s.split(",") if x.strip()]

    @staticmethod
    def _ints(s: str) -> list[int]:
        return [int(x) for x in ExperimentConfig._names(s)]

    @property
    def train_list(self) -> list[str]:
        return self._names(self.train_families)

    @property
    def heldout_list(self) -> list[str]:
        return self._names(self.heldout_families)

    @property
    def pool_size(self) -> int:
        return self.fewshot_pool or self.num_traj

    @property
    def k_list(self) -> list[int]:
        return self._ints(self.fewshot_k)

    @property
    def m_list(self) -> list[int]:
        return self._ints(self.superres_m)

    @property
    def ablation_list(self) -> list[str]:
        return self._names(self.ablations)

    def hashable(self) -> dict:
        d = asdict(self)
        for k in ("out_dir", "resume", "eval_batch_size"):
            d.pop(k)
        return d

    def validate(self) -> None:
        try:
            fams = self.train_list + self.heldout_list
            for f in fams:
                if f not in FAMILY_SPECS:
                    raise ConfigError(f"unknown family {f!r}; choose from {sorted(FAMILY_SPECS)}")
            if not self.train_list:
                raise ConfigError("train_families is empty")
            if set(self.train_list) & set(self.heldout_list):
                raise ConfigError("a family cannot be both trained on and held out")
            if not is_power_of_two(self.n):
                raise ConfigError(f"n must be a power of two, got {self.n}")
            if self.num_traj < 1 or self.num_test < 1:
                raise ConfigError("num_traj and num_test must be >= 1")
            if self.timesteps == 1 or self.timesteps < 0:
                raise ConfigError("timesteps must be 0 (all) or >= 2")
            if self.fewshot_pool < 0:
                raise ConfigError("fewshot_pool must be >= 0")
            for k in self.k_list:
                if not 0 <= k <= self.pool_size:
                    raise ConfigError(f"fewshot k={k} outside [0, {self.pool_size}] (the adaptation pool)")
            for m in self.m_list:
                if m < self.n or m % self.n or not is_power_of_two(m // self.n):
                    raise ConfigError(f"superres m={m} is not a power-of-two multiple of n={self.n}")
            for cell in self.ablation_list:
                ablation_overrides(cell)
            if self.rollout_steps < 0:
                raise ConfigError("rollout_steps must be >= 0")
            self.model_config()
            self.train_config()
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def model_config(self, **over) -> ModelConfig:
        d = dict(
            l=self.l, modes=self.modes, fno_depth=self.fno_depth, e=self.e, body_depth=self.body_depth,
            heads=self.heads, n=self.n, max_meta_len=self.max_meta_len, use_meta=self.use_meta,
            use_coords=self.use_coords,
        )
        d.update(over)
        return ModelConfig(**d)

    def train_config(self, **over) -> TrainConfig:
        names = {f.name for f in fields(TrainConfig)}
        d = {k: v for k, v in asdict(self).items() if k in names}
        d.update(over)
        return TrainConfig(**d)


def ablation_overrides(cell: str) -> tuple[dict, dict, bool]:
    """``(model overrides, train overrides, run stage 1)`` for an ablation cell."""
    if cell == "s2_task_only":
        return {}, {"align_weight": 0.0}, True
    if cell == "s2_align_only":
        return {}, {"task_weight": 0.0}, True
    if cell == "s2_no_stage1":
        return {}, {}, False
    if cell == "s3_no_meta":
        return {"use_meta": False}, {}, True
    m = re.fullmatch(r"s6_l(\d+)", cell)
    if m:
        return {"l": int(m.group(1))}, {}, True
    raise ConfigError(
        f"unknown ablation cell {cell!r}; expected s2_task_only, s2_align_only, s2_no_stage1, s3_no_meta or s6_l<int>"
    )


# ---------------------------------------------------------------- config files


def _coerce(name: str, raw: str, typ):
    raw = raw.strip()
    try:
        if typ is bool or typ == "bool":
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if typ is int or typ == "int":
            return int(raw)
        if typ is float or typ == "float":
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"bad value for {name}: {raw!r}") from None


def parse_config(text: str, overrides: list[str] | None = None) -> ExperimentConfig:
    """Flat ``key = value`` lines with ``#`` comments; overrides win."""
    cp = configparser.ConfigParser(comment_prefixes=("#",), inline_comment_prefixes=("#",), interpolation=None)
    try:
        cp.read_string("[ups]\n" + text)
    except configparser.Error as exc:
        raise ConfigError(f"config syntax error: {exc}") from exc
    items = dict(cp["ups"])
    for ov in overrides or []:
        if "=" not in ov:
            raise ConfigError(f"override must be key=value, got {ov!r}")
        k, v = ov.split("=", 1)
        items[k.strip()] = v
    types = {f.name: f.type for f in fields(ExperimentConfig)}
    unknown = sorted(set(items) - set(types))
    if unknown:
        raise ConfigError(f"unknown config keys: {unknown}")
    cfg = ExperimentConfig(**{k: _coerce(k, v, types[k]) for k, v in items.items()})
    cfg.validate()
    return cfg


def load_config(path: str | os.PathLike | None, overrides: list[str] | None = None) -> ExperimentConfig:
    text = ""
    if path is not None:
        try:
            with open(path, encoding="utf-8") as f:
                text = f.read()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text, overrides)


def dump_config(cfg: ExperimentConfig) -> str:
    return "".join(f"{k} = {v}\n" for k, v in asdict(cfg).items())


# ---------------------------------------------------------------- experiment


class Experiment:
    """Artifacts live under ``cfg.out_dir``: data/, ckpt/, stats.json,
    config.ini, report.csv, timings.csv and audit.json."""

    def __init__(self, cfg: ExperimentConfig, fresh: bool = False):
        cfg.validate()
        self.cfg = cfg
        self.out = Path(cfg.out_dir)
        if fresh and not cfg.resume:
            for sub in ("ckpt",):
                shutil.rmtree(self.out / sub, ignore_errors=True)
            for f in ("report.csv", "timings.csv", "audit.json"):
                if (self.out / f).exists():
                    (self.out / f).unlink()
        (self.out / "data").mkdir(parents=True, exist_ok=True)
        (self.out / "ckpt").mkdir(exist_ok=True)
        self.hash = config_hash(cfg.hashable())
        (self.out / "config.ini").write_text(dump_config(cfg), encoding="utf-8")
        self.report = CsvLog(self.out / "report.csv", REPORT_HEADER)
        self.timings = CsvLog(self.out / "timings.csv", TIMINGS_HEADER)
        self.audit: dict[str, dict[str, int]] = {}
        self._stats: dict | None = None
        self._corpus: list[str] | None = None

    # -- bookkeeping

    @contextmanager
    def timed(self, step: str):
        log.info("%s ...", step)
        t = time.perf_counter()
        yield
        self.timings.append([{"config_hash": self.hash, "step": step, "seconds": round(time.perf_counter() - t, 3)}])

    def row(self, **kw) -> dict:
        return {"config_hash": self.hash, "seed": self.cfg.seed, **kw}

    def _auditor(self, label: str):
        counts = self.audit.setdefault(label, {})

        def on_batch(epoch, batch):
            for f in batch.families:
                counts[f] = counts.get(f, 0) + 1

        return on_batch

    def write_audit(self) -> dict:
        seen = {f for c in self.audit.values() for f in c}
        leaked = sorted(seen & set(self.cfg.heldout_list))
        doc = {"batches": self.audit, "heldout": self.cfg.heldout_list, "leaked": leaked}
        with open(self.out / "audit.json", "w") as f:
            json.dump(doc, f, indent=1, sort_keys=True)
        if leaked:
            raise RuntimeError(f"held-out families appeared in training batches: {leaked}")
        return doc

    # -- data

    def _data_seed(self, family: str, variant: str) -> int:
        return zlib.crc32(f"{self.cfg.seed}:{family}:{variant}".encode())

    def trajectories(self, family: str, split: str, n: int | None = None, variant: str = ""):
        """Cached generation. Train uses trajectory indices [0, pool), test
        the next num_test indices, so the splits never overlap. The pool is
        num_traj for training families and fewshot_pool for adaptation
        targets."""
        cfg = self.cfg
        n = n or cfg.n
        pool = cfg.num_traj if family in cfg.train_list and not variant else cfg.pool_size
        count, first = (pool, 0) if split == "train" else (cfg.num_test, pool)
        tag = f"{family}-{variant}" if variant else family
        spec = FAMILY_SPECS[family]
        T = min(cfg.timesteps or spec.timesteps, spec.timesteps)
        seed = self._data_seed(family, variant)
        path = self.out / "data" / f"{tag}_{split}_n{n}_T{T}_s{seed}_{first}+{count}.upst"
        if path.exists():
            return read_trajectories(path)
        t_final = spec.t_final * (T - 1) / (spec.timesteps - 1)
        coeffs = {"nu": cfg.unseen_burgers_nu} if variant == "unseen" else None
        with self.timed(f"gen:{tag}:{split}:n{n}"):
            ts = generate_family(family, n, count, seed, first, T, t_final, coeffs)
        write_trajectories(ts, path)
        return ts

    def stats(self) -> dict:
        """Per-family stats from each family's own training split (held-out
        families included, since zero-shot inputs need normalising too)."""
        if self._stats is None:
            self._stats = {}
            for f in self.cfg.train_list + self.cfg.heldout_list:
                ts = self.trajectories(f, "train")
                u, mask = unify(ts)
                self._stats[f] = compute_stats(u, mask, ts.dim)
            save_stats(self._stats, self.out / "stats.json")
        return self._stats

    def family_data(self, family: str, split: str, n: int | None = None, variant: str = "") -> FamilyData:
        ts = self.trajectories(family, split, n, variant)
        return FamilyData.from_set(ts, stats=self.stats()[family])

    def generate(self) -> None:
        cfg = self.cfg
        for f in cfg.train_list + cfg.heldout_list:
            self.trajectories(f, "train")
            self.trajectories(f, "test")
        if self._unseen():
            self.trajectories("burgers", "train", variant="unseen")
            self.trajectories("burgers", "test", variant="unseen")
        for m in cfg.m_list:
            for f in cfg.train_list:
                self.trajectories(f, "test", n=m)
        self.stats()

    def _unseen(self) -> bool:
        return self.cfg.unseen_burgers_nu > 0

    def corpus(self) -> list[str]:
        if self._corpus is None:
            self._corpus = load_reference_corpus(self.cfg.corpus or None)
        return self._corpus

    # -- training

    def _load(self, path: Path):
        if self.cfg.resume and Path(f"{path}.json").exists():
            return load_checkpoint(path)
        return None

    def stage1(self, mcfg: ModelConfig | None = None, tcfg: TrainConfig | None = None, tag: str = "") -> UPSModel:
        mcfg = mcfg or self.cfg.model_config()
        tcfg = tcfg or self.cfg.train_config()
        ck = self.out / "ckpt" / f"{tag}stage1"
        loaded = self._load(ck)
        if loaded is not None:
            model, state, _, _ = loaded
            if state.stage == 1 and state.epoch >= tcfg.stage1_epochs:
                return model
        else:
            model, state = UPSModel(mcfg, seed=self.cfg.seed), TrainState()
        # reference features come from the initial embedding table so that a
        # resumed run aligns against the same target
        ref = reference_features(self.corpus(), UPSModel(mcfg, seed=self.cfg.seed))
        setting = f"ablation:{tag[:-1]}" if tag else "train"

        def on_epoch_end(epoch, la, lt):
            state.rows.append(self.row(setting=setting, stage=1, epoch=epoch, family="*", resolution=mcfg.n, loss_align=la, loss_task=lt))

        with self.timed(f"{tag}stage1"):
            stage1_train(
                model, self.train_sets(), None, tcfg, state, ref_feats=ref, checkpoint_path=ck,
                on_epoch_end=on_epoch_end, on_batch=self._auditor(f"{tag}stage1"),
            )
        save_checkpoint(ck, model, state, tcfg)
        self.report.append(state.rows)
        return model

    def train_sets(self) -> list[FamilyData]:
        return [self.family_data(f, "train") for f in self.cfg.train_list]

    def test_sets(self) -> list[FamilyData]:
        return [self.family_data(f, "test") for f in self.cfg.train_list]

    def stage2(self, mcfg=None, tcfg=None, tag: str = "", run_stage1: bool | None = None) -> UPSModel:
        cfg = self.cfg
        mcfg = mcfg or cfg.model_config()
        tcfg = tcfg or cfg.train_config()
        run_stage1 = cfg.stage1 if run_stage1 is None else run_stage1
        ck = self.out / "ckpt" / f"{tag}stage2"
        loaded = self._load(ck)
        if loaded is not None and loaded[1].stage == 2:
            model, state, _, _ = loaded
            if state.epoch >= tcfg.stage2_epochs:
                return model
        else:
            model = self.stage1(mcfg, tcfg, tag) if run_stage1 else UPSModel(mcfg, seed=cfg.seed)
            state = TrainState()
        tests = self.test_sets()
        setting = f"ablation:{tag[:-1]}" if tag else "train"

        def on_epoch_end(epoch, la, lt):
            state.rows.append(self.row(setting=setting, stage=2, epoch=epoch, family="*", resolution=mcfg.n, loss_task=lt))
            if cfg.eval_every > 0 and (epoch + 1) % cfg.eval_every == 0:
                for f, v in eval_nrmse(model, tests, batch_size=cfg.eval_batch_size).items():
                    state.rows.append(self.row(setting=setting, stage=2, epoch=epoch, family=f, resolution=mcfg.n, nrmse=v))

        with self.timed(f"{tag}stage2"):
            stage2_train(
                model, self.train_sets(), tcfg, state, checkpoint_path=ck,
                on_epoch_end=on_epoch_end, on_batch=self._auditor(f"{tag}stage2"),
            )
        save_checkpoint(ck, model, state, tcfg)
        self.report.append(state.rows)
        return model

    def trained_model(self) -> UPSModel:
        return self.stage2()

    # -- evaluation suites

    def _coeff(self, data: FamilyData) -> str:
        return format_coefficients(data.coefficients)

    def evaluate(self, model, setting: str = "indist") -> dict[str, float]:
        with self.timed(f"eval:{setting}"):
            tests = self.test_sets()
            res = eval_nrmse(model, tests, batch_size=self.cfg.eval_batch_size)
        self.report.append([
            self.row(setting=setting, family=d.family, coefficients=self._coeff(d), resolution=d.n, nrmse=res[d.family])
            for d in tests
        ])
        return res

    def fewshot_targets(self) -> list[tuple[str, str]]:
        out = [(f, "") for f in self.cfg.heldout_list]
        if self._unseen():
            out.append(("burgers", "unseen"))
        return out

    def fewshot(self, model, ks: list[int] | None = None, targets=None) -> dict:
        cfg = self.cfg
        ks = cfg.k_list if ks is None else ks
        tcfg = cfg.train_config()
        results = {}
        for family, variant in targets or self.fewshot_targets():
            pool = self.family_data(family, "train", variant=variant)
            test = self.family_data(family, "test", variant=variant)
            for k in ks:
                with self.timed(f"fewshot:{family}{variant}:k{k}"):
                    adapted = fewshot_adapt(model, pool, k, tcfg)
                    v = eval_nrmse(adapted, [test], batch_size=cfg.eval_batch_size)[family]
                results[(family, variant, k)] = v
                self.report.append([self.row(
                    setting="fewshot", family=family, coefficients=self._coeff(test), resolution=test.n, k_shot=k, nrmse=v,
                )])
        return results

    def superres(self, model, ms: list[int] | None = None) -> dict:
        results = {}
        for m in self.cfg.m_list if ms is None else ms:
            for f in self.cfg.train_list:
                hires = self.family_data(f, "test", n=m)
                with self.timed(f"superres:{f}:m{m}"):
                    v = eval_superres(model, hires, batch_size=self.cfg.eval_batch_size)
                results[(f, m)] = v
                self.report.append([self.row(setting="superres", family=f, coefficients=self._coeff(hires), resolution=m, nrmse=v)])
        return results

    def rollout(self, model, steps: int | None = None) -> dict:
        steps = self.cfg.rollout_steps if steps is None else steps
        results = {}
        for d in self.test_sets():
            s = min(steps, d.T - 1)
            with self.timed(f"rollout:{d.family}"):
                err = rollout_nrmse(model, d, s)
            per_step = np.nanmean(err, axis=1)
            results[d.family] = per_step
            rows = []
            for step in sorted({1, s}):
                rows.append(self.row(
                    setting=f"rollout@{step}", family=d.family, coefficients=self._coeff(d), resolution=d.n,
                    nrmse=float(per_step[step - 1]),
                ))
            self.report.append(rows)
        return results

    def baseline(self) -> dict:
        results = {}
        for f in self.cfg.train_list:
            with self.timed(f"baseline:{f}"):
                _, v = fno_baseline_train(
                    self.family_data(f, "train"), self.family_data(f, "test"),
                    self.cfg.model_config(), self.cfg.train_config(), self.cfg.seed,
                )
            results[f] = v
            test = self.family_data(f, "test")
            self.report.append([self.row(setting="baseline", family=f, coefficients=self._coeff(test), resolution=test.n, nrmse=v)])
        return results

    def ablation(self, cell: str) -> dict:
        m_over, t_over, s1 = ablation_overrides(cell)
        mcfg = self.cfg.model_config(**m_over)
        tcfg = self.cfg.train_config(**t_over)
        model = self.stage2(mcfg, tcfg, tag=f"{cell}-", run_stage1=s1)
        return self.evaluate(model, setting=f"ablation:{cell}")

    def run(self) -> list[dict]:
        cfg = self.cfg
        self.generate()
        model = self.trained_model()
        self.evaluate(model)
        if cfg.k_list:
            self.fewshot(model)
        if cfg.m_list:
            self.superres(model)
        if cfg.rollout_steps > 0:
            self.rollout(model)
        if cfg.baseline:
            self.baseline()
        for cell in cfg.ablation_list:
            self.ablation(cell)
        self.write_audit()
        return self.report.read()


def run_experiment(cfg: ExperimentConfig) -> list[dict]:
    return Experiment(cfg, fresh=True).run()


def fno_baseline_train(train: FamilyData, test: FamilyData, mcfg: ModelConfig, tcfg: TrainConfig, seed: int = 0):
    """Single-family FNO (shared FNO stack, no body or metadata) trained on
    the task loss for ``stage2_epochs``; returns ``(model, test nRMSE)``."""
    model = FNOBaseline(mcfg, seed=seed)
    run_stage(model, [train], tcfg, TrainState(), BASELINE_STAGE, tcfg.stage2_epochs, lambda name: True)
    return model, eval_nrmse(model, [test])[test.family]

