"""Append-only CSV reports.

``report.csv`` columns (fixed, in this order):

==============  ============================================================
config_hash     first 12 hex digits of the SHA-256 of the experiment config
setting         train, indist, fewshot, superres, rollout@S, baseline,
                ablation:<cell>
stage           1 or 2 for training rows, empty otherwise
epoch           0-based epoch for training rows, empty otherwise
family          PDE family, or ``*`` for loss rows that span families
coefficients    ``k=v`` pairs joined by ``;``
resolution      grid the metric was computed on
k_shot          number of adaptation trajectories (fewshot rows)
seed            experiment seed
loss_align      epoch-mean alignment loss (stage rows)
loss_task       epoch-mean task loss (stage rows)
nrmse           mean test nRMSE in physical units
==============  ============================================================

Wall times go to ``timings.csv`` so that the report itself is a pure
function of the config and seed.
"""
from __future__ import annotations

import csv
import hashlib
import json
import os

REPORT_HEADER = [
    "config_hash", "setting", "stage", "epoch", "family", "coefficients",
    "resolution", "k_shot", "seed", "loss_align", "loss_task", "nrmse",
]
TIMINGS_HEADER = ["config_hash", "step", "seconds"]


def config_hash(cfg: dict) -> str:
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:12]


def format_coefficients(coefficients: dict) -> str:
    return ";".join(f"{k}={float(v)!r}" for k, v in sorted(coefficients.items()))


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


class CsvLog:
    """CSV file with a fixed header; rows are only ever appended."""

    def __init__(self, path: str | os.PathLike, header: list[str], fresh: bool = False):
        self.path = os.fspath(path)
        self.header = header
        if fresh or not os.path.exists(self.path):
            with open(self.path, "w", newline="", encoding="utf-8") as f:
                csv.writer(f, lineterminator="\n").writerow(header)
        else:
            with open(self.path, newline="", encoding="utf-8") as f:
                first = next(csv.reader(f), None)
            if first != header:
                raise ValueError(f"{self.path} has header {first}, expected {header}")

    def append(self, rows: list[dict]) -> None:
        for r in rows:
            unknown = set(r) - set(self.header)
            if unknown:
                raise KeyError(f"unknown report columns {sorted(unknown)}")
        with open(self.path, "a", newline="", encoding="utf-8") as f:
            w = csv.writer(f, lineterminator="\n")
            for r in rows:
                w.writerow([_fmt(r.get(k)) for k in self.header])

    def read(self) -> list[dict]:
        with open(self.path, newline="", encoding="utf-8") as f:
            return list(csv.DictReader(f))
