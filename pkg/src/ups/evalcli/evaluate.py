"""One-step, super-resolution and rollout evaluation."""
from __future__ import annotations

import hashlib
import logging

import numpy as np

from ..gradkit.fft import is_power_of_two
from ..trainer import nrmse_per_sample
from ..unirep import FamilyData, attach_coords, denormalize, resample

log = logging.getLogger(__name__)


def params_checksum(model) -> str:
    h = hashlib.sha256()
    for k in sorted(model.params):
        h.update(k.encode())
        h.update(np.ascontiguousarray(model.params[k]).tobytes())
    return h.hexdigest()


def _stats_for(data: FamilyData, stats_by_family: dict | None) -> dict:
    if stats_by_family is None:
        if not data.stats:
            raise KeyError(f"no normalisation stats for family {data.family!r}")
        return data.stats
    if data.family not in stats_by_family:
        raise KeyError(f"no normalisation stats for family {data.family!r}")
    return stats_by_family[data.family]


def _with_stats(data: FamilyData, stats: dict) -> FamilyData:
    return FamilyData(data.family, data.dim, data.unified, data.channel_mask, stats, data.metadata, dict(data.coefficients))


def sample_nrmse(model, data: FamilyData, stats_by_family: dict | None = None, batch_size: int = 64) -> np.ndarray:
    """Per-pair nRMSE of one-step predictions, in physical units.

    ``data`` may sit on a finer grid than the model: inputs are then taken
    at every (m/n)-th point and predictions Fourier-upsampled back to m.
    """
    data = _with_stats(data, _stats_for(data, stats_by_family))
    n, m = model.cfg.n, data.n
    if m < n or m % n or not is_power_of_two(m // n):
        raise ValueError(f"test grid {m} is not a power-of-two multiple of the model grid {n}")
    pairs = data.pairs()
    valid = data.valid()
    out = []
    for s in range(0, len(pairs), batch_size):
        chunk = pairs[s : s + batch_size]
        x = np.stack([data.frames(i, np.array([t]))[0] for i, t in chunk])
        if m != n:
            x = resample(x, n, data.dim)
        if model.cfg.use_coords:
            x = attach_coords(x, data.dim)
        pred = model.predict(x, [data.metadata] * len(chunk), batch_size=batch_size)
        if m != n:
            pred = resample(pred, m, data.dim)
        pred = denormalize(pred, data.stats, data.channel_mask, data.dim)
        target = np.asarray(data.unified[chunk[:, 0], chunk[:, 1] + 1], dtype=np.float64)
        out.append(nrmse_per_sample(pred, target, valid))
    return np.concatenate(out)


def _mean_finite(v: np.ndarray, what: str) -> float:
    ok = np.isfinite(v)
    if not np.all(ok):
        log.warning("%s: %d sample(s) with zero-norm target skipped", what, int(np.sum(~ok)))
    if not np.any(ok):
        raise ValueError(f"{what}: no sample with a nonzero target")
    return float(np.mean(v[ok]))


def eval_nrmse(model, test_sets: list[FamilyData], stats_by_family: dict | None = None, batch_size: int = 64) -> dict[str, float]:
    """Mean one-step nRMSE per family over all teacher-forcing test pairs."""
    out = {}
    for data in test_sets:
        if data.n != model.cfg.n:
            raise ValueError(f"{data.family}: test grid {data.n} differs from model grid {model.cfg.n}; use eval_superres")
        out[data.family] = _mean_finite(sample_nrmse(model, data, stats_by_family, batch_size), data.family)
    return out


def eval_superres(model, hires: FamilyData, stats_by_family: dict | None = None, batch_size: int = 64) -> float:
    """Zero-shot evaluation on a finer grid; no parameters are touched."""
    return _mean_finite(sample_nrmse(model, hires, stats_by_family, batch_size), hires.family)


def rollout(model, data: FamilyData, traj: int, steps: int, stats_by_family: dict | None = None, t0: int = 0):
    """Autoregressive prediction from frame ``t0`` of one trajectory.

    Returns ``(trajectory [k, N, n, n] in physical units, ok)``. Predictions
    are masked to the valid region before being fed back. On a non-finite
    prediction the trajectory is truncated before it and ``ok`` is False.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    data = _with_stats(data, _stats_for(data, stats_by_family))
    valid = data.valid()
    x = data.frames(traj, np.array([t0]))
    frames = []
    ok = True
    for _ in range(steps):
        inp = attach_coords(x, data.dim) if model.cfg.use_coords else x
        pred = model.predict(inp, [data.metadata])
        if not np.all(np.isfinite(pred)):
            log.error("rollout: non-finite prediction after %d step(s)", len(frames))
            ok = False
            break
        x = pred * valid
        frames.append(x[0])
    if not frames:
        return np.zeros((0,) + valid.shape), ok
    traj_out = denormalize(np.stack(frames), data.stats, data.channel_mask, data.dim)
    return traj_out * valid, ok


def rollout_nrmse(model, data: FamilyData, steps: int, stats_by_family: dict | None = None) -> np.ndarray:
    """nRMSE at each rollout step ``[steps, num_traj]`` starting from frame 0;
    NaN after a failed rollout."""
    if steps > data.T - 1:
        raise ValueError(f"{steps} steps exceed the {data.T - 1} available")
    valid = data.valid()
    out = np.full((steps, data.num_traj), np.nan)
    for i in range(data.num_traj):
        pred, _ = rollout(model, data, i, steps, stats_by_family)
        truth = np.asarray(data.unified[i, 1 : 1 + len(pred)], dtype=np.float64)
        out[: len(pred), i] = nrmse_per_sample(pred, truth, valid)
    return out
