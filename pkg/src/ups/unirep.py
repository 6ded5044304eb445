"""Lift trajectory sets onto the shared N x n x n grid.

Every family is written into the same four quantity slots, with 1D fields on
row 0 of the square grid. Masks mark which slots (and rows) carry data so
losses can ignore the padding. Normalisation, teacher-forcing pairs,
coordinate channels and resolution changes live here as well.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .gradkit import graph as G
from .gradkit.fft import is_power_of_two
from .pdegen.container import TrajectorySet

QUANTITIES = ("velocity_x", "velocity_y", "pressure", "density")
N_QUANTITIES = len(QUANTITIES)
STD_FLOOR = 1e-8

DEFAULT_QUANTITY_MAPS: dict[str, dict[str, str]] = {
    "advection": {"u": "velocity_x"},
    "burgers": {"u": "velocity_x"},
    "diffusion_sorption": {"u": "velocity_x"},
    "reaction_diffusion_1d": {"u": "velocity_x"},
    "reaction_diffusion_2d": {"u1": "velocity_x", "u2": "velocity_y"},
    "shallow_water": {"u1": "velocity_x", "u2": "velocity_y", "h": "density"},
}


def quantity_map_for(ts: TrajectorySet) -> dict[str, str]:
    if ts.family in DEFAULT_QUANTITY_MAPS:
        return DEFAULT_QUANTITY_MAPS[ts.family]
    # external data names its channels after the quantities directly
    return {c: c for c in ts.channels}


def dim_mask(n: int, dim: int) -> np.ndarray:
    """[n, n] with ones where a ``dim``-dimensional field has data."""
    m = np.zeros((n, n))
    if dim == 1:
        m[0] = 1.0
    elif dim == 2:
        m[:] = 1.0
    else:
        raise ValueError(f"dim must be 1 or 2, got {dim}")
    return m


def valid_mask(channel_mask: np.ndarray, dim: int, n: int) -> np.ndarray:
    """[N, n, n] product of the channel mask and the spatial mask."""
    return np.asarray(channel_mask, dtype=np.float64)[:, None, None] * dim_mask(n, dim)[None]


# ---------------------------------------------------------------- unify


def unify(ts: TrajectorySet, quantity_map: dict[str, str] | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Returns ``(unified [num_traj, T, N, n, n], channel_mask [N])``.

    The source dtype is kept so large float32 sets are not doubled in memory.
    """
    qmap = quantity_map_for(ts) if quantity_map is None else quantity_map
    slots = {}
    for c in ts.channels:
        if c not in qmap:
            raise ValueError(f"{ts.family}: channel {c!r} has no quantity slot")
        q = qmap[c]
        if q not in QUANTITIES:
            raise ValueError(f"{ts.family}: {q!r} is not one of {QUANTITIES}")
        if q in slots.values():
            raise ValueError(f"{ts.family}: two channels map to {q!r}")
        slots[c] = q
    n = ts.n
    out = np.zeros((ts.num_traj, ts.T, N_QUANTITIES, n, n), dtype=ts.data.dtype)
    mask = np.zeros(N_QUANTITIES)
    for ci, c in enumerate(ts.channels):
        qi = QUANTITIES.index(slots[c])
        mask[qi] = 1.0
        if ts.dim == 1:
            out[:, :, qi, 0, :] = ts.data[:, :, ci]
        else:
            out[:, :, qi] = ts.data[:, :, ci]
    return out, mask


def extract(unified: np.ndarray, channels: list[str], dim: int, quantity_map: dict[str, str]) -> np.ndarray:
    """Inverse of :func:`unify` for the mapped channels."""
    parts = []
    for c in channels:
        qi = QUANTITIES.index(quantity_map[c])
        parts.append(unified[..., qi, 0, :] if dim == 1 else unified[..., qi, :, :])
    return np.stack(parts, axis=-1 - dim)


# ---------------------------------------------------------------- normalisation


def compute_stats(unified: np.ndarray, channel_mask: np.ndarray, dim: int) -> dict:
    """Per-channel mean/std over the valid region of a training split."""
    rows = slice(0, 1) if dim == 1 else slice(None)
    mean = np.zeros(N_QUANTITIES)
    std = np.ones(N_QUANTITIES)
    for q in range(N_QUANTITIES):
        if channel_mask[q]:
            vals = np.asarray(unified[:, :, q, rows, :], dtype=np.float64)
            mean[q] = vals.mean()
            std[q] = max(float(vals.std()), STD_FLOOR)
    return {"mean": mean.tolist(), "std": std.tolist()}


def _affine_valid(x, channel_mask, dim, fn):
    x = np.array(x, dtype=np.float64)
    rows = slice(0, 1) if dim == 1 else slice(None)
    for q in range(N_QUANTITIES):
        if channel_mask[q]:
            x[..., q, rows, :] = fn(x[..., q, rows, :], q)
    return x


def normalize(unified, channel_mask, dim, stats: dict | None = None):
    """Zero-mean unit-variance on active channels and valid rows; padding and
    masked channels are left untouched. Returns ``(normalized, stats)``."""
    if stats is None:
        stats = compute_stats(unified, channel_mask, dim)
    mean, std = stats["mean"], stats["std"]
    return _affine_valid(unified, channel_mask, dim, lambda v, q: (v - mean[q]) / std[q]), stats


def denormalize(x, stats: dict, channel_mask, dim) -> np.ndarray:
    mean, std = stats["mean"], stats["std"]
    return _affine_valid(x, channel_mask, dim, lambda v, q: v * std[q] + mean[q])


def save_stats(stats_by_family: dict, path: str | os.PathLike) -> None:
    """JSON layout: family -> quantity -> {mean, std}."""
    doc = {
        fam: {q: {"mean": s["mean"][i], "std": s["std"][i]} for i, q in enumerate(QUANTITIES)}
        for fam, s in stats_by_family.items()
    }
    with open(path, "w") as f:
        json.dump(doc, f, indent=1, sort_keys=True)


def load_stats(path: str | os.PathLike) -> dict:
    with open(path) as f:
        doc = json.load(f)
    return {
        fam: {"mean": [d[q]["mean"] for q in QUANTITIES], "std": [d[q]["std"] for q in QUANTITIES]}
        for fam, d in doc.items()
    }


# ---------------------------------------------------------------- pairs and coordinates


def make_pairs(num_traj: int, T: int) -> np.ndarray:
    """All teacher-forcing pairs as ``[(traj, t)]`` meaning frame t -> t+1."""
    if T < 2:
        raise ValueError(f"need at least 2 timesteps to form pairs, got T={T}")
    traj, t = np.meshgrid(np.arange(num_traj), np.arange(T - 1), indexing="ij")
    return np.stack([traj.ravel(), t.ravel()], axis=1)


def coordinate_channels(n: int, dim: int) -> np.ndarray:
    """[2, n, n]: x in [0, 1] along columns; y along rows, or zero for 1D."""
    c = np.linspace(0.0, 1.0, n)
    xs = np.broadcast_to(c[None, :], (n, n))
    ys = np.broadcast_to(c[:, None], (n, n)) if dim == 2 else np.zeros((n, n))
    return np.stack([xs, ys])


def attach_coords(x: np.ndarray, dims) -> np.ndarray:
    """[B, N, n, n] -> [B, N + 2, n, n]; ``dims`` is one int or one per sample."""
    b, _, n, _ = x.shape
    dims = np.broadcast_to(np.asarray(dims), (b,))
    coords = np.stack([coordinate_channels(n, int(d)) for d in dims])
    return np.concatenate([x, coords], axis=1)


# ---------------------------------------------------------------- resampling


def _upsample_axis(x: np.ndarray, n: int, axis: int) -> np.ndarray:
    m = x.shape[axis]
    X = np.fft.fft(x, axis=axis)
    X = np.moveaxis(X, axis, -1)
    Y = np.zeros(X.shape[:-1] + (n,), dtype=complex)
    h = m // 2
    Y[..., :h] = X[..., :h]
    Y[..., n - h + 1 :] = X[..., h + 1 :]
    # split the Nyquist bin so the interpolant stays real
    Y[..., h] = 0.5 * X[..., h]
    Y[..., n - h] += 0.5 * X[..., h]
    y = np.fft.ifft(Y, axis=-1).real * (n / m)
    return np.moveaxis(y, -1, axis)


def resample(x: np.ndarray, n: int, dim: int = 2) -> np.ndarray:
    """Change the grid of ``[..., m, m]`` to ``[..., n, n]``.

    Coarsening takes every (m/n)-th point; refining is Fourier zero-padding.
    1D data (row 0) is resampled along x only and the other rows stay zero.
    """
    x = np.asarray(x)
    m = x.shape[-1]
    if x.shape[-2] != m:
        raise ValueError(f"resample expects square grids, got {x.shape[-2:]}")
    if not (is_power_of_two(m) and is_power_of_two(n)):
        raise ValueError(f"resample needs power-of-two sizes, got {m} -> {n}")
    if m == n:
        return x.copy()
    if m > n:
        f = m // n
        if dim == 1:
            out = np.zeros(x.shape[:-2] + (n, n), dtype=x.dtype)
            out[..., 0, :] = x[..., 0, ::f]
            return out
        return x[..., ::f, ::f].copy()
    if dim == 1:
        out = np.zeros(x.shape[:-2] + (n, n))
        out[..., 0, :] = _upsample_axis(x[..., 0, :], n, -1)
        return out
    return _upsample_axis(_upsample_axis(x, n, -1), n, -2)


def resample_set(ts: TrajectorySet, n: int) -> TrajectorySet:
    """Resample every snapshot of a trajectory set to ``n`` points per axis."""
    if ts.n == n:
        return ts
    if ts.dim == 1:
        data = resample(_row0(ts.data), n, dim=1)[..., 0, :]
    else:
        data = resample(ts.data, n, dim=2)
    return TrajectorySet(
        ts.family, ts.dim, dict(ts.coefficients), list(ts.channels), data,
        list(ts.domain), list(ts.times), ts.seed, dict(ts.extra),
    )


def _row0(data: np.ndarray) -> np.ndarray:
    out = np.zeros(data.shape[:-1] + (data.shape[-1], data.shape[-1]), dtype=data.dtype)
    out[..., 0, :] = data
    return out


# ---------------------------------------------------------------- masking


def masked_select(loss_grid, channel_mask, spatial_mask):
    """Zero loss terms on inactive channels and padded rows.

    ``loss_grid`` is ``[..., N, n, n]`` as an array or a graph node;
    multiplying by the 0/1 mask also zeroes the gradient there.
    """
    mask = np.asarray(channel_mask, dtype=np.float64)[..., :, None, None] * np.asarray(spatial_mask)[..., None, :, :]
    if isinstance(loss_grid, G.Node):
        return G.mul_const(loss_grid, np.broadcast_to(mask, loss_grid.shape))
    return np.asarray(loss_grid) * mask


# ---------------------------------------------------------------- metadata and batches


def metadata_string(family: str, coefficients: dict) -> str:
    """``"<family> k1=v1 k2=v2"`` with sorted keys and 6 significant digits."""
    parts = [family] + [f"{k}={float(v):.6g}" for k, v in sorted(coefficients.items())]
    return " ".join(parts)


@dataclass
class FamilyData:
    """One family lifted, resampled to the model grid and normalised lazily."""

    family: str
    dim: int
    unified: np.ndarray  # [num_traj, T, N, n, n], source dtype
    channel_mask: np.ndarray
    stats: dict
    metadata: str
    coefficients: dict = field(default_factory=dict)

    @classmethod
    def from_set(cls, ts: TrajectorySet, n: int | None = None, stats: dict | None = None) -> "FamilyData":
        if n is not None and n != ts.n:
            ts = resample_set(ts, n)
        unified, mask = unify(ts)
        if stats is None:
            stats = compute_stats(unified, mask, ts.dim)
        return cls(ts.family, ts.dim, unified, mask, stats, metadata_string(ts.family, ts.coefficients), dict(ts.coefficients))

    @property
    def num_traj(self) -> int:
        return self.unified.shape[0]

    @property
    def T(self) -> int:
        return self.unified.shape[1]

    @property
    def n(self) -> int:
        return self.unified.shape[-1]

    def pairs(self) -> np.ndarray:
        return make_pairs(self.num_traj, self.T)

    def subset(self, traj_index) -> "FamilyData":
        return FamilyData(
            self.family, self.dim, self.unified[traj_index], self.channel_mask,
            self.stats, self.metadata, dict(self.coefficients),
        )

    def frames(self, traj, t) -> np.ndarray:
        """Normalised frames [len, N, n, n] (float64)."""
        return normalize(self.unified[traj, t], self.channel_mask, self.dim, self.stats)[0]

    def valid(self) -> np.ndarray:
        return valid_mask(self.channel_mask, self.dim, self.n)


@dataclass
class UnifiedBatch:
    inputs: np.ndarray  # [B, N + 2, n, n]
    targets: np.ndarray  # [B, N, n, n]
    valid: np.ndarray  # [B, N, n, n] channel mask x spatial mask
    channel_mask: np.ndarray  # [B, N]
    metadata: list[str]
    families: list[str]

    def __len__(self) -> int:
        return self.inputs.shape[0]


def make_batch(datasets: list[FamilyData], picks, use_coords: bool = True) -> UnifiedBatch:
    """``picks`` rows are ``(dataset_index, traj, t)``; target is frame t + 1."""
    picks = np.asarray(picks, dtype=np.int64).reshape(-1, 3)
    xs, ys, valid, cmask, meta, fams = [], [], [], [], [], []
    dims = []
    for di, traj, t in picks:
        ds = datasets[di]
        pair = ds.frames(traj, np.array([t, t + 1]))
        xs.append(pair[0])
        ys.append(pair[1])
        valid.append(ds.valid())
        cmask.append(ds.channel_mask)
        meta.append(ds.metadata)
        fams.append(ds.family)
        dims.append(ds.dim)
    x = np.stack(xs)
    if use_coords:
        x = attach_coords(x, dims)
    return UnifiedBatch(x, np.stack(ys), np.stack(valid), np.stack(cmask), meta, fams)
