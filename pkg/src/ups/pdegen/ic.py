"""Initial-condition samplers.

Sampled parameters (wavenumbers, amplitudes, phases) are drawn before the grid
is touched, so one seed describes the same continuous field at any resolution.
"""
from __future__ import annotations

import numpy as np

from ..gradkit.fft import is_power_of_two


def periodic_grid(n: int, lo: float = 0.0, hi: float = 1.0) -> np.ndarray:
    """Left-endpoint periodic grid; grids at n and 2n are nested."""
    return lo + (hi - lo) * np.arange(n) / n


def sinusoid(x: np.ndarray, amplitudes, wavenumbers, phases) -> np.ndarray:
    """sum_j A_j sin(2 pi k_j x + phi_j) evaluated on ``x`` (any shape)."""
    x = np.asarray(x, dtype=np.float64)
    out = np.zeros_like(x)
    for a, k, p in zip(amplitudes, wavenumbers, phases):
        out += a * np.sin(2.0 * np.pi * k * x + p)
    return out


def sample_ic_sinusoid(
    seed,
    n: int,
    num_modes: int = 2,
    amplitude_range: tuple[float, float] = (0.1, 1.0),
    max_wavenumber: int = 4,
    dim: int = 1,
) -> np.ndarray:
    """Random superposition of periodic sine waves on the unit interval/square.

    The sum is scaled by ``amp / sum|A_j|`` with ``amp`` uniform in
    ``amplitude_range``, which bounds the peak without looking at the grid.
    Returns shape ``(n,)`` or ``(n, n)``.
    """
    if num_modes < 1:
        raise ValueError("num_modes must be >= 1")
    rng = np.random.default_rng(seed)
    amps = rng.uniform(0.0, 1.0, num_modes)
    ks = rng.integers(1, max_wavenumber + 1, size=(num_modes, dim))
    phases = rng.uniform(0.0, 2.0 * np.pi, num_modes)
    amp = rng.uniform(*amplitude_range)
    x = periodic_grid(n)
    if dim == 1:
        field = sinusoid(x, amps, ks[:, 0], phases)
    elif dim == 2:
        yy, xx = np.meshgrid(x, x, indexing="ij")
        field = np.zeros((n, n))
        for a, (kx, ky), p in zip(amps, ks, phases):
            field += a * np.sin(2.0 * np.pi * (kx * xx + ky * yy) + p)
    else:
        raise ValueError(f"dim must be 1 or 2, got {dim}")
    return field * (amp / np.sum(np.abs(amps)))


def to_interval(field: np.ndarray, lo: float, hi: float) -> np.ndarray:
    """Affine map of a field's range onto [lo, hi]."""
    fmin, fmax = field.min(), field.max()
    if fmax - fmin == 0.0:
        return np.full_like(field, 0.5 * (lo + hi))
    return lo + (hi - lo) * (field - fmin) / (fmax - fmin)


def sample_ic_grf(seed, n: int, length_scale: float = 0.1, standardize: bool = True) -> np.ndarray:
    """Gaussian random field on the unit square by spectral synthesis.

    White noise is filtered by ``exp(-|k|^2 l^2 / 2)`` (k in radians per unit
    length) and transformed back; the real part is standardised to zero mean
    and unit variance unless the field is constant.
    """
    if not is_power_of_two(n):
        raise ValueError(f"n must be a power of two, got {n}")
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    k = 2.0 * np.pi * np.fft.fftfreq(n, d=1.0 / n)
    k2 = k[:, None] ** 2 + k[None, :] ** 2
    with np.errstate(over="ignore", under="ignore"):
        filt = np.exp(-0.5 * k2 * length_scale**2) if np.isfinite(length_scale) else (k2 == 0).astype(float)
    field = np.fft.ifft2(noise * filt).real
    if not standardize:
        return field
    field = field - field.mean()
    std = field.std()
    if std < 1e-12 * max(1.0, np.abs(field).max()):
        return np.zeros_like(field)
    return field / std
