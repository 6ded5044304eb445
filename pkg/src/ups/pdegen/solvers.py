"""Ground-truth solvers for the generated PDE families.

Every solver accepts a single initial condition or a batch stacked on axis 0
and returns snapshots ``[T, C, *space]`` (batched: ``[B, T, C, *space]``),
where snapshot ``j`` is the state at ``t = j * dt``. Internal time steps are
picked from stability bounds and always divide the snapshot interval.
"""
from __future__ import annotations

import logging
import math

import numpy as np

log = logging.getLogger(__name__)


class SolverError(RuntimeError):
    pass


def _batched(u0: np.ndarray, space_ndim: int) -> tuple[np.ndarray, bool]:
    u0 = np.asarray(u0, dtype=np.float64)
    single = u0.ndim == space_ndim
    return (u0[None] if single else u0), single


def _finish(out: np.ndarray, single: bool) -> np.ndarray:
    if not np.all(np.isfinite(out)):
        raise SolverError("solver produced non-finite values")
    return out[0] if single else out


def _substeps(interval: float, dt_max: float) -> int:
    return max(1, math.ceil(interval / dt_max - 1e-12))


# ---------------------------------------------------------------- advection


def solve_advection(u0: np.ndarray, beta: float, T: int, dt: float) -> np.ndarray:
    """Periodic linear advection u_t + beta u_x = 0 on [0, 1) by exact
    spectral phase shift: u(t, x) = u0(x - beta t) for band-limited u0."""
    u, single = _batched(u0, 1)
    n = u.shape[-1]
    k = np.arange(n // 2 + 1)
    uh = np.fft.rfft(u, axis=-1)
    out = np.empty((u.shape[0], T, 1, n))
    for j in range(T):
        phase = np.exp(-2j * np.pi * k * beta * (j * dt))
        out[:, j, 0] = np.fft.irfft(uh * phase, n=n, axis=-1)
    return _finish(out, single)


# ---------------------------------------------------------------- Burgers


def solve_burgers(
    u0: np.ndarray, nu: float, T: int, dt: float, cfl: float = 0.4, substeps: int | None = None
) -> np.ndarray:
    """Periodic viscous Burgers u_t + (u^2/2)_x = (nu/pi) u_xx on [0, 1).

    Pseudo-spectral in space with 2/3-rule dealiasing of the quadratic term;
    diffusion is integrated exactly through an integrating factor and the
    remaining nonlinear ODE is advanced with classical RK4.
    """
    if nu <= 0:
        raise ValueError("nu must be positive")
    u, single = _batched(u0, 1)
    n = u.shape[-1]
    k = np.arange(n // 2 + 1)
    ik = 2j * np.pi * k
    keep = (k < n / 3.0).astype(np.float64)
    lin = -(nu / np.pi) * (2.0 * np.pi * k) ** 2

    if substeps is None:
        umax = max(float(np.max(np.abs(u))), 1e-12)
        substeps = _substeps(dt, cfl * (1.0 / n) / umax)
    h = dt / substeps
    e_half = np.exp(lin * h / 2.0)
    e_full = e_half * e_half

    def nonlinear(vh):
        w = np.fft.irfft(vh * keep, n=n, axis=-1)
        return -ik * keep * np.fft.rfft(0.5 * w * w, axis=-1)

    vh = np.fft.rfft(u, axis=-1)
    out = np.empty((u.shape[0], T, 1, n))
    out[:, 0, 0] = u
    for j in range(1, T):
        for _ in range(substeps):
            a = h * nonlinear(vh)
            b = h * nonlinear(e_half * (vh + a / 2.0))
            c = h * nonlinear(e_half * vh + b / 2.0)
            d = h * nonlinear(e_full * vh + e_half * c)
            vh = e_full * vh + (e_full * a + 2.0 * e_half * (b + c) + d) / 6.0
        frame = np.fft.irfft(vh, n=n, axis=-1)
        if not np.all(np.isfinite(frame)) or np.max(np.abs(frame)) > 1e6:
            raise SolverError(
                f"Burgers blow-up at snapshot {j}: |u| exceeded 1e6; "
                f"reduce the CFL number (now {cfl}) or raise substeps (now {substeps})"
            )
        out[:, j, 0] = frame
    return _finish(out, single)


# ---------------------------------------------------------------- diffusion-sorption


def retardation(u: np.ndarray, phi=0.29, rho_s=2880.0, k_f=3.5e-4, n_f=0.874, u_floor=1e-6) -> np.ndarray:
    """Freundlich retardation factor R(u); ``u`` is floored at ``u_floor``
    because R diverges at u = 0 when n_f < 1."""
    return 1.0 + ((1.0 - phi) / phi) * rho_s * k_f * n_f * np.maximum(u, u_floor) ** (n_f - 1.0)


def _thomas(lower: float, diag: np.ndarray, upper: float, rhs: np.ndarray) -> np.ndarray:
    """Batched tridiagonal solve with constant off-diagonals (last axis)."""
    n = diag.shape[-1]
    c = np.empty_like(diag)
    d = np.empty_like(rhs)
    c[..., 0] = upper / diag[..., 0]
    d[..., 0] = rhs[..., 0] / diag[..., 0]
    for i in range(1, n):
        denom = diag[..., i] - lower * c[..., i - 1]
        c[..., i] = upper / denom
        d[..., i] = (rhs[..., i] - lower * d[..., i - 1]) / denom
    x = np.empty_like(rhs)
    x[..., -1] = d[..., -1]
    for i in range(n - 2, -1, -1):
        x[..., i] = d[..., i] - c[..., i] * x[..., i + 1]
    return x


def diffusion_sorption_grid(n: int) -> np.ndarray:
    """Interior nodes of [0, 1]; Dirichlet values live at x = 0 and x = 1."""
    return np.arange(1, n + 1) / (n + 1)


def diffusion_sorption_step(u, D, h_t, boundary=(1.0, 0.0), retardation_params=None):
    """One backward-Euler diffusion step with R(u) lagged from ``u``.

    Solves ``R(u^n) (u^{n+1} - u^n) = h_t D L u^{n+1}`` where L is the
    3-point Laplacian with Dirichlet ``boundary`` values.
    ``retardation_params=False`` sets R = 1.
    """
    n = u.shape[-1]
    dx = 1.0 / (n + 1)
    r = np.ones_like(u) if retardation_params is False else retardation(u, **(retardation_params or {}))
    coef = D / dx**2
    diag = r / h_t + 2.0 * coef
    rhs = r * u / h_t
    rhs[..., 0] += coef * boundary[0]
    rhs[..., -1] += coef * boundary[1]
    return _thomas(-coef, diag, -coef, rhs), r


def solve_diffusion_sorption(
    u0: np.ndarray,
    D: float,
    retardation_params: dict | bool | None,
    T: int,
    dt: float,
    boundary: tuple[float, float] = (1.0, 0.0),
    max_dt: float = 1.0,
    eps: float = 1e-6,
) -> np.ndarray:
    """u_t = D / R(u) u_xx on (0, 1) with Dirichlet ``boundary``.

    Values leaving [-eps, 1 + eps] are clamped with a warning; more than ten
    consecutive violating steps raise :class:`SolverError`.
    """
    u, single = _batched(u0, 1)
    m = _substeps(dt, max_dt)
    h_t = dt / m
    out = np.empty((u.shape[0], T, 1, u.shape[-1]))
    out[:, 0, 0] = u
    streak = 0
    for j in range(1, T):
        for _ in range(m):
            u, _ = diffusion_sorption_step(u, D, h_t, boundary, retardation_params)
            if np.any(u < -eps) or np.any(u > 1.0 + eps):
                streak += 1
                worst = max(-u.min(), u.max() - 1.0)
                log.warning("diffusion-sorption: state left [0, 1] by %.3g, clamping", worst)
                if streak > 10:
                    raise SolverError("diffusion-sorption: state persistently outside [0, 1]")
                u = np.clip(u, 0.0, 1.0)
            else:
                streak = 0
        out[:, j, 0] = u
    return _finish(out, single)


# ---------------------------------------------------------------- reaction-diffusion 1D


def logistic_flow(u: np.ndarray, rho: float, t: float) -> np.ndarray:
    """Exact flow of u' = rho u (1 - u) over time ``t``."""
    g = math.exp(rho * t)
    return u * g / (1.0 + u * (g - 1.0))


def solve_reaction_diffusion_1d(
    u0: np.ndarray, nu: float, rho: float, T: int, dt: float, max_dt: float = 1e-3
) -> np.ndarray:
    """Periodic Fisher-KPP u_t - nu u_xx = rho u (1 - u) on [0, 1).

    Strang splitting: half logistic step (exact), full spectral heat step
    (exact), half logistic step.
    """
    u, single = _batched(u0, 1)
    n = u.shape[-1]
    m = _substeps(dt, max_dt)
    h = dt / m
    k = np.arange(n // 2 + 1)
    heat = np.exp(-nu * (2.0 * np.pi * k) ** 2 * h)
    out = np.empty((u.shape[0], T, 1, n))
    out[:, 0, 0] = u
    for j in range(1, T):
        for _ in range(m):
            u = logistic_flow(u, rho, h / 2.0)
            if nu != 0.0:
                u = np.fft.irfft(np.fft.rfft(u, axis=-1) * heat, n=n, axis=-1)
                # the exact heat semigroup preserves [0, 1]; clip transform roundoff only
                u = np.clip(u, 0.0, 1.0)
            u = logistic_flow(u, rho, h / 2.0)
        if np.any(np.isnan(u)):
            raise SolverError("reaction-diffusion 1D produced NaN")
        out[:, j, 0] = u
    return _finish(out, single)


# ---------------------------------------------------------------- reaction-diffusion 2D


def _neumann_laplacian(f: np.ndarray, dx: float) -> np.ndarray:
    p = np.pad(f, [(0, 0)] * (f.ndim - 2) + [(1, 1), (1, 1)], mode="edge")
    return (p[..., 2:, 1:-1] + p[..., :-2, 1:-1] + p[..., 1:-1, 2:] + p[..., 1:-1, :-2] - 4.0 * f) / dx**2


def rd2d_rhs(u1, u2, nu1, nu2, k, dx):
    lap1 = _neumann_laplacian(u1, dx) if nu1 else 0.0
    lap2 = _neumann_laplacian(u2, dx) if nu2 else 0.0
    return nu1 * lap1 + u1 - u1**3 - k - u2, nu2 * lap2 + u1 - u2


def solve_reaction_diffusion_2d(
    u0: np.ndarray,
    nu1: float,
    nu2: float,
    k: float,
    T: int,
    dt: float,
    length: float = 2.0,
    max_dt: float = 0.01,
) -> np.ndarray:
    """Two-species activator/inhibitor system on a square of side ``length``
    with no-flux boundaries: 5-point Laplacian on cell centres, Heun (RK2)
    time stepping. ``u0`` is ``[2, n, n]``."""
    u, single = _batched(u0, 3)
    n = u.shape[-1]
    dx = length / n
    nu_max = max(nu1, nu2)
    bound = max_dt if nu_max == 0 else min(max_dt, 0.2 * dx**2 / nu_max)
    m = _substeps(dt, bound)
    h = dt / m
    u1, u2 = u[:, 0].copy(), u[:, 1].copy()
    out = np.empty((u.shape[0], T, 2, n, n))
    out[:, 0, 0], out[:, 0, 1] = u1, u2
    for j in range(1, T):
        for _ in range(m):
            f1, f2 = rd2d_rhs(u1, u2, nu1, nu2, k, dx)
            p1, p2 = u1 + h * f1, u2 + h * f2
            g1, g2 = rd2d_rhs(p1, p2, nu1, nu2, k, dx)
            u1 = u1 + 0.5 * h * (f1 + g1)
            u2 = u2 + 0.5 * h * (f2 + g2)
        if not (np.all(np.isfinite(u1)) and np.all(np.isfinite(u2))) or max(
            np.abs(u1).max(), np.abs(u2).max()
        ) > 1e6:
            raise SolverError(f"reaction-diffusion 2D blow-up at snapshot {j}")
        out[:, j, 0], out[:, j, 1] = u1, u2
    return _finish(out, single)


# ---------------------------------------------------------------- shallow water


def _pad_ghost(q: list[np.ndarray], boundary: str) -> list[np.ndarray]:
    """One ghost layer around (h, hu, hv). Reflective walls mirror the
    adjacent cell and negate the wall-normal momentum."""
    width = [(0, 0)] * (q[0].ndim - 2) + [(1, 1), (1, 1)]
    if boundary == "periodic":
        return [np.pad(c, width, mode="wrap") for c in q]
    h, hu, hv = (np.pad(c, width, mode="edge") for c in q)
    hu[..., :, 0] *= -1.0
    hu[..., :, -1] *= -1.0
    hv[..., 0, :] *= -1.0
    hv[..., -1, :] *= -1.0
    return [h, hu, hv]


def solve_shallow_water(
    h0: np.ndarray,
    u0: np.ndarray,
    v0: np.ndarray,
    b: np.ndarray,
    g_r: float,
    T: int,
    dt: float,
    length: float = 5.0,
    boundary: str = "periodic",
    cfl: float = 0.4,
) -> np.ndarray:
    """2D shallow-water equations with bathymetry on a square of side
    ``length``: first-order Lax-Friedrichs on (h, hu, hv) with the source
    term -g_r h grad(b). Returns (h, u, v) snapshots; axis -1 is x.

    ``boundary`` is "periodic" or "reflective".
    """
    if boundary not in ("periodic", "reflective"):
        raise ValueError(f"unknown boundary {boundary!r}")
    h, single = _batched(h0, 2)
    u = _batched(u0, 2)[0]
    v = _batched(v0, 2)[0]
    if np.any(h <= 0):
        raise SolverError("shallow water: h <= 0 in the initial state (dry cells unsupported)")
    n = h.shape[-1]
    dx = length / n
    bp = np.pad(
        np.broadcast_to(np.asarray(b, dtype=np.float64), h.shape),
        [(0, 0)] * (h.ndim - 2) + [(1, 1), (1, 1)],
        mode="wrap" if boundary == "periodic" else "edge",
    )
    bx = (bp[..., 1:-1, 2:] - bp[..., 1:-1, :-2]) / (2 * dx)
    by = (bp[..., 2:, 1:-1] - bp[..., :-2, 1:-1]) / (2 * dx)

    q = [h, h * u, h * v]
    out = np.empty((h.shape[0], T, 3, n, n))
    out[:, 0] = np.stack([h, u, v], axis=1)
    for j in range(1, T):
        speed = np.max(np.sqrt(q[1] ** 2 + q[2] ** 2) / q[0] + np.sqrt(g_r * q[0]))
        m = _substeps(dt, cfl * dx / speed)
        k = dt / m
        for _ in range(m):
            hp, hup, hvp = _pad_ghost(q, boundary)
            up, vp = hup / hp, hvp / hp
            fx = [hup, hup * up + 0.5 * g_r * hp * hp, hup * vp]
            fy = [hvp, hvp * up, hvp * vp + 0.5 * g_r * hp * hp]
            new = []
            for qp, fxc, fyc in zip((hp, hup, hvp), fx, fy):
                avg = 0.25 * (qp[..., 1:-1, 2:] + qp[..., 1:-1, :-2] + qp[..., 2:, 1:-1] + qp[..., :-2, 1:-1])
                div = (fxc[..., 1:-1, 2:] - fxc[..., 1:-1, :-2]) + (fyc[..., 2:, 1:-1] - fyc[..., :-2, 1:-1])
                new.append(avg - k / (2 * dx) * div)
            new[1] = new[1] - k * g_r * q[0] * bx
            new[2] = new[2] - k * g_r * q[0] * by
            q = new
            if np.any(q[0] <= 0) or not np.all(np.isfinite(q[0])):
                raise SolverError(f"shallow water: h <= 0 reached before snapshot {j}")
        out[:, j] = np.stack([q[0], q[1] / q[0], q[2] / q[0]], axis=1)
    return _finish(out, single)
