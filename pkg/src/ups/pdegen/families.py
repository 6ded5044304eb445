"""Per-family defaults and batch trajectory generation."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import ic, solvers
from .container import TrajectorySet


@dataclass(frozen=True)
class FamilySpec:
    dim: int
    channels: tuple[str, ...]
    coefficients: dict = field(default_factory=dict)
    timesteps: int = 41
    t_final: float = 2.0
    domain: tuple[tuple[float, float], ...] = ((0.0, 1.0),)


# Coefficients and stored timestep counts follow the PDEBench settings the
# model is trained on; t_final values follow the stated time intervals.
FAMILY_SPECS: dict[str, FamilySpec] = {
    "advection": FamilySpec(1, ("u",), {"beta": 0.4}, 41, 2.0),
    "burgers": FamilySpec(1, ("u",), {"nu": 0.001}, 41, 2.0),
    "diffusion_sorption": FamilySpec(
        1, ("u",),
        {"D": 5e-4, "phi": 0.29, "rho_s": 2880.0, "k_f": 3.5e-4, "n_f": 0.874},
        21, 500.0,
    ),
    "reaction_diffusion_1d": FamilySpec(1, ("u",), {"nu": 0.5, "rho": 1.0}, 21, 1.0),
    "reaction_diffusion_2d": FamilySpec(
        2, ("u1", "u2"), {"nu1": 1e-3, "nu2": 5e-3, "k": 5e-3}, 101, 5.0, ((-1.0, 1.0), (-1.0, 1.0))
    ),
    "shallow_water": FamilySpec(
        2, ("h", "u1", "u2"), {"g_r": 1.0}, 101, 1.0, ((-2.5, 2.5), (-2.5, 2.5))
    ),
}


def _ic_advection(rng_seed, n):
    return ic.sample_ic_sinusoid(rng_seed, n, num_modes=2, amplitude_range=(0.1, 1.0), max_wavenumber=4)


def _ic_burgers(rng_seed, n):
    return ic.sample_ic_sinusoid(rng_seed, n, num_modes=2, amplitude_range=(0.1, 1.0), max_wavenumber=3)


def _ic_unit(rng_seed, n, lo, hi):
    return ic.to_interval(ic.sample_ic_sinusoid(rng_seed, n, num_modes=2, max_wavenumber=3), lo, hi)


def _ic_rd2d(rng_seed, n):
    return np.stack([ic.sample_ic_grf([*rng_seed, c], n, length_scale=0.1) for c in range(2)])


def _ic_shallow_water(rng_seed, n, domain):
    rng = np.random.default_rng(rng_seed)
    lo, hi = domain[0]
    dx = (hi - lo) / n
    x = lo + (np.arange(n) + 0.5) * dx
    yy, xx = np.meshgrid(x, x, indexing="ij")
    cx, cy = rng.uniform(-0.5, 0.5, 2)
    radius = rng.uniform(0.3, 0.7)
    h = np.where((xx - cx) ** 2 + (yy - cy) ** 2 < radius**2, 2.0, 1.0)
    b = np.zeros((n, n))
    for _ in range(2):
        amp, width = rng.uniform(0.0, 0.2), rng.uniform(0.3, 0.8)
        bx, by = rng.uniform(-2.0, 2.0, 2)
        b += amp * np.exp(-((xx - bx) ** 2 + (yy - by) ** 2) / (2 * width**2))
    return h, b


def _solve_one(family, s, n, coeffs, T, dt, spec):
    if family == "advection":
        return solvers.solve_advection(_ic_advection(s, n), coeffs["beta"], T, dt)
    if family == "burgers":
        return solvers.solve_burgers(_ic_burgers(s, n), coeffs["nu"], T, dt)
    if family == "diffusion_sorption":
        rparams = {k: coeffs[k] for k in ("phi", "rho_s", "k_f", "n_f")}
        return solvers.solve_diffusion_sorption(_ic_unit(s, n, 0.0, 0.2), coeffs["D"], rparams, T, dt)
    if family == "reaction_diffusion_1d":
        return solvers.solve_reaction_diffusion_1d(_ic_unit(s, n, 0.0, 1.0), coeffs["nu"], coeffs["rho"], T, dt)
    length = spec.domain[0][1] - spec.domain[0][0]
    if family == "reaction_diffusion_2d":
        return solvers.solve_reaction_diffusion_2d(
            _ic_rd2d(s, n), coeffs["nu1"], coeffs["nu2"], coeffs["k"], T, dt, length=length
        )
    if family == "shallow_water":
        h0, b = _ic_shallow_water(s, n, spec.domain)
        zeros = np.zeros_like(h0)
        return solvers.solve_shallow_water(h0, zeros, zeros, b, coeffs["g_r"], T, dt, length=length)
    raise ValueError(f"family {family!r} cannot be generated (external data is read from files)")


def generate_family(
    family: str,
    n: int,
    num_traj: int,
    seed: int,
    first_index: int = 0,
    timesteps: int | None = None,
    t_final: float | None = None,
    coefficients: dict | None = None,
) -> TrajectorySet:
    """Solve ``num_traj`` trajectories of ``family``.

    Trajectory ``i`` draws its initial condition from the seed sequence
    ``[seed, first_index + i]``, so disjoint index ranges give disjoint
    train/test splits and any trajectory can be regenerated on its own.
    """
    spec = FAMILY_SPECS[family]
    coeffs = {**spec.coefficients, **(coefficients or {})}
    T = spec.timesteps if timesteps is None else timesteps
    t_end = spec.t_final if t_final is None else t_final
    dt = t_end / (T - 1)
    seeds = [[seed, first_index + i] for i in range(num_traj)]

    # one solver call per trajectory: adaptive internal steps (Burgers CFL,
    # shallow-water wave speed) must not depend on the rest of the batch
    data = np.stack([_solve_one(family, s, n, coeffs, T, dt, spec) for s in seeds])

    return TrajectorySet(
        family=family,
        dim=spec.dim,
        coefficients=coeffs,
        channels=list(spec.channels),
        data=data,
        domain=list(spec.domain) * (spec.dim if len(spec.domain) == 1 else 1),
        times=[j * dt for j in range(T)],
        seed=seed,
        extra={"first_index": first_index},
    )
