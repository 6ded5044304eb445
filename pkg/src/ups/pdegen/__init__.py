from .container import (
    FAMILIES,
    ContainerError,
    TrajectorySet,
    read_header,
    read_trajectories,
    write_trajectories,
)
from .families import FAMILY_SPECS, FamilySpec, generate_family
from .ic import periodic_grid, sample_ic_grf, sample_ic_sinusoid, sinusoid, to_interval
from .solvers import (
    SolverError,
    retardation,
    solve_advection,
    solve_burgers,
    solve_diffusion_sorption,
    solve_reaction_diffusion_1d,
    solve_reaction_diffusion_2d,
    solve_shallow_water,
)

__all__ = [
    "FAMILIES", "FAMILY_SPECS", "ContainerError", "FamilySpec", "SolverError", "TrajectorySet",
    "generate_family", "periodic_grid", "read_header", "read_trajectories", "retardation",
    "sample_ic_grf", "sample_ic_sinusoid", "sinusoid", "solve_advection", "solve_burgers",
    "solve_diffusion_sorption", "solve_reaction_diffusion_1d", "solve_reaction_diffusion_2d",
    "solve_shallow_water", "to_interval", "write_trajectories",
]
