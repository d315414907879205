"""Learned lower-bound Q-functions and hybrid MPC for MLD systems."""

__version__ = "0.1.0"

from .mld import (  # noqa: F401
    MldSystem, StageCost, StepTuple, Trajectory,
    check_step_feasible, check_trajectory, step_dynamics, stage_cost,
    trajectory_cost, load_model, save_model,
)
from .errors import (  # noqa: F401
    QmpcError, DimensionError, ConfigError, SolverError,
    InfeasibleError, DeadEndError, CutDegenerateError, SimulationError,
)
