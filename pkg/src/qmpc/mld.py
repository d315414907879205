"""Mixed logical dynamical (MLD) systems, stage costs, and trajectories.

An MLD system couples linear dynamics

    x_{t+1} = A x_t + B1 u_t + B2 delta_t + B3 z_t

with n_c linear constraints

    E2 delta_t + E3 z_t <= E4 x_t + E1 u_t + E5

where delta is a vector of binary mode indicators and z a vector of
auxiliary continuous variables.  Well-posed systems have (x, u) uniquely
determining (delta, z), which is how piecewise-affine behaviour is encoded.

This module provides the immutable data types (MldSystem, StageCost,
StepTuple, Trajectory), feasibility and dynamics helpers, and JSON
serialization for model files.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DimensionError

TOL_FEAS = 1e-6
TOL_DYN = 1e-6


def _frozen_array(a, dtype=float):
    out = np.array(a, dtype=dtype)
    out.setflags(write=False)
    return out


def _as_matrix(name, a, rows, cols):
    m = np.asarray(a, dtype=float)
    if m.shape != (rows, cols):
        raise DimensionError(f"{name} must have shape {(rows, cols)}, got {m.shape}")
    if not np.all(np.isfinite(m)):
        raise DimensionError(f"{name} contains non-finite entries")
    return m


@dataclass(frozen=True)
class MldSystem:
    """Matrices and dimensions of a well-posed MLD model.

    Dimensions (n, m, n_delta, n_z, n_c) are inferred from A, B1, B2, B3
    and the E-matrices; construction fails if they are inconsistent.
    Arrays are stored read-only so instances can be shared across workers.
    """

    A: np.ndarray
    B1: np.ndarray
    B2: np.ndarray
    B3: np.ndarray
    E1: np.ndarray
    E2: np.ndarray
    E3: np.ndarray
    E4: np.ndarray
    E5: np.ndarray

    def __post_init__(self):
        A = np.asarray(self.A, dtype=float)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise DimensionError(f"A must be square, got shape {A.shape}")
        n = A.shape[0]
        B1 = np.asarray(self.B1, dtype=float)
        B2 = np.asarray(self.B2, dtype=float)
        B3 = np.asarray(self.B3, dtype=float)
        for name, B in (("B1", B1), ("B2", B2), ("B3", B3)):
            if B.ndim != 2 or B.shape[0] != n:
                raise DimensionError(f"{name} must have {n} rows, got shape {B.shape}")
        m, n_delta, n_z = B1.shape[1], B2.shape[1], B3.shape[1]

        E5 = np.asarray(self.E5, dtype=float).reshape(-1)
        n_c = E5.shape[0]
        E1 = _as_matrix("E1", self.E1, n_c, m)
        E2 = _as_matrix("E2", self.E2, n_c, n_delta)
        E3 = _as_matrix("E3", self.E3, n_c, n_z)
        E4 = _as_matrix("E4", self.E4, n_c, n)
        for name, M in (("A", A), ("B1", B1), ("B2", B2), ("B3", B3), ("E5", E5)):
            if not np.all(np.isfinite(M)):
                raise DimensionError(f"{name} contains non-finite entries")

        for name, val in (
            ("A", A), ("B1", B1), ("B2", B2), ("B3", B3),
            ("E1", E1), ("E2", E2), ("E3", E3), ("E4", E4), ("E5", E5),
        ):
            arr = val.copy()
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def n(self):
        return self.A.shape[0]

    @property
    def m(self):
        return self.B1.shape[1]

    @property
    def n_delta(self):
        return self.B2.shape[1]

    @property
    def n_z(self):
        return self.B3.shape[1]

    @property
    def n_c(self):
        return self.E5.shape[0]


@dataclass(frozen=True)
class StageCost:
    """Discounted quadratic stage cost data.

    The quadratic weights passed in are shifted by epsilon * I at
    construction so that downstream solvers always see strictly convex
    costs.  ``Q`` and ``R`` hold the shifted matrices; the originals are
    kept in ``Q_raw`` / ``R_raw`` for exact serialization round-trips.
    """

    Q: np.ndarray
    R: np.ndarray
    x_g: np.ndarray
    u_g: np.ndarray
    gamma: float = 0.95
    epsilon: float = 1e-9
    Q_raw: np.ndarray = field(init=False, repr=False)
    R_raw: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        Q = np.asarray(self.Q, dtype=float)
        R = np.asarray(self.R, dtype=float)
        x_g = np.asarray(self.x_g, dtype=float).reshape(-1)
        u_g = np.asarray(self.u_g, dtype=float).reshape(-1)
        if Q.ndim != 2 or Q.shape[0] != Q.shape[1] or Q.shape[0] != x_g.shape[0]:
            raise DimensionError(f"Q shape {Q.shape} incompatible with x_g length {x_g.shape[0]}")
        if R.ndim != 2 or R.shape[0] != R.shape[1] or R.shape[0] != u_g.shape[0]:
            raise DimensionError(f"R shape {R.shape} incompatible with u_g length {u_g.shape[0]}")
        if not (np.all(np.isfinite(Q)) and np.all(np.isfinite(R))
                and np.all(np.isfinite(x_g)) and np.all(np.isfinite(u_g))):
            raise DimensionError("cost data contains non-finite entries")
        if np.max(np.abs(Q - Q.T)) > 1e-8 * max(1.0, np.max(np.abs(Q))):
            raise DimensionError("Q must be symmetric")
        if np.max(np.abs(R - R.T)) > 1e-8 * max(1.0, np.max(np.abs(R))):
            raise DimensionError("R must be symmetric")
        if not (0.0 < self.gamma <= 1.0):
            raise ConfigError(f"gamma must lie in (0, 1], got {self.gamma}")
        if self.epsilon <= 0.0:
            raise ConfigError(f"epsilon must be positive, got {self.epsilon}")

        Q_raw = 0.5 * (Q + Q.T)
        R_raw = 0.5 * (R + R.T)
        eps = float(self.epsilon)
        Q_shift = Q_raw + eps * np.eye(Q.shape[0])
        R_shift = R_raw + eps * np.eye(R.shape[0])
        # The shift only repairs semidefiniteness; a genuinely indefinite
        # input is a modelling error and is rejected here.
        if np.linalg.eigvalsh(Q_shift)[0] < 0.5 * eps:
            raise ConfigError("Q is not positive semidefinite (even after epsilon shift)")
        if np.linalg.eigvalsh(R_shift)[0] < 0.5 * eps:
            raise ConfigError("R is not positive semidefinite (even after epsilon shift)")

        object.__setattr__(self, "Q", _frozen_array(Q_shift))
        object.__setattr__(self, "R", _frozen_array(R_shift))
        object.__setattr__(self, "Q_raw", _frozen_array(Q_raw))
        object.__setattr__(self, "R_raw", _frozen_array(R_raw))
        object.__setattr__(self, "x_g", _frozen_array(x_g))
        object.__setattr__(self, "u_g", _frozen_array(u_g))
        object.__setattr__(self, "gamma", float(self.gamma))
        object.__setattr__(self, "epsilon", eps)


@dataclass(frozen=True)
class StepTuple:
    """One step s = (x, u, delta, z) of an MLD trajectory."""

    x: np.ndarray
    u: np.ndarray
    delta: np.ndarray
    z: np.ndarray

    def __post_init__(self):
        for name in ("x", "u", "delta", "z"):
            v = np.asarray(getattr(self, name), dtype=float).reshape(-1)
            if not np.all(np.isfinite(v)):
                raise DimensionError(f"step component {name} contains non-finite entries")
            object.__setattr__(self, name, _frozen_array(v))


@dataclass(frozen=True)
class Trajectory:
    """An ordered sequence of N step tuples (N >= 1)."""

    steps: tuple

    def __post_init__(self):
        steps = tuple(self.steps)
        if len(steps) < 1:
            raise DimensionError("a trajectory needs at least one step")
        if not all(isinstance(s, StepTuple) for s in steps):
            raise DimensionError("trajectory steps must be StepTuple instances")
        object.__setattr__(self, "steps", steps)

    @property
    def N(self):
        return len(self.steps)

    def __iter__(self):
        return iter(self.steps)

    def __getitem__(self, k):
        return self.steps[k]


def _check_step_dims(sys: MldSystem, s: StepTuple):
    if s.x.shape[0] != sys.n or s.u.shape[0] != sys.m \
            or s.delta.shape[0] != sys.n_delta or s.z.shape[0] != sys.n_z:
        raise DimensionError(
            f"step dims (x={s.x.shape[0]}, u={s.u.shape[0]}, delta={s.delta.shape[0]}, "
            f"z={s.z.shape[0]}) do not match system "
            f"(n={sys.n}, m={sys.m}, n_delta={sys.n_delta}, n_z={sys.n_z})")


def constraint_residuals(sys: MldSystem, s: StepTuple):
    """Per-row residuals of E2 d + E3 z - E4 x - E1 u - E5 (positive = violated)."""
    _check_step_dims(sys, s)
    return (sys.E2 @ s.delta + sys.E3 @ s.z
            - sys.E4 @ s.x - sys.E1 @ s.u - sys.E5)


def check_step_feasible(sys: MldSystem, s: StepTuple, tol=TOL_FEAS):
    """Check membership of s in S(x).

    Returns
    -------
    feasible : bool
        True iff every constraint residual is <= tol.
    max_violation : float
        Largest residual (0.0 for a system with no constraint rows).
    """
    r = constraint_residuals(sys, s)
    max_violation = float(np.max(r)) if r.size else 0.0
    return max_violation <= tol, max_violation


def step_dynamics(sys: MldSystem, s: StepTuple):
    """Successor state A x + B1 u + B2 delta + B3 z."""
    _check_step_dims(sys, s)
    return sys.A @ s.x + sys.B1 @ s.u + sys.B2 @ s.delta + sys.B3 @ s.z


def terminal_state(sys: MldSystem, traj: Trajectory):
    """State reached after the last step of the trajectory."""
    return step_dynamics(sys, traj.steps[-1])


def check_trajectory(sys: MldSystem, traj: Trajectory, tol=TOL_FEAS):
    """Verify per-step feasibility and dynamic consistency of a trajectory.

    Returns (ok, diagnostics) where diagnostics maps
    'step_violations' -> list of per-step max constraint violations and
    'dynamics_residuals' -> list of ||x_{k+1} - f(s_k)||_inf for k < N-1.
    """
    step_violations = []
    for s in traj.steps:
        _, v = check_step_feasible(sys, s, tol)
        step_violations.append(v)
    dyn_residuals = []
    for k in range(traj.N - 1):
        pred = step_dynamics(sys, traj.steps[k])
        dyn_residuals.append(float(np.max(np.abs(traj.steps[k + 1].x - pred))))
    ok = all(v <= tol for v in step_violations) and all(r <= tol for r in dyn_residuals)
    return ok, {"step_violations": step_violations, "dynamics_residuals": dyn_residuals}


def stage_cost(cost: StageCost, s: StepTuple, t=0):
    """Discounted stage cost gamma^t / 2 * (||x - x_g||_Q^2 + ||u - u_g||_R^2)."""
    dx = s.x - cost.x_g
    du = s.u - cost.u_g
    val = 0.5 * (dx @ cost.Q @ dx + du @ cost.R @ du)
    return float(cost.gamma ** t * val)


def trajectory_cost(cost: StageCost, traj: Trajectory):
    """Sum of discounted stage costs over the trajectory (the q0 value)."""
    return float(sum(stage_cost(cost, s, t) for t, s in enumerate(traj.steps)))


# ---------------------------------------------------------------------------
# JSON model files
# ---------------------------------------------------------------------------

_MODEL_FIELDS = ("A", "B1", "B2", "B3", "E1", "E2", "E3", "E4", "E5",
                 "Q", "R", "x_g", "u_g", "gamma", "epsilon")


def save_model(path, sys: MldSystem, cost: StageCost, meta=None):
    """Write a model file.  Q and R are stored unshifted; the epsilon shift
    is re-applied on load."""
    doc = {
        "A": sys.A.tolist(), "B1": sys.B1.tolist(),
        "B2": sys.B2.tolist(), "B3": sys.B3.tolist(),
        "E1": sys.E1.tolist(), "E2": sys.E2.tolist(), "E3": sys.E3.tolist(),
        "E4": sys.E4.tolist(), "E5": sys.E5.tolist(),
        "Q": cost.Q_raw.tolist(), "R": cost.R_raw.tolist(),
        "x_g": cost.x_g.tolist(), "u_g": cost.u_g.tolist(),
        "gamma": cost.gamma, "epsilon": cost.epsilon,
    }
    if meta is not None:
        doc["meta"] = meta
    with open(path, "w") as f:
        json.dump(doc, f, indent=1)
        f.write("\n")


def load_model(path):
    """Load a JSON model file, returning (MldSystem, StageCost, meta).

    Unknown top-level keys other than "meta" are rejected to catch typos;
    dimension and symmetry validation happens in the constructors.
    """
    with open(path) as f:
        try:
            doc = json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigError(f"model file {path} is not valid JSON: {e}") from e
    missing = [k for k in _MODEL_FIELDS if k not in doc]
    if missing:
        raise ConfigError(f"model file {path} missing fields: {missing}")
    unknown = [k for k in doc if k not in _MODEL_FIELDS and k != "meta"]
    if unknown:
        raise ConfigError(f"model file {path} has unknown fields: {unknown}")
    try:
        sys = MldSystem(A=doc["A"], B1=doc["B1"], B2=doc["B2"], B3=doc["B3"],
                        E1=doc["E1"], E2=doc["E2"], E3=doc["E3"],
                        E4=doc["E4"], E5=doc["E5"])
        cost = StageCost(Q=doc["Q"], R=doc["R"], x_g=doc["x_g"], u_g=doc["u_g"],
                         gamma=doc["gamma"], epsilon=doc["epsilon"])
    except (DimensionError, ConfigError) as e:
        raise ConfigError(f"model file {path} invalid: {e}") from e
    return sys, cost, doc.get("meta")
