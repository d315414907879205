"""Lower-bound Q-function approximations as a pointwise max of cuts.

A cut stores only a terminal linear functional nu and a constant c; its
quadratic part is the shared discounted stage-cost sum, so the value of
cut i along an N-step trajectory {s_0..s_{N-1}} is

    q_i = sum_t gamma^t * stage(s_t)  +  nu_i' w  +  c_i,
    w   = A x_{N-1} + B1 u_{N-1} + B2 delta_{N-1} + B3 z_{N-1},

and the approximation is max_i q_i, with cut 0 = (nu=0, c=0).

New cuts come from the Lagrangian dual of the one-step Bellman problem:
the primal appends a terminal step (x_N, u_N, delta_N, z_N) and an
epigraph variable for the shifted cut values; because all cuts share the
quadratic part, substituting

    alpha_shifted = alpha - (known stage constants) - gamma^{N-1}/2 * quad(x_N, u_N)

turns every epigraph row into a linear row, so the primal is an MIQP (not
an MIQCQP).  Cut multipliers come from the KKT point of the problem's
continuous relaxation (delta_N boxed into [0, 1]): by strong duality of
the convex QP those multipliers maximize the dual, so the new cut equals
the relaxation optimum at its birth trajectory.  Multipliers of the QP
with delta_N merely fixed at the integer optimum are dual-feasible too,
but nothing forces the delta stationarity signs, and the separable inner
infimum xi can then fall far below the attained value, yielding cuts that
are valid yet too weak to improve the approximation.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import (ConfigError, CutDegenerateError, DeadEndError,
                     DimensionError, InfeasibleError, SolverError)
from .mld import (MldSystem, StageCost, StepTuple, Trajectory,
                  check_trajectory, terminal_state, trajectory_cost)
from .miqp import MiqpProblem, relaxation, solve_miqp
from .qp import QpProblem, Status, solve_qp

TOL_XI = 1e-6
TOL_DEN = 1e-9
TOL_SIMPLEX = 1e-8


@dataclass(frozen=True)
class Cut:
    """One lower-bounding function, represented by (nu, c) only."""

    nu: np.ndarray
    c: float
    id: int = 0
    birth: dict = None

    def __post_init__(self):
        nu = np.array(self.nu, dtype=float).reshape(-1)
        nu.setflags(write=False)
        object.__setattr__(self, "nu", nu)
        object.__setattr__(self, "c", float(self.c))


@dataclass
class QApprox:
    """Pointwise max of cuts over N-step trajectories of one system."""

    sys: MldSystem
    cost: StageCost
    N: int
    cuts: list = field(default_factory=list)

    def __post_init__(self):
        if self.N < 1:
            raise DimensionError(f"horizon N must be >= 1, got {self.N}")
        if not self.cuts:
            self.cuts = [Cut(nu=np.zeros(self.sys.n), c=0.0, id=0)]
        c0 = self.cuts[0]
        if c0.c != 0.0 or np.any(c0.nu != 0.0):
            raise ConfigError("cut 0 must be (nu=0, c=0)")

    @property
    def n_cuts(self):
        return len(self.cuts)

    def nu_stack(self):
        return np.array([c.nu for c in self.cuts])

    def c_stack(self):
        return np.array([c.c for c in self.cuts])

    def add_cut(self, cut: Cut):
        """Append a cut (the single mutation point; do not call while a
        training sweep is reading this object)."""
        if cut.nu.shape[0] != self.sys.n:
            raise DimensionError("cut nu has wrong dimension")
        self.cuts.append(cut)


@dataclass(frozen=True)
class DualTriplet:
    """Multipliers (nu, mu, lambda) of the Bellman primal at some trajectory."""

    nu: np.ndarray
    mu: np.ndarray
    lam: np.ndarray

    def __post_init__(self):
        for name in ("nu", "mu", "lam"):
            v = np.array(getattr(self, name), dtype=float).reshape(-1)
            v.setflags(write=False)
            object.__setattr__(self, name, v)

    def check(self, gamma, tol=TOL_SIMPLEX):
        if np.min(self.mu, initial=0.0) < -tol:
            raise SolverError(f"mu has negative entries below -{tol}")
        if np.min(self.lam, initial=0.0) < -tol:
            raise SolverError(f"lambda has negative entries below -{tol}")
        gap = abs(float(np.sum(self.lam)) - gamma)
        if gap > tol:
            raise SolverError(f"lambda simplex constraint violated by {gap:.3e}")


def new_qapprox(sys: MldSystem, cost: StageCost, N: int) -> QApprox:
    return QApprox(sys=sys, cost=cost, N=N)


def eval_qapprox(q: QApprox, traj: Trajectory, tol_feas=1e-6):
    """Value of the approximation along a feasible trajectory.

    Returns (value, active_cut_id); ties pick the lowest id.
    """
    if traj.N != q.N:
        raise DimensionError(f"trajectory length {traj.N} != horizon {q.N}")
    ok, diag = check_trajectory(q.sys, traj, tol=tol_feas)
    if not ok:
        raise InfeasibleError(
            "trajectory is not feasible for the system",
            max_violation=max(max(diag["step_violations"], default=0.0),
                              max(diag["dynamics_residuals"], default=0.0)))
    q0_val = trajectory_cost(q.cost, traj)
    w = terminal_state(q.sys, traj)
    vals = q.nu_stack() @ w + q.c_stack()
    k = int(np.argmax(vals))
    return q0_val + float(vals[k]), k


@dataclass
class BellmanResult:
    """Everything the Bellman primal solve produces at one trajectory."""

    value: float          # T Q value = q0 + terminal quadratic + gamma * alpha
    s_N: StepTuple        # optimal appended step
    q0_val: float         # discounted stage sum of the input trajectory
    w: np.ndarray         # terminal affine state the cuts act on
    miqp: object          # MiqpResult, fixed-binary duals in .qp
    nodes: int


def _inner_problem(q: QApprox, w):
    """MIQP for the appended terminal step, in the shifted epigraph variable.

    Variable order: (x_N, u_N, delta_N, z_N, alpha_shifted).
    """
    sys, cost = q.sys, q.cost
    n, m, nd, nz = sys.n, sys.m, sys.n_delta, sys.n_z
    d = n + m + nd + nz + 1
    gN = cost.gamma ** q.N

    H = np.zeros((d, d))
    H[:n, :n] = gN * cost.Q
    H[n:n + m, n:n + m] = gN * cost.R
    g = np.zeros(d)
    g[:n] = -gN * (cost.Q @ cost.x_g)
    g[n:n + m] = -gN * (cost.R @ cost.u_g)
    g[-1] = cost.gamma
    const = 0.5 * gN * float(cost.x_g @ cost.Q @ cost.x_g + cost.u_g @ cost.R @ cost.u_g)

    A_eq = np.zeros((n, d))
    A_eq[:, :n] = np.eye(n)
    b_eq = np.asarray(w, dtype=float)

    n_c = sys.n_c
    nus = q.nu_stack()
    n_cuts = nus.shape[0]
    A_in = np.zeros((n_c + n_cuts, d))
    A_in[:n_c, :n] = -sys.E4
    A_in[:n_c, n:n + m] = -sys.E1
    A_in[:n_c, n + m:n + m + nd] = sys.E2
    A_in[:n_c, n + m + nd:n + m + nd + nz] = sys.E3
    b_in = np.concatenate([sys.E5, -q.c_stack()])
    A_in[n_c:, :n] = nus @ sys.A
    A_in[n_c:, n:n + m] = nus @ sys.B1
    A_in[n_c:, n + m:n + m + nd] = nus @ sys.B2
    A_in[n_c:, n + m + nd:n + m + nd + nz] = nus @ sys.B3
    A_in[n_c:, -1] = -1.0

    qp = QpProblem(H=H, g=g, A_eq=A_eq, b_eq=b_eq, A_in=A_in, b_in=b_in)
    bidx = tuple(range(n + m, n + m + nd))
    return MiqpProblem(qp=qp, binary_idx=bidx), const


def bellman_apply(q: QApprox, traj: Trajectory, gap_abs=1e-9):
    """Apply the one-step Bellman improvement at a trajectory.

    Returns a BellmanResult whose value is stage_0 + gamma * (optimal tail),
    equivalently the discounted stage sum of the input trajectory plus the
    optimally appended terminal step.
    """
    if traj.N != q.N:
        raise DimensionError(f"trajectory length {traj.N} != horizon {q.N}")
    q0_val = trajectory_cost(q.cost, traj)
    w = terminal_state(q.sys, traj)
    prob, const = _inner_problem(q, w)
    res = solve_miqp(prob, gap_abs=gap_abs)
    if res.status == Status.INFEASIBLE:
        raise DeadEndError(
            "dead-end state: no feasible terminal step exists at the "
            "trajectory endpoint", max_violation=res.qp.max_violation)
    if res.status != Status.OPTIMAL:
        raise SolverError(f"Bellman inner MIQP returned status {res.status}")
    sys = q.sys
    n, m, nd, nz = sys.n, sys.m, sys.n_delta, sys.n_z
    y = res.qp.y
    s_N = StepTuple(x=y[:n], u=y[n:n + m], delta=y[n + m:n + m + nd],
                    z=y[n + m + nd:n + m + nd + nz])
    value = q0_val + res.value + const
    return BellmanResult(value=value, s_N=s_N, q0_val=q0_val, w=w,
                         miqp=res, nodes=res.nodes)


@dataclass
class InnerRelaxation:
    """Relaxed Bellman inner solve at one trajectory (the dual operator).

    value is the dual-operator optimum: stage sum of the input trajectory
    plus the box-relaxed terminal step.  It never exceeds the MIQP value of
    bellman_apply, and the cut generated from qp's multipliers meets it
    exactly at the birth trajectory.
    """

    value: float
    q0_val: float
    w: np.ndarray
    qp: object            # SolveResult of the relaxation


def relax_inner(q: QApprox, traj: Trajectory) -> InnerRelaxation:
    """Solve the continuous relaxation of the Bellman inner problem."""
    if traj.N != q.N:
        raise DimensionError(f"trajectory length {traj.N} != horizon {q.N}")
    q0_val = trajectory_cost(q.cost, traj)
    w = terminal_state(q.sys, traj)
    prob, const = _inner_problem(q, w)
    res = solve_qp(relaxation(prob))
    if res.status == Status.INFEASIBLE:
        raise DeadEndError(
            "dead-end state: no feasible terminal step exists at the "
            "trajectory endpoint even with relaxed mode indicators",
            max_violation=res.max_violation)
    if res.status != Status.OPTIMAL:
        raise SolverError(f"Bellman inner relaxation returned status {res.status}")
    return InnerRelaxation(value=q0_val + res.value + const, q0_val=q0_val,
                           w=w, qp=res)


def extract_duals(q: QApprox, traj: Trajectory, inner: InnerRelaxation = None):
    """Multipliers of the relaxed Bellman inner problem at a trajectory.

    nu prices the terminal dynamics equality, mu the MLD rows, lam the
    epigraph rows; lam sums to gamma by stationarity in the epigraph
    variable.  The box-row multipliers on delta_N are dropped: their effect
    reappears inside xi, whose componentwise minimization reproduces the
    box-constrained infimum.  Sign convention: the equality is stored as
    +x_N = w, and nu enters the dual objective through +nu' w, so nu is
    the negated equality multiplier of the QP.

    Taking the multipliers from the relaxation rather than from the QP at
    the fixed integer optimum is what makes the cut tight at birth: the
    relaxation's KKT conditions force the delta-coefficient of xi to have
    the sign pattern that its minimizer attains.
    """
    if inner is None:
        inner = relax_inner(q, traj)
    rel = inner.qp
    n_c = q.sys.n_c
    nu = -rel.duals_eq[:q.sys.n]
    mu = np.maximum(rel.duals_in[:n_c], 0.0)
    lam = np.maximum(rel.duals_in[n_c:n_c + q.n_cuts], 0.0)
    d = DualTriplet(nu=nu, mu=mu, lam=lam)
    d.check(q.cost.gamma)
    return d, inner


def eval_xi(q: QApprox, d: DualTriplet, tol_xi=TOL_XI):
    """Closed-form inner infimum over the appended step at fixed multipliers.

    Separable in (x_N, u_N, delta_N, z_N): the z-part is linear, so the
    infimum is -inf unless its coefficient vanishes (KKT stationarity in z
    guarantees this at extracted duals, checked within tol_xi); the x- and
    u-parts are PD quadratics minimized by a linear solve; the delta-part
    is linear over {0,1}^n_delta and minimized componentwise by sign.
    """
    sys, cost = q.sys, q.cost
    nu_bar = d.lam @ q.nu_stack()
    r_z = sys.E3.T @ d.mu + sys.B3.T @ nu_bar
    if np.max(np.abs(r_z), initial=0.0) > tol_xi:
        raise CutDegenerateError(
            f"z-coefficient norm {np.max(np.abs(r_z)):.3e} exceeds {tol_xi}; "
            "xi is -inf at these multipliers")
    gN = cost.gamma ** q.N

    a_x = sys.A.T @ nu_bar - sys.E4.T @ d.mu - d.nu
    try:
        cQ = scipy.linalg.cho_factor(gN * cost.Q, check_finite=False)
        x_term = float(a_x @ cost.x_g) - 0.5 * float(
            a_x @ scipy.linalg.cho_solve(cQ, a_x, check_finite=False))
    except scipy.linalg.LinAlgError as e:
        raise ConfigError("Q is numerically singular; xi needs PD Q") from e

    a_u = sys.B1.T @ nu_bar - sys.E1.T @ d.mu
    try:
        cR = scipy.linalg.cho_factor(gN * cost.R, check_finite=False)
        u_term = float(a_u @ cost.u_g) - 0.5 * float(
            a_u @ scipy.linalg.cho_solve(cR, a_u, check_finite=False))
    except scipy.linalg.LinAlgError as e:
        raise ConfigError("R is numerically singular; xi needs PD R") from e

    a_d = sys.E2.T @ d.mu + sys.B2.T @ nu_bar
    d_term = float(np.sum(np.minimum(a_d, 0.0)))
    return x_term + u_term + d_term


def generate_cut(q: QApprox, traj: Trajectory, inner: InnerRelaxation = None,
                 birth: dict = None):
    """Build the next cut from the dual multipliers at a trajectory.

    The new cut's value at the birth trajectory equals the dual objective
    there by construction (the shared q0 and nu'w terms cancel against the
    evaluation formula), and the dual objective equals the relaxed inner
    optimum by strong duality.
    """
    d, inner = extract_duals(q, traj, inner)
    xi = eval_xi(q, d)
    c_new = float(d.lam @ q.c_stack()) - float(d.mu @ q.sys.E5) + xi
    cut = Cut(nu=d.nu.copy(), c=c_new, id=q.n_cuts, birth=birth)
    return cut, d, inner


def dual_value(q: QApprox, traj_q0: float, w, cut: Cut):
    """Dual objective at the multipliers that built `cut`, evaluated at the
    trajectory with stage sum traj_q0 and terminal affine state w."""
    return traj_q0 + float(cut.nu @ w) + cut.c


def improvement_beta(q: QApprox, traj: Trajectory, tol_den=TOL_DEN):
    """Improvement metrics (beta, beta_tilde) for adding a cut at traj.

    beta is the dual objective minus the current approximation value;
    beta_tilde normalizes by the current value (0 if the value is below
    tol_den, i.e. the point is already essentially at the goal).  beta is
    reported raw; clamping negatives is the caller's concern.
    """
    cut, d, inner = generate_cut(q, traj)
    eval_val, _ = eval_qapprox(q, traj)
    dv = dual_value(q, inner.q0_val, inner.w, cut)
    beta = dv - eval_val
    beta_tilde = beta / eval_val if eval_val > tol_den else 0.0
    return beta, beta_tilde


# ---------------------------------------------------------------------------
# Cut file IO
# ---------------------------------------------------------------------------

def save_cuts(path, q: QApprox):
    doc = {
        "N": q.N,
        "gamma": q.cost.gamma,
        "cuts": [{"nu": c.nu.tolist(), "c": c.c, "birth": c.birth or {}}
                 for c in q.cuts],
    }
    with open(path, "w") as f:
        json.dump(doc, f, indent=1)
        f.write("\n")


def load_cuts(path, sys: MldSystem, cost: StageCost) -> QApprox:
    with open(path) as f:
        try:
            doc = json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigError(f"cut file {path} is not valid JSON: {e}") from e
    for key in ("N", "gamma", "cuts"):
        if key not in doc:
            raise ConfigError(f"cut file {path} missing field '{key}'")
    if abs(doc["gamma"] - cost.gamma) > 1e-12:
        raise ConfigError(
            f"cut file gamma {doc['gamma']} does not match model gamma {cost.gamma}")
    if not doc["cuts"]:
        raise ConfigError("cut file has no cuts (cut 0 is required)")
    cuts = []
    for k, entry in enumerate(doc["cuts"]):
        nu = np.asarray(entry["nu"], dtype=float)
        if nu.shape[0] != sys.n:
            raise ConfigError(f"cut {k} nu has length {nu.shape[0]}, expected {sys.n}")
        cuts.append(Cut(nu=nu, c=float(entry["c"]), id=k, birth=entry.get("birth") or None))
    if cuts[0].c != 0.0 or np.any(cuts[0].nu != 0.0):
        raise ConfigError("cut 0 must be (nu=0, c=0)")
    return QApprox(sys=sys, cost=cost, N=int(doc["N"]), cuts=cuts)
