"""Receding-horizon policies: greedy w.r.t. a cut approximation, and
hybrid MPC with an optional LQR terminal cost.

Both solve one MIQP over an N-step trajectory from a fixed initial state.
The greedy policy minimizes the discounted stage sum plus an epigraph
variable over the cut values at the terminal affine state; because cut 0
is identically zero, the epigraph variable is also bounded below by zero,
which makes the minimized objective exactly the pointwise-max
approximation evaluated at the optimal trajectory.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .cuts import QApprox
from .errors import (ConfigError, DimensionError, InfeasibleError,
                     SimulationError, SolverError)
from .mld import (MldSystem, StageCost, StepTuple, Trajectory, stage_cost,
                  step_dynamics)
from .miqp import MiqpProblem, solve_miqp
from .qp import QpProblem, Status


@dataclass
class PolicyResult:
    """Outcome of one policy MIQP solve."""

    value: float            # optimal objective, constants included
    trajectory: Trajectory  # the planned N steps, x_0 included
    alpha: float            # epigraph value (greedy) or terminal quad (hmpc); 0 otherwise
    nodes: int
    status: str
    assignment: np.ndarray = None  # winning binary pattern, delta blocks in time order


def _horizon_offsets(sys: MldSystem, N: int):
    """Variable offsets for steps 0..N-1; step 0 has no x block."""
    n, m, nd, nz = sys.n, sys.m, sys.n_delta, sys.n_z
    step0 = m + nd + nz
    step = n + m + nd + nz

    def base(t):
        return 0 if t == 0 else step0 + (t - 1) * step

    def off_x(t):
        assert t >= 1
        return base(t)

    def off_u(t):
        return base(t) + (0 if t == 0 else n)

    def off_d(t):
        return base(t) + (m if t == 0 else n + m)

    def off_z(t):
        return base(t) + (m + nd if t == 0 else n + m + nd)

    d_core = step0 + (N - 1) * step
    return off_x, off_u, off_d, off_z, d_core


def _build_horizon(sys: MldSystem, cost: StageCost, N: int, x0,
                   q: QApprox = None, terminal_P=None):
    """Assemble the N-step MIQP from x0.

    Exactly one tail may be active: epigraph over the cuts of `q`, or a
    terminal quadratic with matrix `terminal_P` on an explicit extra state
    variable, or nothing.
    """
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    if x0.shape[0] != sys.n:
        raise DimensionError(f"x0 has length {x0.shape[0]}, expected {sys.n}")
    if q is not None and terminal_P is not None:
        raise ConfigError("cannot combine a cut tail with a terminal quadratic")
    n, m, nd, nz, n_c = sys.n, sys.m, sys.n_delta, sys.n_z, sys.n_c
    off_x, off_u, off_d, off_z, d_core = _horizon_offsets(sys, N)

    n_cut_rows = q.n_cuts if q is not None else 0
    d = d_core + (1 if q is not None else 0) + (n if terminal_P is not None else 0)
    a_col = d_core if q is not None else None       # epigraph variable
    xN_col = d_core if terminal_P is not None else None

    H = np.zeros((d, d))
    g = np.zeros(d)
    const = 0.5 * float((x0 - cost.x_g) @ cost.Q @ (x0 - cost.x_g))
    gQxg = cost.Q @ cost.x_g
    gRug = cost.R @ cost.u_g
    cQ = 0.5 * float(cost.x_g @ gQxg)
    cR = 0.5 * float(cost.u_g @ gRug)
    for t in range(N):
        gt = cost.gamma ** t
        ou = off_u(t)
        H[ou:ou + m, ou:ou + m] += gt * cost.R
        g[ou:ou + m] += -gt * gRug
        const += gt * cR
        if t >= 1:
            ox = off_x(t)
            H[ox:ox + n, ox:ox + n] += gt * cost.Q
            g[ox:ox + n] += -gt * gQxg
            const += gt * cQ
    if q is not None:
        g[a_col] = 1.0
    if terminal_P is not None:
        gN = cost.gamma ** N
        P = np.asarray(terminal_P, dtype=float)
        H[xN_col:xN_col + n, xN_col:xN_col + n] += gN * P
        g[xN_col:xN_col + n] += -gN * (P @ cost.x_g)
        const += 0.5 * gN * float(cost.x_g @ P @ cost.x_g)

    n_eq = (N - 1) * n + (n if terminal_P is not None else 0)
    A_eq = np.zeros((n_eq, d))
    b_eq = np.zeros(n_eq)
    row = 0
    for t in range(1, N):
        r = slice(row, row + n)
        A_eq[r, off_x(t):off_x(t) + n] = np.eye(n)
        A_eq[r, off_u(t - 1):off_u(t - 1) + m] = -sys.B1
        A_eq[r, off_d(t - 1):off_d(t - 1) + nd] = -sys.B2
        A_eq[r, off_z(t - 1):off_z(t - 1) + nz] = -sys.B3
        if t == 1:
            b_eq[r] = sys.A @ x0
        else:
            A_eq[r, off_x(t - 1):off_x(t - 1) + n] = -sys.A
        row += n
    if terminal_P is not None:
        r = slice(row, row + n)
        A_eq[r, xN_col:xN_col + n] = np.eye(n)
        tl = N - 1
        A_eq[r, off_u(tl):off_u(tl) + m] = -sys.B1
        A_eq[r, off_d(tl):off_d(tl) + nd] = -sys.B2
        A_eq[r, off_z(tl):off_z(tl) + nz] = -sys.B3
        if tl == 0:
            b_eq[r] = sys.A @ x0
        else:
            A_eq[r, off_x(tl):off_x(tl) + n] = -sys.A

    A_in = np.zeros((N * n_c + n_cut_rows, d))
    b_in = np.zeros(N * n_c + n_cut_rows)
    for t in range(N):
        r = slice(t * n_c, (t + 1) * n_c)
        A_in[r, off_u(t):off_u(t) + m] = -sys.E1
        A_in[r, off_d(t):off_d(t) + nd] = sys.E2
        A_in[r, off_z(t):off_z(t) + nz] = sys.E3
        if t == 0:
            b_in[r] = sys.E5 + sys.E4 @ x0
        else:
            A_in[r, off_x(t):off_x(t) + n] = -sys.E4
            b_in[r] = sys.E5
    if q is not None:
        nus = q.nu_stack()
        r = slice(N * n_c, N * n_c + n_cut_rows)
        tl = N - 1
        A_in[r, off_u(tl):off_u(tl) + m] = nus @ sys.B1
        A_in[r, off_d(tl):off_d(tl) + nd] = nus @ sys.B2
        A_in[r, off_z(tl):off_z(tl) + nz] = nus @ sys.B3
        A_in[r, a_col] = -1.0
        if tl == 0:
            b_in[r] = -q.c_stack() - nus @ (sys.A @ x0)
        else:
            A_in[r, off_x(tl):off_x(tl) + n] = nus @ sys.A
            b_in[r] = -q.c_stack()

    bidx = tuple(j for t in range(N) for j in range(off_d(t), off_d(t) + nd))
    prob = MiqpProblem(qp=QpProblem(H=H, g=g, A_eq=A_eq, b_eq=b_eq,
                                    A_in=A_in, b_in=b_in),
                       binary_idx=bidx)
    return prob, const, (off_x, off_u, off_d, off_z), (a_col, xN_col)


def _extract_trajectory(sys: MldSystem, N: int, x0, y, offs):
    off_x, off_u, off_d, off_z = offs
    n, m, nd, nz = sys.n, sys.m, sys.n_delta, sys.n_z
    steps = []
    for t in range(N):
        x = np.asarray(x0, dtype=float) if t == 0 else y[off_x(t):off_x(t) + n]
        steps.append(StepTuple(x=x, u=y[off_u(t):off_u(t) + m],
                               delta=y[off_d(t):off_d(t) + nd],
                               z=y[off_z(t):off_z(t) + nz]))
    return Trajectory(steps=tuple(steps))


def greedy_policy(q: QApprox, x, gap_abs=1e-9, warm_start=None) -> PolicyResult:
    """Minimize the cut approximation over N-step trajectories from x.

    The returned value equals the approximation evaluated at the returned
    trajectory (the epigraph variable is tight at the active cut).  The
    horizon binaries are laid out in time order, so the search branches
    earliest-index first; warm_start seeds the incumbent (see solve_miqp).
    """
    prob, const, offs, (a_col, _) = _build_horizon(q.sys, q.cost, q.N, x, q=q)
    res = solve_miqp(prob, gap_abs=gap_abs, branch_rule="earliest",
                     warm_start=warm_start)
    if res.status == Status.INFEASIBLE:
        raise InfeasibleError(
            "no feasible trajectory from this state",
            max_violation=res.qp.max_violation)
    if res.status != Status.OPTIMAL:
        raise SolverError(f"policy MIQP returned status {res.status}")
    traj = _extract_trajectory(q.sys, q.N, x, res.qp.y, offs)
    return PolicyResult(value=res.value + const, trajectory=traj,
                        alpha=float(res.qp.y[a_col]), nodes=res.nodes,
                        status=res.status, assignment=res.assignment)


def q_lower(q: QApprox, x) -> float:
    """Lower bound on the optimal N-step value at x: the greedy optimum."""
    return greedy_policy(q, x).value


@dataclass(frozen=True)
class LqrTerminal:
    """Solution of the discounted LQR fixed point for the unconstrained
    linear part of a system."""

    P: np.ndarray
    K: np.ndarray
    residual: float


def solve_dare(A, B1, Q, R, gamma=1.0, tol=1e-8) -> LqrTerminal:
    """Discounted algebraic Riccati solution via sqrt(gamma)-scaled dynamics.

    Polishes the scipy solution with Newton steps (Kleinman iteration)
    until the fixed-point residual is below tol; raises if it cannot get
    there, in which case callers should fall back to no terminal cost.
    """
    A = np.asarray(A, dtype=float)
    B1 = np.asarray(B1, dtype=float)
    Q = np.asarray(Q, dtype=float)
    R = np.asarray(R, dtype=float)
    sg = np.sqrt(gamma)
    Ab, Bb = sg * A, sg * B1

    def residual_of(P):
        S = R + Bb.T @ P @ Bb
        M = Ab.T @ P @ Ab - P - Ab.T @ P @ Bb @ np.linalg.solve(S, Bb.T @ P @ Ab) + Q
        return float(np.max(np.abs(M)))

    try:
        P = scipy.linalg.solve_discrete_are(Ab, Bb, Q, R)
    except Exception as e:
        raise SolverError(
            "Riccati solve failed; use terminal=none as a fallback") from e
    best, best_r = P, residual_of(P)
    for _ in range(30):
        if best_r <= tol * 1e-2:
            break
        S = R + Bb.T @ P @ Bb
        K = np.linalg.solve(S, Bb.T @ P @ Ab)
        Acl = Ab - Bb @ K
        try:
            P = scipy.linalg.solve_discrete_lyapunov(Acl.T, Q + K.T @ R @ K)
        except Exception:
            break
        P = 0.5 * (P + P.T)
        r = residual_of(P)
        if r < best_r:
            best, best_r = P, r
        else:
            break
    if best_r > tol:
        raise SolverError(
            f"Riccati residual {best_r:.3e} exceeds {tol}; "
            "use terminal=none as a fallback")
    P = 0.5 * (best + best.T)
    S = R + Bb.T @ P @ Bb
    K = np.linalg.solve(S, Bb.T @ P @ Ab)
    P.setflags(write=False)
    K.setflags(write=False)
    return LqrTerminal(P=P, K=K, residual=best_r)


def hmpc_policy(sys: MldSystem, cost: StageCost, N: int, terminal, x,
                gap_abs=1e-9, warm_start=None) -> PolicyResult:
    """Hybrid MPC: stage sum over N steps, optionally plus a discounted
    terminal quadratic on an explicit end state.

    `terminal` may be None (no terminal cost), an LqrTerminal, or a PSD
    matrix.  The end state, when present, only has to satisfy the
    dynamics, not the mixed-logical constraints.
    """
    if N < 1:
        raise DimensionError(f"horizon N must be >= 1, got {N}")
    P = None
    if terminal is not None:
        P = terminal.P if isinstance(terminal, LqrTerminal) else np.asarray(terminal, dtype=float)
        if P.shape != (sys.n, sys.n):
            raise DimensionError(f"terminal matrix must be {sys.n}x{sys.n}")
    prob, const, offs, (_, xN_col) = _build_horizon(sys, cost, N, x, terminal_P=P)
    res = solve_miqp(prob, gap_abs=gap_abs, branch_rule="earliest",
                     warm_start=warm_start)
    if res.status == Status.INFEASIBLE:
        raise InfeasibleError(
            "no feasible trajectory from this state",
            max_violation=res.qp.max_violation)
    if res.status != Status.OPTIMAL:
        raise SolverError(f"policy MIQP returned status {res.status}")
    traj = _extract_trajectory(sys, N, x, res.qp.y, offs)
    alpha = 0.0
    if P is not None:
        xN = res.qp.y[xN_col:xN_col + sys.n]
        alpha = 0.5 * cost.gamma ** N * float((xN - cost.x_g) @ P @ (xN - cost.x_g))
    return PolicyResult(value=res.value + const, trajectory=traj,
                        alpha=alpha, nodes=res.nodes, status=res.status,
                        assignment=res.assignment)


@dataclass
class SimTrace:
    """Closed-loop record: one applied step per time index."""

    steps: list                 # StepTuple per time step
    stage_costs: np.ndarray     # undiscounted stage cost per step
    cum_costs: np.ndarray       # running discounted total
    total: float                # final discounted total
    converged: bool             # stopped on the small-stage rule
    T: int

    def states(self):
        return np.array([s.x for s in self.steps])


def warm_started(policy_fn, n_delta):
    """Wrap a receding-horizon policy so each call seeds the previous
    binary assignment, shifted one step with the last block repeated.

    policy_fn must accept a warm_start keyword (greedy_policy and
    hmpc_policy via functools.partial both do).  The shifted pattern is
    usually optimal or near-optimal one step later, so the search starts
    with a strong incumbent instead of diving for one.
    """
    state = {"pattern": None}

    def fn(x):
        res = policy_fn(x, warm_start=state["pattern"])
        pat = res.assignment
        if pat is not None and pat.size >= n_delta:
            state["pattern"] = np.concatenate([pat[n_delta:], pat[-n_delta:]])
        return res

    return fn


def simulate_closed_loop(policy_fn, sys: MldSystem, cost: StageCost, x0,
                         T_sim=100, stop_tol=1e-8) -> SimTrace:
    """Roll the policy forward from x0.

    Each step applies the first tuple (x, u, delta, z) of the policy's
    planned trajectory and advances through the dynamics.  Accumulates the
    discounted cost; stops early once the undiscounted stage cost stays
    below stop_tol for 5 consecutive steps (the discount would otherwise
    make the rule depend on the stopping time).  A policy failure mid-run
    raises SimulationError carrying the partial trace.
    """
    x = np.asarray(x0, dtype=float).reshape(-1)
    steps, stages, cums = [], [], []
    total = 0.0
    quiet = 0
    converged = False
    for t in range(T_sim):
        try:
            pr = policy_fn(x)
        except (InfeasibleError, SolverError) as e:
            partial = SimTrace(steps=steps, stage_costs=np.array(stages),
                               cum_costs=np.array(cums), total=total,
                               converged=False, T=t)
            raise SimulationError(
                f"policy failed at step {t}: {e}", trace=partial) from e
        s0 = pr.trajectory[0]
        steps.append(s0)
        ell = stage_cost(cost, s0, t=0)
        total += cost.gamma ** t * ell
        stages.append(ell)
        cums.append(total)
        if ell < stop_tol:
            quiet += 1
            if quiet >= 5:
                converged = True
                break
        else:
            quiet = 0
        x = step_dynamics(sys, s0)
    return SimTrace(steps=steps, stage_costs=np.array(stages),
                    cum_costs=np.array(cums), total=total,
                    converged=converged, T=len(steps))


def write_trajectory_csv(path, sys: MldSystem, trace: SimTrace):
    header = (["t"]
              + [f"x_{i}" for i in range(sys.n)]
              + [f"u_{i}" for i in range(sys.m)]
              + [f"delta_{i}" for i in range(sys.n_delta)]
              + [f"z_{i}" for i in range(sys.n_z)]
              + ["stage_cost", "cum_cost"])
    with open(path, "w", newline="") as f:
        wr = csv.writer(f)
        wr.writerow(header)
        for t, s in enumerate(trace.steps):
            vals = np.concatenate([s.x, s.u, s.delta, s.z,
                                   [trace.stage_costs[t], trace.cum_costs[t]]])
            wr.writerow([t] + [repr(float(v)) for v in vals])


def read_trajectory_csv(path):
    """Inverse of write_trajectory_csv; returns (header, float array)."""
    with open(path) as f:
        rd = csv.reader(f)
        header = next(rd)
        rows = [[float(v) for v in row] for row in rd]
    return header, np.array(rows)
