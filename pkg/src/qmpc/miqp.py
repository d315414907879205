"""Branch-and-bound solver for QPs with binary variables.

The integer variables are the MLD mode indicators delta, so everything here
is specialized to binaries: the relaxation boxes each binary into [0, 1],
nodes substitute the fixed binaries out of the problem, and leaves are
plain convex QPs.  Search order is best-bound first with most-fractional
branching by default (ties to the lowest variable index), which makes every
search deterministic and reproducible; horizon-structured callers can opt
into earliest-index branching instead.

Node bounds are lazily evaluated: a child is queued with its parent's
relaxation value (a valid lower bound by monotonicity) and only solved
when popped, so the bound-crossing test can discard whole subtrees without
touching the QP solver.
"""

from __future__ import annotations

import heapq
import json
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, SolverError
from .qp import QpProblem, SolveResult, Status, solve_qp

INT_TOL = 1e-6


@dataclass(frozen=True)
class MiqpProblem:
    """A QpProblem payload plus the indices of its binary variables.

    The payload's inequality rows do not include the [0, 1] boxes for the
    binaries; those are appended internally when building relaxations so
    that payload row indices keep a 1:1 mapping to dual multipliers.
    """

    qp: QpProblem
    binary_idx: tuple

    def __post_init__(self):
        idx = tuple(int(j) for j in self.binary_idx)
        if len(set(idx)) != len(idx):
            raise DimensionError("binary_idx contains duplicates")
        if any(j < 0 or j >= self.qp.d for j in idx):
            raise DimensionError("binary_idx out of range")
        object.__setattr__(self, "binary_idx", idx)

    @property
    def n_binary(self):
        return len(self.binary_idx)


@dataclass
class MiqpResult:
    status: str
    qp: SolveResult
    assignment: np.ndarray
    nodes: int
    gap: float

    @property
    def value(self):
        return self.qp.value


def _node_problem(p: MiqpProblem, fixings):
    """Relaxation QP for a node: boxes on unfixed binaries, fixed binaries
    substituted out.

    Substitution (moving the fixed columns to the right-hand side) is what
    keeps node relaxations well behaved: a big-M row over an indicator
    pinned to 0 collapses to a plain bound, which the solver presolve can
    fold against its mirror row into an equality.  Pinning with equality
    rows instead leaves those near-degenerate inequality pairs in place and
    the interior-point pass stalls on them.

    Returns (qp, const, keep): the reduced problem, the objective offset
    contributed by the fixed block, and the original indices of the kept
    columns.
    """
    base = p.qp
    d = base.d
    free = [j for j in p.binary_idx if j not in fixings]
    if not fixings:
        keep = np.arange(d)
        H_r, g_r, const = base.H, base.g, 0.0
        A_eq_r, b_eq_r = base.A_eq, base.b_eq
        A_in_r, b_in_r = base.A_in, base.b_in
    else:
        fixed = np.array(sorted(fixings), dtype=int)
        vals = np.array([float(fixings[j]) for j in fixed])
        keep = np.array([j for j in range(d) if j not in fixings], dtype=int)
        H_r = base.H[np.ix_(keep, keep)]
        g_r = base.g[keep] + base.H[np.ix_(keep, fixed)] @ vals
        const = float(0.5 * vals @ base.H[np.ix_(fixed, fixed)] @ vals
                      + base.g[fixed] @ vals)
        A_eq_r = base.A_eq[:, keep] if base.p else _empty_rows(base.p, keep.size)
        b_eq_r = base.b_eq - (base.A_eq[:, fixed] @ vals if base.p else 0.0)
        A_in_r = base.A_in[:, keep] if base.q else _empty_rows(base.q, keep.size)
        b_in_r = base.b_in - (base.A_in[:, fixed] @ vals if base.q else 0.0)
    pos = {j: k for k, j in enumerate(keep)}
    box_rows = np.zeros((2 * len(free), keep.size))
    box_rhs = np.zeros(2 * len(free))
    for k, j in enumerate(free):
        box_rows[2 * k, pos[j]] = 1.0     # y_j <= 1
        box_rhs[2 * k] = 1.0
        box_rows[2 * k + 1, pos[j]] = -1.0  # y_j >= 0
    qp = QpProblem(
        H=H_r, g=g_r, A_eq=A_eq_r, b_eq=b_eq_r,
        A_in=np.vstack([A_in_r, box_rows]) if A_in_r.shape[0] else box_rows,
        b_in=np.concatenate([b_in_r, box_rhs]),
    )
    return qp, const, keep


def _empty_rows(n, d):
    return np.zeros((n, d))


def relaxation(p: MiqpProblem) -> QpProblem:
    """Continuous relaxation of the instance: every binary boxed into [0, 1].

    The payload rows come first and unchanged, with the box rows appended
    after them, so duals_in of a solve keeps the 1:1 mapping to the payload
    inequality rows (box multipliers trail at the end).
    """
    qp, _, _ = _node_problem(p, {})
    return qp


def _solve_node(p: MiqpProblem, fixings):
    """Solve a node relaxation; lift value and point back to full indexing.

    Returns (status, value, y_full) with binaries at their fixed values in
    y_full.  value is NaN unless the solve produced one.
    """
    base = p.qp
    if len(fixings) == base.d:
        # Every variable fixed: the node is a point, judged by feasibility.
        y_full = np.zeros(base.d)
        for j, v in fixings.items():
            y_full[j] = float(v)
        r_eq = np.max(np.abs(base.A_eq @ y_full - base.b_eq), initial=0.0)
        r_in = np.max(base.A_in @ y_full - base.b_in, initial=0.0)
        tol = 1e-8 * (1.0 + np.max(np.abs(base.b_eq), initial=0.0)
                      + np.max(np.abs(base.b_in), initial=0.0))
        if max(r_eq, r_in) <= tol:
            value = float(0.5 * y_full @ base.H @ y_full + base.g @ y_full)
            return Status.OPTIMAL, value, y_full
        return Status.INFEASIBLE, np.nan, y_full
    qp, const, keep = _node_problem(p, fixings)
    res = solve_qp(qp)
    y_full = np.zeros(base.d)
    y_full[keep] = res.y
    for j, v in fixings.items():
        y_full[j] = float(v)
    value = res.value + const if np.isfinite(res.value) else res.value
    return res.status, value, y_full


def fixed_binary_duals(p: MiqpProblem, assignment, tol_kkt=1e-8):
    """Solve the convex QP with every binary held at the given 0/1 value.

    The fixed binaries are substituted out rather than pinned with equality
    rows: the payload-row multipliers are the same either way (pin rows
    would only absorb the stationarity components of the fixed columns),
    but the reduced problem stays well conditioned where the pinned one
    leaves degenerate big-M row pairs behind.  duals_in covers exactly the
    payload inequality rows and duals_eq the payload equality rows.
    """
    assignment = np.asarray(assignment, dtype=float).reshape(-1)
    if assignment.shape[0] != p.n_binary:
        raise DimensionError(
            f"assignment length {assignment.shape[0]} != {p.n_binary} binaries")
    if not np.all((assignment == 0.0) | (assignment == 1.0)):
        raise DimensionError("assignment entries must be exactly 0 or 1")
    base = p.qp
    fixings = {j: float(assignment[k]) for k, j in enumerate(p.binary_idx)}
    if len(fixings) == base.d:
        # Pure-binary problem: the assignment is the whole point and every
        # stationarity component is absorbed by the fixings, so zero
        # multipliers are valid.
        status, value, y_full = _solve_node(p, fixings)
        ok = status == Status.OPTIMAL
        return SolveResult(status=status, y=y_full,
                           value=value if ok else np.nan,
                           duals_eq=np.zeros(base.p), duals_in=np.zeros(base.q),
                           kkt_residual=0.0 if ok else np.inf)
    qp, const, keep = _node_problem(p, fixings)
    res = solve_qp(qp, tol_kkt=tol_kkt)
    if res.status != Status.OPTIMAL:
        return res
    y = np.zeros(base.d)
    y[keep] = res.y
    y[list(p.binary_idx)] = assignment
    value = float(0.5 * y @ base.H @ y + base.g @ y)
    return SolveResult(status=res.status, y=y, value=value,
                       duals_eq=res.duals_eq,
                       duals_in=res.duals_in,
                       kkt_residual=res.kkt_residual,
                       iterations=res.iterations)


def solve_miqp(p: MiqpProblem, gap_abs=1e-6, gap_rel=1e-8, node_limit=10 ** 6,
               branch_rule="most_fractional", warm_start=None):
    """Best-bound branch and bound over the binary assignments.

    branch_rule picks the branching variable among the fractional binaries:
    "most_fractional" takes the one closest to 1/2 (ties to the lowest
    index), "earliest" always takes the lowest index.  On horizon problems
    whose binaries are ordered by time step, "earliest" settles early steps
    first and is usually far cheaper; it changes the search order only,
    never the returned optimum.

    warm_start, if given, is a 0/1 pattern tried as the first incumbent
    (e.g. the previous assignment shifted one step in receding horizon use).
    When it is feasible the diving pass below is skipped.

    Returns a MiqpResult whose qp field is the fixed-binary solve at the
    winning assignment (binaries exactly 0/1) and whose gap field is the
    certified optimality gap at termination.
    """
    if branch_rule not in ("most_fractional", "earliest"):
        raise ValueError(f"unknown branch_rule {branch_rule!r}")
    nb = p.n_binary
    if nb == 0:
        res = solve_qp(p.qp)
        status = res.status
        return MiqpResult(status=status, qp=res, assignment=np.zeros(0, dtype=int),
                          nodes=1, gap=0.0 if status == Status.OPTIMAL else np.inf)

    bidx = np.array(p.binary_idx, dtype=int)
    root_status, root_value, root_y = _solve_node(p, {})
    nodes = 1
    if root_status == Status.INFEASIBLE:
        empty = SolveResult(status=Status.INFEASIBLE, y=root_y, value=np.nan,
                            duals_eq=np.zeros(p.qp.p), duals_in=np.zeros(p.qp.q),
                            kkt_residual=np.inf)
        return MiqpResult(status=Status.INFEASIBLE, qp=empty,
                          assignment=np.zeros(0, dtype=int), nodes=nodes, gap=np.inf)
    if root_status == Status.UNBOUNDED:
        raise SolverError("MIQP relaxation unbounded; H must be PSD with "
                          "curvature or constraints on every direction")

    incumbent = None  # (value, pattern ndarray, SolveResult or None)

    def try_pattern(pattern):
        nonlocal incumbent
        res = fixed_binary_duals(p, pattern)
        if res.status != Status.OPTIMAL:
            return False
        if incumbent is None or res.value < incumbent[0]:
            incumbent = (res.value, pattern.copy(), res)
        return True

    if warm_start is not None:
        ws = np.asarray(warm_start, dtype=float).reshape(-1)
        if ws.shape[0] != nb:
            raise DimensionError(
                f"warm_start length {ws.shape[0]} != {nb} binaries")
        try_pattern(np.round(np.clip(ws, 0.0, 1.0)))
        nodes += 1

    if incumbent is None:
        # Seed the incumbent by diving: fix the most-fractional binary to its
        # rounded value and re-solve until integral.  A good incumbent up
        # front is what lets the bound test prune when relaxation bounds are
        # flat (typical with big-M rows).
        dive_fix = {}
        dive_y = root_y
        while True:
            vals = dive_y[bidx]
            frac = np.minimum(np.abs(vals), np.abs(1.0 - vals))
            frac[[k for k, j in enumerate(p.binary_idx) if j in dive_fix]] = 0.0
            if np.max(frac) <= INT_TOL:
                try_pattern(np.round(np.clip(vals, 0.0, 1.0)))
                break
            k_dive = int(np.argmax(frac))
            j_dive = p.binary_idx[k_dive]
            dive_fix[j_dive] = 1.0 if vals[k_dive] >= 0.5 else 0.0
            status, _, cand_y = _solve_node(p, dive_fix)
            nodes += 1
            if status != Status.OPTIMAL:
                dive_fix[j_dive] = 1.0 - dive_fix[j_dive]
                status, _, cand_y = _solve_node(p, dive_fix)
                nodes += 1
                if status != Status.OPTIMAL:
                    break
            dive_y = cand_y

    # Heap entries order by (bound, -depth, insertion): equal bounds pop
    # deepest-first, which reaches pruning leaves quickly.  A relaxation
    # that did not converge has no trustworthy value, so its bound stays
    # at the parent's.
    root_bound = root_value if root_status == Status.OPTIMAL else -np.inf
    heap = [(root_bound, 0, 0, {}, (root_status, root_value, root_y))]
    counter = 1
    hit_node_limit = False

    def threshold():
        if incumbent is None:
            return np.inf
        return incumbent[0] - max(gap_abs, gap_rel * abs(incumbent[0]))

    proven_bound = -np.inf
    while heap:
        bound, _, _, fixings, solved = heapq.heappop(heap)
        if bound >= threshold():
            # Best-bound order: every remaining node is at least this bound.
            proven_bound = bound
            heap = []
            break
        if solved is None:
            if nodes >= node_limit:
                hit_node_limit = True
                proven_bound = bound
                break
            status, value, y_full = _solve_node(p, fixings)
            nodes += 1
            if status == Status.INFEASIBLE:
                continue
            if status == Status.UNBOUNDED:
                raise SolverError("node relaxation unbounded")
        else:
            status, value, y_full = solved
        # an uncertified node value is not a valid bound; keep the parent's
        certified = status == Status.OPTIMAL
        node_bound = max(bound, value) if certified else bound
        if node_bound >= threshold():
            continue
        vals = y_full[bidx]
        frac = np.minimum(np.abs(vals), np.abs(1.0 - vals))
        frac[[k for k, j in enumerate(p.binary_idx) if j in fixings]] = 0.0
        if np.max(frac) <= INT_TOL:
            pattern = np.round(np.clip(vals, 0.0, 1.0))
            ok = try_pattern(pattern)
            if not ok and certified and (incumbent is None or value < incumbent[0]):
                # The node itself certifies this integral point; keep it as
                # the incumbent even though the dual re-solve failed, or a
                # closed node would silently drop the best solution.  The
                # infinite kkt_residual marks the missing multipliers.
                fallback = SolveResult(
                    status=Status.OPTIMAL, y=y_full.copy(), value=value,
                    duals_eq=np.zeros(p.qp.p), duals_in=np.zeros(p.qp.q),
                    kkt_residual=np.inf)
                incumbent = (value, pattern.copy(), fallback)
            if certified or len(fixings) == nb:
                continue
            # Integral point but the relaxation did not converge: branching
            # must go on or the subtree would be dropped on an uncertified
            # answer.  Aim the branch at the first unfixed binary.
            frac = np.array([0.0 if j in fixings else 0.5
                             for j in p.binary_idx])
        if branch_rule == "earliest":
            k_branch = int(np.nonzero(frac > INT_TOL)[0][0])
        else:
            k_branch = int(np.argmax(frac))
        j_branch = p.binary_idx[k_branch]
        first = 1.0 if vals[k_branch] >= 0.5 else 0.0
        for val in (first, 1.0 - first):
            child = dict(fixings)
            child[j_branch] = val
            heapq.heappush(heap, (node_bound, -len(child), counter, child, None))
            counter += 1

    if incumbent is None:
        status = Status.NODE_LIMIT if hit_node_limit else Status.INFEASIBLE
        empty = SolveResult(status=status, y=np.zeros(p.qp.d), value=np.nan,
                            duals_eq=np.zeros(p.qp.p), duals_in=np.zeros(p.qp.q),
                            kkt_residual=np.inf)
        return MiqpResult(status=status, qp=empty,
                          assignment=np.zeros(0, dtype=int), nodes=nodes, gap=np.inf)

    value, pattern, res = incumbent
    if not np.isfinite(res.kkt_residual):
        # Incumbent kept from a certified node whose dual re-solve failed;
        # one more attempt at proper multipliers before returning without.
        retry = fixed_binary_duals(p, pattern)
        if retry.status == Status.OPTIMAL:
            res = retry
    if hit_node_limit:
        gap = value - proven_bound if np.isfinite(proven_bound) else np.inf
        status = Status.NODE_LIMIT
    else:
        remaining = min((e[0] for e in heap), default=np.inf)
        lower = min(remaining, proven_bound) if np.isfinite(proven_bound) else remaining
        gap = max(0.0, value - lower) if np.isfinite(lower) else 0.0
        status = Status.OPTIMAL
    return MiqpResult(status=status, qp=res,
                      assignment=pattern.astype(int), nodes=nodes, gap=float(gap))


def enumerate_miqp(p: MiqpProblem):
    """Exhaustive reference solve: try every binary pattern, keep the best.

    Exponential in the binary count; used by tests and small sanity checks.
    """
    nb = p.n_binary
    best = None
    best_pattern = None
    for bits in range(2 ** nb):
        pattern = np.array([(bits >> k) & 1 for k in range(nb)], dtype=float)
        res = fixed_binary_duals(p, pattern)
        if res.status == Status.OPTIMAL and (best is None or res.value < best.value):
            best = res
            best_pattern = pattern
    return best, best_pattern


def dump_instance(p: MiqpProblem, path):
    """Write the instance as JSON for offline debugging."""
    doc = {
        "H": p.qp.H.tolist(), "g": p.qp.g.tolist(),
        "A_eq": p.qp.A_eq.tolist(), "b_eq": p.qp.b_eq.tolist(),
        "A_in": p.qp.A_in.tolist(), "b_in": p.qp.b_in.tolist(),
        "binary_idx": list(p.binary_idx),
    }
    with open(path, "w") as f:
        json.dump(doc, f)
        f.write("\n")


def load_instance(path):
    with open(path) as f:
        doc = json.load(f)
    qp = QpProblem(H=doc["H"], g=doc["g"], A_eq=doc["A_eq"], b_eq=doc["b_eq"],
                   A_in=doc["A_in"], b_in=doc["b_in"])
    return MiqpProblem(qp=qp, binary_idx=tuple(doc["binary_idx"]))
