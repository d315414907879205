"""Dense convex QP solver with exact dual recovery.

Solves

    min  1/2 y' H y + g' y
    s.t. A_eq y = b_eq
         A_in y <= b_in

for symmetric positive-semidefinite H.  H only needs to be PD on the
directions the constraints leave free (epigraph variables and auxiliary
z-columns carry no curvature here), which rules out factorization-based
active-set methods that require H > 0; instead we run a Mehrotra
predictor-corrector interior-point iteration and then polish the result
with a primal-dual active-set cleanup on the unscaled data.  The polish
step is what delivers duals at ~1e-10 KKT residual, which cut generation
downstream depends on.

Infeasibility is decided by an elastic phase-1 problem

    min  t + eps_y/2 ||y||^2 + eps_t/2 t^2   s.t.  A_eq y = b_eq,
                                                   A_in y <= b_in + t

posed on row-scaled constraints (so t* is a violation of unit-norm rows);
a minimal elastic violation t* above threshold certifies infeasibility
(reporting t* as the max violation), and inconsistent equalities are
caught separately by least squares since no inequality relaxation can
repair them.  Otherwise the main iteration is retried from scratch with a
higher iteration budget.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import warnings

import numpy as np
import scipy.linalg

from .errors import DimensionError


class Status:
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"
    ITER_LIMIT = "iter_limit"
    NODE_LIMIT = "node_limit"


# Declare Optimal only below this KKT residual, per the solver contract.
OPTIMAL_RESIDUAL = 1e-6

# Declare Infeasible only above this elastic violation of the unit-norm
# constraint rows (an absolute geometric margin, not relative to rhs size).
PHASE1_TOL = 1e-6


def _empty(r, c):
    return np.zeros((r, c))


@dataclass(frozen=True)
class QpProblem:
    """Problem data; empty constraint blocks may be passed as None."""

    H: np.ndarray
    g: np.ndarray
    A_eq: np.ndarray = None
    b_eq: np.ndarray = None
    A_in: np.ndarray = None
    b_in: np.ndarray = None

    def __post_init__(self):
        H = np.asarray(self.H, dtype=float)
        g = np.asarray(self.g, dtype=float).reshape(-1)
        d = g.shape[0]
        if H.shape != (d, d):
            raise DimensionError(f"H shape {H.shape} incompatible with g length {d}")
        if np.max(np.abs(H - H.T), initial=0.0) > 1e-8 * max(1.0, np.max(np.abs(H), initial=0.0)):
            raise DimensionError("H must be symmetric")
        H = 0.5 * (H + H.T)
        A_eq = _empty(0, d) if self.A_eq is None else np.asarray(self.A_eq, dtype=float).reshape(-1, d)
        b_eq = np.zeros(0) if self.b_eq is None else np.asarray(self.b_eq, dtype=float).reshape(-1)
        A_in = _empty(0, d) if self.A_in is None else np.asarray(self.A_in, dtype=float).reshape(-1, d)
        b_in = np.zeros(0) if self.b_in is None else np.asarray(self.b_in, dtype=float).reshape(-1)
        if A_eq.shape[0] != b_eq.shape[0]:
            raise DimensionError("A_eq/b_eq row mismatch")
        if A_in.shape[0] != b_in.shape[0]:
            raise DimensionError("A_in/b_in row mismatch")
        for name, arr in (("H", H), ("g", g), ("A_eq", A_eq), ("b_eq", b_eq),
                          ("A_in", A_in), ("b_in", b_in)):
            if not np.all(np.isfinite(arr)):
                raise DimensionError(f"{name} contains non-finite entries")
            object.__setattr__(self, name, arr)

    @property
    def d(self):
        return self.g.shape[0]

    @property
    def p(self):
        return self.b_eq.shape[0]

    @property
    def q(self):
        return self.b_in.shape[0]


@dataclass
class SolveResult:
    status: str
    y: np.ndarray
    value: float
    duals_eq: np.ndarray
    duals_in: np.ndarray
    kkt_residual: float
    iterations: int = 0
    max_violation: float = None


def _objective(p, y):
    return float(0.5 * y @ p.H @ y + p.g @ y)


def kkt_residuals(p: QpProblem, y, duals_eq, duals_in):
    """(stationarity, primal infeasibility, complementarity, dual negativity)."""
    stat = p.H @ y + p.g
    if p.p:
        stat = stat + p.A_eq.T @ duals_eq
    if p.q:
        stat = stat + p.A_in.T @ duals_in
    r_stat = float(np.max(np.abs(stat), initial=0.0))
    r_p = 0.0
    if p.p:
        r_p = max(r_p, float(np.max(np.abs(p.A_eq @ y - p.b_eq))))
    comp = 0.0
    if p.q:
        slack = p.b_in - p.A_in @ y
        r_p = max(r_p, float(np.max(-slack, initial=0.0)))
        comp = float(np.max(np.abs(duals_in * slack), initial=0.0))
    r_neg = float(np.max(-duals_in, initial=0.0)) if p.q else 0.0
    return r_stat, r_p, comp, r_neg


def dual_objective(p: QpProblem, res: SolveResult):
    """Lagrangian value at (y, duals); equals the primal value at a KKT point."""
    val = _objective(p, res.y)
    if p.p:
        val += float(res.duals_eq @ (p.A_eq @ res.y - p.b_eq))
    if p.q:
        val += float(res.duals_in @ (p.A_in @ res.y - p.b_in))
    return val


def _lu(K):
    # an exactly singular pivot only warns in scipy and then poisons the
    # solve with infs; escalate it so callers treat it as a breakdown
    with warnings.catch_warnings():
        warnings.simplefilter("error", scipy.linalg.LinAlgWarning)
        return scipy.linalg.lu_factor(K, check_finite=False)


def _lu_solve(fac, rhs):
    return scipy.linalg.lu_solve(fac, rhs, check_finite=False)


def _ip_core(H, g, A_eq, b_eq, A_in, b_in, tol, max_iter):
    """Mehrotra predictor-corrector on pre-scaled data.

    Returns dict with the best iterate found and convergence/divergence flags.
    """
    d = g.shape[0]
    p = b_eq.shape[0]
    q = b_in.shape[0]
    assert q > 0

    # Starting point: regularized equality-constrained solve, slacks pushed interior.
    reg0 = 1e-8 * (1.0 + np.max(np.abs(H), initial=0.0))
    K0 = np.zeros((d + p, d + p))
    K0[:d, :d] = H + (reg0 + 1.0) * np.eye(d)
    if p:
        K0[:d, d:] = A_eq.T
        K0[d:, :d] = A_eq
        K0[d:, d:] = -reg0 * np.eye(p)
    rhs0 = np.concatenate([-g, b_eq])
    try:
        sol0 = _lu_solve(_lu(K0), rhs0)
        y = sol0[:d]
        v = sol0[d:]
    except (scipy.linalg.LinAlgError, scipy.linalg.LinAlgWarning, ValueError):
        y = np.zeros(d)
        v = np.zeros(p)
    s_hat = b_in - A_in @ y
    shift = max(0.0, -1.5 * float(np.min(s_hat))) + 1.0
    s = s_hat + shift
    z = np.ones(q)

    bnorm = 1.0 + max(np.max(np.abs(b_eq), initial=0.0), np.max(np.abs(b_in), initial=0.0))
    gnorm = 1.0 + np.max(np.abs(g), initial=0.0)
    best = None
    best_score = np.inf
    diverged = False
    converged = False
    stalled = False
    last_obj = 0.0
    eye_d = np.eye(d)

    it = 0
    for it in range(1, max_iter + 1):
        r_d = H @ y + g + A_in.T @ z
        if p:
            r_d = r_d + A_eq.T @ v
        r_p = A_eq @ y - b_eq if p else np.zeros(0)
        r_s = A_in @ y + s - b_in
        mu = float(s @ z) / q

        nrd = np.max(np.abs(r_d)) / gnorm
        nrp = max(np.max(np.abs(r_p), initial=0.0), np.max(np.abs(r_s))) / bnorm
        obj = 0.5 * y @ H @ y + g @ y
        last_obj = obj
        score = max(nrd, nrp, mu / (1.0 + abs(obj)))
        if score < best_score:
            best_score = score
            best = (y.copy(), v.copy(), z.copy(), s.copy())
        if nrd <= tol and nrp <= tol and mu <= tol * (1.0 + abs(obj)):
            converged = True
            break
        if np.max(np.abs(y)) > 1e13 or obj < -1e15:
            diverged = True
            break
        # Complementarity collapsed while primal residual is stuck: the
        # problem is (numerically) infeasible; let phase-1 decide.
        if it > 5 and mu < 1e-12 and nrp > 100.0 * tol:
            stalled = True
            break
        if (float(np.min(s)) < 1e-150 or float(np.min(z)) < 1e-150
                or float(np.max(s)) > 1e150 or float(np.max(z)) > 1e150):
            stalled = True
            break

        Dvec = z / s
        # a complementarity scaling this extreme only occurs when the pair
        # diverges along an infeasibility certificate; the Newton system is
        # numerically meaningless there, so hand over to phase-1
        if float(np.max(Dvec)) > 1e18 * (1.0 + np.max(np.abs(H), initial=0.0)):
            stalled = True
            break
        M = H + (A_in * Dvec[:, None]).T @ A_in
        dim = d + p
        K = np.zeros((dim, dim))
        K[:d, :d] = M + 1e-12 * eye_d
        if p:
            K[:d, d:] = A_eq.T
            K[d:, :d] = A_eq
            K[d:, d:] = -1e-12 * np.eye(p)
        try:
            fac = _lu(K)
        except (scipy.linalg.LinAlgError, scipy.linalg.LinAlgWarning, ValueError):
            diverged = True
            break

        def solve_direction(r_c):
            rhs = np.concatenate([-r_d + A_in.T @ ((r_c - z * r_s) / s), -r_p])
            sol = _lu_solve(fac, rhs)
            dy = sol[:d]
            dv = sol[d:]
            ds = -r_s - A_in @ dy
            dz = (-r_c - z * ds) / s
            return dy, dv, ds, dz

        # Affine (predictor) direction and adaptive centering.
        dy_a, dv_a, ds_a, dz_a = solve_direction(s * z)
        if not (np.all(np.isfinite(dy_a)) and np.all(np.isfinite(dz_a))):
            diverged = True
            break
        alpha_p = min(1.0, float(np.min(-s[ds_a < 0] / ds_a[ds_a < 0]))) if np.any(ds_a < 0) else 1.0
        alpha_d = min(1.0, float(np.min(-z[dz_a < 0] / dz_a[dz_a < 0]))) if np.any(dz_a < 0) else 1.0
        mu_aff = float((s + alpha_p * ds_a) @ (z + alpha_d * dz_a)) / q
        sigma = (mu_aff / mu) ** 3 if mu > 0 else 0.0

        # Corrector with Mehrotra's second-order term.
        r_c = s * z + ds_a * dz_a - sigma * mu
        dy, dv, ds, dz = solve_direction(r_c)
        if not (np.all(np.isfinite(dy)) and np.all(np.isfinite(dz))):
            diverged = True
            break

        tau = 0.995 if mu > 1e-10 else 0.9999
        alpha_p = min(1.0, tau * float(np.min(-s[ds < 0] / ds[ds < 0]))) if np.any(ds < 0) else 1.0
        alpha_d = min(1.0, tau * float(np.min(-z[dz < 0] / dz[dz < 0]))) if np.any(dz < 0) else 1.0
        y = y + alpha_p * dy
        s = s + alpha_p * ds
        v = v + alpha_d * dv
        z = z + alpha_d * dz
        if not np.all(np.isfinite(y)):
            diverged = True
            break

    yb, vb, zb, sb = best if best is not None else (y, v, z, s)
    return {"y": yb, "v": vb, "z": zb, "s": sb, "converged": converged,
            "diverged": diverged, "stalled": stalled, "last_obj": last_obj,
            "iterations": it}


def _active_set_polish(p: QpProblem, y, v, z, max_rounds=40):
    """Primal-dual active-set cleanup seeded from the interior-point guess.

    Solves the equality KKT system for the working set, then swaps rows in
    or out based on dual signs and primal violations until clean (or gives
    up).  Returns (y, v, z_full) or None.
    """
    d, peq, q = p.d, p.p, p.q
    if q == 0:
        return None
    slack = p.b_in - p.A_in @ y
    work = set(np.nonzero((z > slack) | (slack < 1e-10))[0].tolist())
    b_scale = 1.0 + np.max(np.abs(p.b_in), initial=0.0)
    z_scale = 1.0 + np.max(np.abs(z), initial=0.0)
    seen = set()
    delta = 1e-11 * (1.0 + np.max(np.abs(p.H), initial=0.0))

    for _ in range(max_rounds):
        key = frozenset(work)
        if key in seen:
            return None
        seen.add(key)
        W = np.array(sorted(work), dtype=int)
        w = W.shape[0]
        A_W = p.A_in[W]
        dim = d + peq + w
        K = np.zeros((dim, dim))
        K[:d, :d] = p.H + delta * np.eye(d)
        if peq:
            K[:d, d:d + peq] = p.A_eq.T
            K[d:d + peq, :d] = p.A_eq
        if w:
            K[:d, d + peq:] = A_W.T
            K[d + peq:, :d] = A_W
        K[d:, d:] -= delta * np.eye(peq + w)
        rhs = np.concatenate([-p.g, p.b_eq, p.b_in[W]])
        try:
            fac = _lu(K)
            sol = _lu_solve(fac, rhs)
            # Two refinement passes against the unregularized KKT matrix.
            K0 = K.copy()
            K0[:d, :d] = p.H
            K0[d:, d:] += delta * np.eye(peq + w)
            for _pass in range(2):
                r = rhs - K0 @ sol
                sol = sol + _lu_solve(fac, r)
        except (scipy.linalg.LinAlgError, scipy.linalg.LinAlgWarning, ValueError):
            return None
        if not np.all(np.isfinite(sol)):
            return None
        y_t = sol[:d]
        v_t = sol[d:d + peq]
        z_W = sol[d + peq:]

        viol = p.A_in @ y_t - p.b_in
        viol[W] = 0.0
        worst_row = int(np.argmax(viol)) if q else -1
        worst_viol = float(viol[worst_row]) if q else 0.0
        min_dual = float(np.min(z_W)) if w else 0.0
        if min_dual < -1e-9 * z_scale:
            work.discard(int(W[int(np.argmin(z_W))]))
            continue
        if worst_viol > 1e-9 * b_scale:
            work.add(worst_row)
            continue
        z_full = np.zeros(q)
        if w:
            z_full[W] = np.maximum(z_W, 0.0)
        return y_t, v_t, z_full
    return None


def _finish(p, y, v, z, iterations, status_if_ok=Status.OPTIMAL):
    r_stat, r_p, comp, r_neg = kkt_residuals(p, y, v, z)
    res = max(r_stat, r_p, comp, r_neg)
    status = status_if_ok if res <= OPTIMAL_RESIDUAL else Status.ITER_LIMIT
    return SolveResult(status=status, y=y, value=_objective(p, y),
                       duals_eq=v, duals_in=z, kkt_residual=res,
                       iterations=iterations)


def _solve_unconstrained(p, tol_kkt):
    H, g = p.H, p.g
    try:
        c = scipy.linalg.cho_factor(H, check_finite=False)
        y = scipy.linalg.cho_solve(c, -g, check_finite=False)
        return _finish(p, y, np.zeros(0), np.zeros(0), 0)
    except (scipy.linalg.LinAlgError, scipy.linalg.LinAlgWarning, ValueError):
        y, *_ = np.linalg.lstsq(H, -g, rcond=None)
        if np.max(np.abs(H @ y + g), initial=0.0) > tol_kkt * (1.0 + np.max(np.abs(g), initial=0.0)):
            return SolveResult(status=Status.UNBOUNDED, y=y, value=-np.inf,
                               duals_eq=np.zeros(0), duals_in=np.zeros(0),
                               kkt_residual=np.inf)
        return _finish(p, y, np.zeros(0), np.zeros(0), 0)


def _solve_equality_qp(p, tol_kkt):
    d, peq = p.d, p.p
    delta = 1e-11 * (1.0 + np.max(np.abs(p.H), initial=0.0))
    K = np.zeros((d + peq, d + peq))
    K[:d, :d] = p.H + delta * np.eye(d)
    K[:d, d:] = p.A_eq.T
    K[d:, :d] = p.A_eq
    K[d:, d:] = -delta * np.eye(peq)
    rhs = np.concatenate([-p.g, p.b_eq])
    try:
        fac = _lu(K)
        sol = _lu_solve(fac, rhs)
        K0 = K.copy()
        K0[:d, :d] = p.H
        K0[d:, d:] = np.zeros((peq, peq))
        for _ in range(2):
            sol = sol + _lu_solve(fac, rhs - K0 @ sol)
    except (scipy.linalg.LinAlgError, scipy.linalg.LinAlgWarning, ValueError):
        sol = None
    if sol is not None and np.all(np.isfinite(sol)):
        y, v = sol[:d], sol[d:]
        r_stat, r_p, *_ = kkt_residuals(p, y, v, np.zeros(0))
        if max(r_stat, r_p) <= OPTIMAL_RESIDUAL:
            return _finish(p, y, v, np.zeros(0), 1)
    # Singular or inconsistent KKT: separate "no feasible point" from
    # "objective unbounded on the feasible affine set".
    y_ls, *_ = np.linalg.lstsq(p.A_eq, p.b_eq, rcond=None)
    feas_res = float(np.max(np.abs(p.A_eq @ y_ls - p.b_eq), initial=0.0))
    if feas_res > 1e-8 * (1.0 + np.max(np.abs(p.b_eq), initial=0.0)):
        return SolveResult(status=Status.INFEASIBLE, y=y_ls, value=np.nan,
                           duals_eq=np.zeros(peq), duals_in=np.zeros(0),
                           kkt_residual=np.inf, max_violation=feas_res)
    return SolveResult(status=Status.UNBOUNDED, y=y_ls, value=-np.inf,
                       duals_eq=np.zeros(peq), duals_in=np.zeros(0),
                       kkt_residual=np.inf)


def _phase1(H, A_eq_s, b_eq_s, A_in_s, b_in_s, center=None):
    """Minimal elastic violation of the inequalities subject to the equalities.

    Expects row-scaled constraints so the violation is measured against
    unit-norm rows.  Returns (t_star, y_star) where t_star bounds the
    smallest uniform relaxation of A_in y <= b_in needed for feasibility;
    it is inf when the equalities alone are inconsistent (relaxing the
    inequalities cannot patch that).

    The tiny quadratic pull on y keeps the problem strictly convex but
    drags the solution toward `center` (origin by default), which inflates
    the reported t for feasible sets that live far from it.  Callers that
    care pass the previous solution as the center and re-solve: the
    reported t can never drop below the true minimal violation, so the
    re-centered value is sharper, not merely different.
    """
    d = A_in_s.shape[1]
    q = A_in_s.shape[0]
    pe = A_eq_s.shape[0]
    if pe:
        y_ls, *_ = np.linalg.lstsq(A_eq_s, b_eq_s, rcond=None)
        r_eq = float(np.max(np.abs(A_eq_s @ y_ls - b_eq_s), initial=0.0))
        if r_eq > 1e-6 * (1.0 + float(np.max(np.abs(b_eq_s), initial=0.0))):
            return np.inf, y_ls
    if center is None:
        eps_y = 1e-10 * (1.0 + np.max(np.abs(H), initial=0.0))
    else:
        eps_y = 1e-12 * (1.0 + np.max(np.abs(H), initial=0.0))
    H1 = np.zeros((d + 1, d + 1))
    H1[:d, :d] = eps_y * np.eye(d)
    H1[d, d] = 1e-8
    g1 = np.zeros(d + 1)
    g1[d] = 1.0
    if center is not None:
        g1[:d] = -eps_y * center
    A_eq1 = np.hstack([A_eq_s, np.zeros((pe, 1))]) if pe else _empty(0, d + 1)
    A_in1 = np.hstack([A_in_s, -np.ones((q, 1))])
    out = _ip_core(H1, g1, A_eq1, b_eq_s, A_in1, b_in_s,
                   tol=1e-9, max_iter=120)
    y1 = out["y"]
    return float(y1[d]), y1[:d]


def solve_qp(p: QpProblem, tol_kkt=1e-8, max_iter=60):
    """Solve the QP, returning primal, duals, value, and certified status.

    The result is declared Optimal only when the unscaled KKT residual
    (stationarity, feasibility, complementarity, dual sign) is at most
    1e-6; the polish step typically lands around 1e-10.
    """
    d, peq, q = p.d, p.p, p.q

    # Drop all-zero constraint rows up front (they carry no information but
    # break row scaling); a zero row with impossible rhs decides the problem.
    def _nonzero_rows(A, b, is_eq):
        if A.shape[0] == 0:
            return A, b, None, np.zeros(0, dtype=int)
        norms = np.max(np.abs(A), axis=1)
        keep = norms > 0.0
        bad = (~keep) & ((np.abs(b) > tol_kkt) if is_eq else (b < -tol_kkt))
        if np.any(bad):
            return A, b, float(np.max(np.abs(b[bad]) if is_eq else -b[bad])), None
        return A[keep], b[keep], None, np.nonzero(keep)[0]

    A_eq, b_eq, bad_eq, keep_eq = _nonzero_rows(p.A_eq, p.b_eq, True)
    A_in, b_in, bad_in, keep_in = _nonzero_rows(p.A_in, p.b_in, False)
    bad = bad_eq if bad_eq is not None else bad_in
    if bad is not None:
        return SolveResult(status=Status.INFEASIBLE, y=np.zeros(d), value=np.nan,
                           duals_eq=np.zeros(peq), duals_in=np.zeros(q),
                           kkt_residual=np.inf, max_violation=bad)

    # Inequality rows that occur together with their exact negation force an
    # equality; fold each such pair into one equality row.  Leaving them as
    # inequalities strips the feasible set of its interior, which the
    # interior-point core cannot tolerate.
    pairs, rest = _opposing_pairs(A_in, b_in)
    if pairs:
        pi = np.array([i for i, _ in pairs], dtype=int)
        A_eq = np.vstack([A_eq, A_in[pi]]) if A_eq.shape[0] else A_in[pi]
        b_eq = np.concatenate([b_eq, b_in[pi]])
        A_in, b_in = A_in[rest], b_in[rest]

    reduced = QpProblem(H=p.H, g=p.g, A_eq=A_eq, b_eq=b_eq, A_in=A_in, b_in=b_in)

    if reduced.q == 0:
        if reduced.p == 0:
            inner = _solve_unconstrained(reduced, tol_kkt)
        else:
            inner = _solve_equality_qp(reduced, tol_kkt)
    else:
        inner = _solve_general(reduced, tol_kkt, max_iter)

    # Split pair-equality duals back into a complementary nonnegative pair,
    # then re-inflate all dual vectors to the caller's row indexing.
    p_kept = keep_eq.shape[0] if keep_eq is not None else 0
    di_reduced = np.zeros(len(rest) + 2 * len(pairs))
    de_reduced = inner.duals_eq[:p_kept] if inner.duals_eq.shape[0] else inner.duals_eq
    if inner.duals_in.shape[0] == len(rest):
        di_reduced[rest] = inner.duals_in
    if inner.duals_eq.shape[0] == p_kept + len(pairs):
        for k, (i, j) in enumerate(pairs):
            v = inner.duals_eq[p_kept + k]
            di_reduced[i] = max(v, 0.0)
            di_reduced[j] = max(-v, 0.0)
    duals_eq = np.zeros(peq)
    duals_in = np.zeros(q)
    if keep_eq is not None and de_reduced.shape[0] == keep_eq.shape[0]:
        duals_eq[keep_eq] = de_reduced
    if keep_in is not None and di_reduced.shape[0] == keep_in.shape[0]:
        duals_in[keep_in] = di_reduced
    return SolveResult(status=inner.status, y=inner.y, value=inner.value,
                       duals_eq=duals_eq, duals_in=duals_in,
                       kkt_residual=inner.kkt_residual,
                       iterations=inner.iterations,
                       max_violation=inner.max_violation)


def _opposing_pairs(A_in, b_in):
    """Indices (i, j) of inequality rows that are exact negations of each
    other (coefficients and rhs), plus the indices left unpaired.

    Matching is by bytes of the sign-normalized rows, so only bit-exact
    opposites pair up; near-opposites stay plain inequalities.
    """
    qn = A_in.shape[0]
    if qn == 0:
        return [], np.zeros(0, dtype=int)
    keyed = {}
    rows = A_in + 0.0   # normalizes -0.0 so negation round-trips bytewise
    rhs = b_in + 0.0
    for i in range(qn):
        keyed.setdefault(rows[i].tobytes() + rhs[i:i + 1].tobytes(), []).append(i)
    pairs = []
    used = np.zeros(qn, dtype=bool)
    neg_rows = -rows + 0.0
    neg_rhs = -rhs + 0.0
    for i in range(qn):
        if used[i]:
            continue
        partners = keyed.get(neg_rows[i].tobytes() + neg_rhs[i:i + 1].tobytes())
        if not partners:
            continue
        j = next((jj for jj in partners if jj != i and not used[jj]), None)
        if j is None:
            continue
        used[i] = used[j] = True
        pairs.append((i, j))
    rest = np.nonzero(~used)[0]
    return pairs, rest


def _solve_general(p: QpProblem, tol_kkt, max_iter):
    d, peq, q = p.d, p.p, p.q
    # Row-scale constraints to unit infinity norm for the interior-point pass.
    se = np.max(np.abs(p.A_eq), axis=1) if peq else np.zeros(0)
    si = np.max(np.abs(p.A_in), axis=1)
    A_eq_s = p.A_eq / se[:, None] if peq else p.A_eq
    b_eq_s = p.b_eq / se if peq else p.b_eq
    A_in_s = p.A_in / si[:, None]
    b_in_s = p.b_in / si

    out = _ip_core(p.H, p.g, A_eq_s, b_eq_s, A_in_s, b_in_s,
                   tol=max(tol_kkt, 1e-9), max_iter=max_iter)
    y, v, z = out["y"], out["v"] / se if peq else out["v"], out["z"] / si

    attempt = _active_set_polish(p, y, v, z)
    if attempt is not None:
        y_t, v_t, z_t = attempt
        r = kkt_residuals(p, y_t, v_t, z_t)
        r0 = kkt_residuals(p, y, v, z)
        if max(r) <= max(r0):
            y, v, z = y_t, v_t, z_t

    candidate = _finish(p, y, v, z, out["iterations"])
    if candidate.status == Status.OPTIMAL:
        return candidate

    # Interior point did not certify optimality: decide between infeasible,
    # unbounded, and plain iteration starvation via the elastic problem.
    # Violation is judged on the scaled rows so one badly scaled row cannot
    # mask infeasibility elsewhere.  Before trusting an infeasibility
    # verdict, re-solve the elastic problem centered at its own solution
    # (up to twice): for feasible sets far from the origin the first t is
    # dominated by the regularization pull, and the re-centered passes
    # collapse it to solver noise, while for infeasible sets no centering
    # can push t below the true minimal violation.
    t_star, y1 = _phase1(p.H, A_eq_s, b_eq_s, A_in_s, b_in_s)
    for _ in range(2):
        if not (np.isfinite(t_star) and t_star > PHASE1_TOL):
            break
        t2, y2 = _phase1(p.H, A_eq_s, b_eq_s, A_in_s, b_in_s, center=y1)
        if not (np.isfinite(t2) and t2 < 0.5 * t_star):
            break
        t_star, y1 = t2, y2
    if t_star > PHASE1_TOL:
        return SolveResult(status=Status.INFEASIBLE, y=y1, value=np.nan,
                           duals_eq=np.zeros(peq), duals_in=np.zeros(q),
                           kkt_residual=np.inf, iterations=out["iterations"],
                           max_violation=t_star)
    if out["diverged"] and out["last_obj"] < -1e12:
        return SolveResult(status=Status.UNBOUNDED, y=out["y"], value=-np.inf,
                           duals_eq=np.zeros(peq), duals_in=np.zeros(q),
                           kkt_residual=np.inf, iterations=out["iterations"])

    # Feasible but unconverged: one retry with a bigger budget before giving up.
    out2 = _ip_core(p.H, p.g, A_eq_s, b_eq_s, A_in_s, b_in_s,
                    tol=max(tol_kkt, 1e-9), max_iter=3 * max_iter)
    y, v, z = out2["y"], out2["v"] / se if peq else out2["v"], out2["z"] / si
    attempt = _active_set_polish(p, y, v, z)
    if attempt is not None:
        y_t, v_t, z_t = attempt
        if max(kkt_residuals(p, y_t, v_t, z_t)) <= max(kkt_residuals(p, y, v, z)):
            y, v, z = y_t, v_t, z_t
    retry = _finish(p, y, v, z, out["iterations"] + out2["iterations"])
    if retry.status == Status.OPTIMAL:
        return retry
    if out2["diverged"] and out2["last_obj"] < -1e12:
        return SolveResult(status=Status.UNBOUNDED, y=out2["y"], value=-np.inf,
                           duals_eq=np.zeros(peq), duals_in=np.zeros(q),
                           kkt_residual=np.inf, iterations=retry.iterations)
    return retry
