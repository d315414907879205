"""Cut training: sweep a fixed set of states, score the candidate cut at
each state's greedy trajectory, and keep the best one per iteration.

Scoring solves one MIQP and one QP per state: the greedy policy problem
gives the trajectory where the approximation is currently believed tight,
and the relaxed one-step Bellman problem at that trajectory prices a new
cut.  The score is the cut's dual value minus the current approximation
value (beta), or that gap relative to the current value (beta_tilde).
States whose trajectories dead-end or whose multipliers are degenerate
score -inf for the iteration and are retried on the next sweep.
"""

from __future__ import annotations

import csv
import json
import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from .cuts import QApprox, eval_qapprox, generate_cut, new_qapprox
from .errors import (ConfigError, CutDegenerateError, DeadEndError,
                     InfeasibleError, SolverError)
from .mld import MldSystem, StageCost
from .policy import greedy_policy
from .traction import lift_slip

METRICS = ("beta", "beta_tilde")


@dataclass
class TrainConfig:
    N: int
    X_Alg: list
    I_max: int
    eta_min: float
    metric: str = "beta_tilde"
    gamma: float = 0.95
    workers: int = 1
    seed: int = 0

    def __post_init__(self):
        self.X_Alg = [np.asarray(x, dtype=float).reshape(-1) for x in self.X_Alg]
        if self.N < 1:
            raise ConfigError(f"N must be >= 1, got {self.N}")
        if self.I_max < 0:
            raise ConfigError(f"I_max must be >= 0, got {self.I_max}")
        if not self.eta_min > 0:
            raise ConfigError(f"eta_min must be > 0, got {self.eta_min}")
        if self.metric not in METRICS:
            raise ConfigError(f"metric must be one of {METRICS}, got {self.metric!r}")
        if not self.X_Alg:
            raise ConfigError("X_Alg must be nonempty")
        if not 0.0 < self.gamma <= 1.0:
            raise ConfigError(f"gamma must be in (0, 1], got {self.gamma}")
        if self.workers < 1:
            raise ConfigError(f"workers must be >= 1, got {self.workers}")


@dataclass
class IterationRecord:
    iteration: int
    chosen_state: int
    eta_star: float
    beta: float
    beta_tilde: float
    cut_id: int
    wall_time: float
    etas: list            # score per training state; -inf for failed states


@dataclass
class TrainReport:
    records: list = field(default_factory=list)
    skipped_states: list = field(default_factory=list)
    termination: str = ""
    n_cuts: int = 1
    wall_time: float = 0.0

    def to_dict(self):
        return {
            "termination": self.termination,
            "n_cuts": self.n_cuts,
            "wall_time": self.wall_time,
            "skipped_states": list(self.skipped_states),
            "iterations": [
                {"iteration": r.iteration, "chosen_state": r.chosen_state,
                 "eta_star": r.eta_star, "beta": r.beta,
                 "beta_tilde": r.beta_tilde, "cut_id": r.cut_id,
                 "wall_time": r.wall_time,
                 "etas": [None if not np.isfinite(e) else e for e in r.etas]}
                for r in self.records
            ],
        }

    def save(self, json_path, csv_path=None):
        with open(json_path, "w") as f:
            json.dump(self.to_dict(), f, indent=1)
            f.write("\n")
        if csv_path is not None:
            n_states = len(self.records[0].etas) if self.records else 0
            with open(csv_path, "w", newline="") as f:
                wr = csv.writer(f)
                wr.writerow(["iteration"] + [f"eta_{i}" for i in range(n_states)]
                            + ["chosen_state", "eta_star"])
                for r in self.records:
                    wr.writerow([r.iteration]
                                + [repr(float(e)) for e in r.etas]
                                + [r.chosen_state, repr(float(r.eta_star))])


def _score_state(q: QApprox, x, warm=None):
    """Candidate cut and its improvement metrics at one state.

    Returns (eta_pair, cut, value, assignment) where eta_pair is
    (beta, beta_tilde) and assignment seeds the next sweep's greedy solve
    at this state, or None when the state cannot be scored this sweep.
    """
    try:
        pol = greedy_policy(q, x, warm_start=warm)
        traj = pol.trajectory
        cut, duals, inner = generate_cut(q, traj)
        val, _ = eval_qapprox(q, traj)
        dual_val = inner.q0_val + float(cut.nu @ inner.w) + cut.c
    except (InfeasibleError, CutDegenerateError, SolverError):
        # includes dead ends; the caller decides whether the state is
        # permanently infeasible or just unscorable this sweep
        return None
    beta = dual_val - val
    from .cuts import TOL_DEN
    beta_tilde = beta / val if val > TOL_DEN else 0.0
    return (beta, beta_tilde), cut, val, pol.assignment


def train(sys: MldSystem, cost: StageCost, cfg: TrainConfig, progress=None):
    """Run the cut-selection loop; returns (QApprox, TrainReport).

    Matches the sweep/argmax/add pseudocode: each iteration scores every
    usable training state against the current approximation, then adds the
    best candidate cut if its score reaches eta_min; ties go to the lowest
    state index.  I_max bounds the number of cuts added.
    """
    if abs(cfg.gamma - cost.gamma) > 1e-12:
        raise ConfigError(
            f"config gamma {cfg.gamma} does not match cost gamma {cost.gamma}")
    q = new_qapprox(sys, cost, cfg.N)
    report = TrainReport()
    t_start = time.time()

    alive = list(range(len(cfg.X_Alg)))
    infeasible = set()
    metric_col = 0 if cfg.metric == "beta" else 1
    # per-state warm starts: the previous sweep's optimal assignment stays
    # feasible after a cut is added (new rows only price the epigraph), so
    # it seeds the branch-and-bound incumbent and prunes most of the tree
    warm = {}

    pool = None
    if cfg.workers > 1:
        import multiprocessing
        pool = multiprocessing.Pool(cfg.workers)
    try:
        while report.n_cuts - 1 < cfg.I_max:
            t_it = time.time()
            jobs = [(q, cfg.X_Alg[i], warm.get(i)) for i in alive]
            if pool is not None:
                results = pool.starmap(_score_state, jobs)
            else:
                results = [_score_state(*j) for j in jobs]

            # first sweep: states with no feasible trajectory are dropped for
            # good (feasibility does not depend on the cuts); transiently
            # unscorable states stay alive and are retried next sweep
            if not report.records:
                for k, i in enumerate(alive):
                    if results[k] is None:
                        try:
                            greedy_policy(q, cfg.X_Alg[i])
                        except InfeasibleError:
                            infeasible.add(i)
                        except (SolverError, DeadEndError):
                            pass
                if infeasible:
                    warnings.warn(
                        "training states with no feasible trajectory skipped: "
                        f"{sorted(infeasible)}")
                    report.skipped_states = sorted(infeasible)
                    if len(infeasible) == len(cfg.X_Alg):
                        raise InfeasibleError("all training states are infeasible")
                    # current results for dead states are None already; just
                    # stop re-solving them on later sweeps
                    keep = [(i, r) for i, r in zip(alive, results)
                            if i not in infeasible]
                    alive = [i for i, _ in keep]
                    results = [r for _, r in keep]

            etas_full = np.full(len(cfg.X_Alg), -np.inf)
            cands = {}
            for k, i in enumerate(alive):
                r = results[k]
                if r is None:
                    continue
                (beta, beta_tilde), cut, val, assignment = r
                etas_full[i] = (beta, beta_tilde)[metric_col]
                cands[i] = (beta, beta_tilde, cut)
                warm[i] = assignment
            if not cands:
                report.termination = "no_scorable_states"
                warnings.warn("no training state could be scored; stopping")
                break
            i_star = int(np.argmax(etas_full))
            eta_star = float(etas_full[i_star])
            if eta_star < cfg.eta_min:
                report.termination = "eta_below_min"
                break
            beta, beta_tilde, cut = cands[i_star]
            birth = {"state_index": i_star, "iteration": len(report.records),
                     "metric": cfg.metric, "eta": eta_star, "beta": beta,
                     "beta_tilde": beta_tilde,
                     "x0": [float(v) for v in cfg.X_Alg[i_star]]}
            cut = type(cut)(nu=cut.nu, c=cut.c, id=cut.id, birth=birth)
            q.add_cut(cut)
            rec = IterationRecord(
                iteration=len(report.records), chosen_state=i_star,
                eta_star=eta_star, beta=beta, beta_tilde=beta_tilde,
                cut_id=cut.id, wall_time=time.time() - t_it,
                etas=etas_full.tolist())
            report.records.append(rec)
            report.n_cuts = q.n_cuts
            if progress is not None:
                progress(rec)
        else:
            report.termination = "i_max_reached"
    finally:
        if pool is not None:
            pool.close()
            pool.join()
    if not report.termination:
        report.termination = "i_max_reached"
    report.n_cuts = q.n_cuts
    report.wall_time = time.time() - t_start
    return q, report


def make_training_states(kind, count, low, high, seed=0, dim=None):
    """Deterministic training-state sets.

    kind="slip_range": `count` slips evenly spaced in [low, high], each
    lifted to a full state on the canonical slip manifold.
    kind="box": `count` points in the box [low, high]^dim — evenly spaced
    when one-dimensional, uniform from the seeded generator otherwise.
    """
    if count < 1:
        raise ConfigError(f"count must be >= 1, got {count}")
    if kind == "slip_range":
        return [lift_slip(s) for s in np.linspace(low, high, count)]
    if kind == "box":
        lo = np.atleast_1d(np.asarray(low, dtype=float))
        hi = np.atleast_1d(np.asarray(high, dtype=float))
        if dim is None:
            dim = max(lo.shape[0], hi.shape[0])
        lo = np.broadcast_to(lo, (dim,))
        hi = np.broadcast_to(hi, (dim,))
        if np.any(hi < lo):
            raise ConfigError("box upper bound below lower bound")
        if dim == 1:
            return [np.array([v]) for v in np.linspace(lo[0], hi[0], count)]
        rng = np.random.default_rng(seed)
        return list(rng.uniform(lo, hi, size=(count, dim)))
    raise ConfigError(f"unknown training-state kind {kind!r}")


def load_train_config(path) -> TrainConfig:
    """Read a TrainConfig from JSON.

    "states" is either an explicit list of state vectors or a sampler
    spec {"kind", "count", "low", "high", optional "seed", "dim"}.
    gamma is mandatory so comparisons never inherit a silent default.
    """
    with open(path) as f:
        try:
            doc = json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigError(f"config {path} is not valid JSON: {e}") from e
    required = {"N", "I_max", "eta_min", "gamma", "states"}
    missing = required - doc.keys()
    if missing:
        raise ConfigError(f"config {path} missing fields: {sorted(missing)}")
    seed = int(doc.get("seed", 0))
    states = doc["states"]
    if isinstance(states, dict):
        spec = dict(states)
        kind = spec.pop("kind", None)
        X = make_training_states(kind, spec.pop("count"), spec.pop("low"),
                                 spec.pop("high"), seed=spec.pop("seed", seed),
                                 dim=spec.pop("dim", None))
        if spec:
            raise ConfigError(f"unknown state-sampler fields: {sorted(spec)}")
    elif isinstance(states, list):
        X = [np.asarray(s, dtype=float) for s in states]
    else:
        raise ConfigError("'states' must be a list of vectors or a sampler spec")
    return TrainConfig(N=int(doc["N"]), X_Alg=X, I_max=int(doc["I_max"]),
                       eta_min=float(doc["eta_min"]),
                       metric=doc.get("metric", "beta_tilde"),
                       gamma=float(doc["gamma"]),
                       workers=int(doc.get("workers", 1)), seed=seed)
