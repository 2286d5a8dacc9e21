"""Branch-and-cut over LP relaxations.

All nonlinearity lives in convex epigraph terms (quadratics, logistic
losses, perspective cones).  Node relaxations are LPs; the engine
alternates LP resolves with gradient/outer-approximation cuts, branches on
fractional integers (most-fractional, index tie-break) and selects nodes
best-bound first.  Cuts are globally valid and shared across the tree.

Incumbents are accepted only after snapping integers and recomputing the
objective from the original convex terms, never from the cut surrogate.
"""

from __future__ import annotations

import heapq
import math
import threading
import time
from dataclasses import dataclass, field
from typing import Callable, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .lp import FEAS_TOL, LpError, LpProblem, LpSession, single_thread_blas, solve_lp

INT_TOL = 1e-5
CUT_VIOLATION_TOL = 1e-6
Z_FLOOR = 1e-8

CONT, BIN, INT = "cont", "bin", "int"


class EngineError(Exception):
    pass


# ---------------------------------------------------------------------------
# cut formulas
# ---------------------------------------------------------------------------


def perspective_cut(theta_bar: float, z_bar: float, r_bar: float, tol: float = CUT_VIOLATION_TOL):
    """Linearization of the rotated cone theta^2 <= z * r at (theta_bar, z_bar).

    Returns (a_theta, a_z, a_r, rhs) for the valid inequality
    ``a_theta*theta + a_z*z + a_r*r <= rhs``, or None when the linearization
    cannot separate (r >= 0 handles the zero-gradient case).
    """
    z_bar = min(max(z_bar, Z_FLOOR), 1.0)
    val = theta_bar * theta_bar / z_bar
    if val <= r_bar + tol:
        return None
    g_t = 2.0 * theta_bar / z_bar
    g_z = -(theta_bar * theta_bar) / (z_bar * z_bar)
    if abs(g_t) < 1e-14 and abs(g_z) < 1e-14:
        return None
    # (2 tb/zb) theta - (tb/zb)^2 z - r <= 0, tight at the linearization point
    return (g_t, g_z, -1.0, 0.0)


def logistic_loss(t: float) -> float:
    if t > 40.0:
        return math.exp(-t)
    if t < -40.0:
        return -t
    return math.log1p(math.exp(-t))


def logistic_slope(t: float) -> float:
    if t > 40.0:
        return 0.0
    if t < -40.0:
        return -1.0
    return -1.0 / (1.0 + math.exp(t))


def logistic_cut(t_bar: float):
    """Tangent of log(1+exp(-t)) at t_bar: returns (slope, intercept).

    The epigraph inequality is r >= intercept + slope * t; clamped to the
    asymptotes for |t_bar| > 40 to avoid overflow.
    """
    t_eff = min(max(t_bar, -40.0), 40.0)
    s = logistic_slope(t_eff)
    val = logistic_loss(t_eff)
    return s, val - s * t_eff


def quadratic_epigraph_cut(P: np.ndarray, q: np.ndarray, c0: float, x_bar: np.ndarray):
    """Gradient cut of q(x) = x'Px + q'x + c0 at x_bar: (grad, rhs_const).

    The epigraph inequality is r >= value + grad @ (x - x_bar).
    """
    val = float(x_bar @ P @ x_bar + q @ x_bar + c0)
    grad = 2.0 * (P @ x_bar) + q
    return grad, val


def split_box(value: float, lo: float, hi: float) -> Tuple[Tuple[float, float], Tuple[float, float]]:
    """Floor/ceil branching boxes; children partition the parent's integers."""
    f = math.floor(value + INT_TOL)
    if f >= hi:
        f = math.floor(hi) - 1 if math.floor(hi) == hi else math.floor(hi)
        f = max(f, int(math.floor(lo)))
    return (lo, float(f)), (float(f + 1), hi)


# ---------------------------------------------------------------------------
# convex epigraph terms
# ---------------------------------------------------------------------------


class ConvexTerm:
    """Epigraph term r >= f(x_S) handled by dynamically generated cuts."""

    epi: int

    def value(self, x: np.ndarray) -> float:
        raise NotImplementedError

    def cut(self, x: np.ndarray, tol: float = CUT_VIOLATION_TOL):
        """Violated valid inequality at x as (idx, coefs, rhs) or None."""
        raise NotImplementedError

    def epi_lower_bound(self) -> float:
        return 0.0

    def violation(self, x: np.ndarray) -> float:
        return self.value(x) - x[self.epi]


class QuadraticTerm(ConvexTerm):
    """r >= x'Px + q'x + c0 over the variables in idx (P must be PSD)."""

    def __init__(self, idx: Sequence[int], P: np.ndarray, q: np.ndarray, c0: float, epi: int):
        self.idx = np.asarray(idx, dtype=int)
        P = np.asarray(P, dtype=float)
        self.P = 0.5 * (P + P.T)
        self.q = np.asarray(q, dtype=float)
        self.c0 = float(c0)
        self.epi = int(epi)
        w = np.linalg.eigvalsh(self.P)
        scale = max(1.0, float(np.abs(self.P).max()))
        if w.min() < -1e-8 * scale:
            raise EngineError("quadratic term is not convex (negative eigenvalue %g)" % w.min())
        self._lb = self._global_min()

    def _global_min(self) -> float:
        sol, *_ = np.linalg.lstsq(2.0 * self.P, -self.q, rcond=None)
        grad = 2.0 * self.P @ sol + self.q
        if np.linalg.norm(grad) > 1e-6 * (1.0 + np.linalg.norm(self.q)):
            raise EngineError("quadratic term unbounded below")
        return float(sol @ self.P @ sol + self.q @ sol + self.c0)

    def value(self, x: np.ndarray) -> float:
        xs = x[self.idx]
        return float(xs @ self.P @ xs + self.q @ xs + self.c0)

    def cut(self, x: np.ndarray, tol: float = CUT_VIOLATION_TOL):
        xs = x[self.idx]
        grad, val = quadratic_epigraph_cut(self.P, self.q, self.c0, xs)
        if val <= x[self.epi] + tol:
            return None
        idx = np.concatenate([self.idx, [self.epi]])
        coefs = np.concatenate([grad, [-1.0]])
        rhs = float(grad @ xs - val)
        return idx, coefs, rhs

    def epi_lower_bound(self) -> float:
        return self._lb


class LogisticTerm(ConvexTerm):
    """r >= log(1 + exp(-(w'x))) over the variables in idx."""

    def __init__(self, idx: Sequence[int], w: np.ndarray, epi: int):
        self.idx = np.asarray(idx, dtype=int)
        self.w = np.asarray(w, dtype=float)
        self.epi = int(epi)

    def _t(self, x: np.ndarray) -> float:
        return float(self.w @ x[self.idx])

    def value(self, x: np.ndarray) -> float:
        return logistic_loss(self._t(x))

    def cut(self, x: np.ndarray, tol: float = CUT_VIOLATION_TOL):
        t = self._t(x)
        if logistic_loss(t) <= x[self.epi] + tol:
            return None
        slope, intercept = logistic_cut(t)
        # r >= intercept + slope * (w'x)
        idx = np.concatenate([self.idx, [self.epi]])
        coefs = np.concatenate([slope * self.w, [-1.0]])
        return idx, coefs, -float(intercept)


class PerspectiveTerm(ConvexTerm):
    """Rotated cone theta^2 <= z * r for an indicator z and epigraph r."""

    def __init__(self, theta: int, z: int, epi: int):
        self.theta = int(theta)
        self.z = int(z)
        self.epi = int(epi)
        self.idx = np.array([theta, z], dtype=int)

    def value(self, x: np.ndarray) -> float:
        th, z = x[self.theta], x[self.z]
        if z < 0.5 and abs(th) <= 10 * INT_TOL:
            return 0.0
        return th * th / max(z, Z_FLOOR)

    def cut(self, x: np.ndarray, tol: float = CUT_VIOLATION_TOL):
        th = x[self.theta]
        # linearizing exactly at a tiny z yields cut coefficients of order
        # theta^2/z^2 which wreck LP conditioning; any z in (0,1] gives a
        # valid supporting cut, so keep the point away from the pole
        z_lin = min(1.0, max(x[self.z], abs(th) / 20.0, 1e-6))
        res = perspective_cut(th, z_lin, x[self.epi], tol)
        if res is None:
            return None
        a_t, a_z, a_r, rhs = res
        return np.array([self.theta, self.z, self.epi]), np.array([a_t, a_z, a_r]), rhs


# ---------------------------------------------------------------------------
# model container
# ---------------------------------------------------------------------------


@dataclass
class _Row:
    idx: np.ndarray
    coefs: np.ndarray
    sense: int  # -1 <=, 0 ==, 1 >=
    rhs: float


class MioModel:
    """Universal formulation container: variables, rows, convex terms."""

    def __init__(self):
        self.names: List[str] = []
        self.kinds: List[str] = []
        self.lo: List[float] = []
        self.hi: List[float] = []
        self.obj: List[float] = []
        self.rows: List[_Row] = []
        self.terms: List[ConvexTerm] = []
        self.cut_oracles: List[Callable[[np.ndarray], list]] = []
        self.completion_hooks: List[Callable[[np.ndarray], None]] = []
        self.branch_class: List[int] = []

    # -- variables -------------------------------------------------------
    def add_var(self, lo: float, hi: float, kind: str = CONT, name: str = "", obj: float = 0.0, branch_class: int = 0) -> int:
        if kind not in (CONT, BIN, INT):
            raise EngineError(f"unknown variable kind {kind!r}")
        if kind == BIN:
            lo, hi = max(lo, 0.0), min(hi, 1.0)
        if lo > hi:
            raise EngineError("variable with empty domain")
        j = len(self.names)
        self.names.append(name or f"v{j}")
        self.kinds.append(kind)
        self.lo.append(float(lo))
        self.hi.append(float(hi))
        self.obj.append(float(obj))
        self.branch_class.append(branch_class)
        return j

    def add_binary(self, name: str = "", obj: float = 0.0, branch_class: int = 0) -> int:
        return self.add_var(0.0, 1.0, BIN, name, obj, branch_class)

    def add_integer(self, lo: float, hi: float, name: str = "", obj: float = 0.0, branch_class: int = 0) -> int:
        return self.add_var(lo, hi, INT, name, obj, branch_class)

    def add_continuous(self, lo: float = -np.inf, hi: float = np.inf, name: str = "", obj: float = 0.0) -> int:
        return self.add_var(lo, hi, CONT, name, obj)

    @property
    def n_vars(self) -> int:
        return len(self.names)

    def set_objective(self, idx: Sequence[int], coefs: Sequence[float]):
        for j, v in zip(idx, coefs):
            self.obj[j] = float(v)

    # -- rows and terms ----------------------------------------------------
    def add_constr(self, idx: Sequence[int], coefs: Sequence[float], sense: int, rhs: float) -> int:
        idx = np.asarray(idx, dtype=int)
        coefs = np.asarray(coefs, dtype=float)
        if idx.size and (idx.min() < 0 or idx.max() >= self.n_vars):
            raise EngineError("constraint references undeclared variable")
        if idx.size != coefs.size:
            raise EngineError("constraint index/coefficient length mismatch")
        if idx.size and len(set(idx.tolist())) != idx.size:
            # coalesce duplicate variable references by summation
            uniq, inv = np.unique(idx, return_inverse=True)
            summed = np.zeros(uniq.size)
            np.add.at(summed, inv, coefs)
            idx, coefs = uniq, summed
        self.rows.append(_Row(idx, coefs, int(sense), float(rhs)))
        return len(self.rows) - 1

    def add_term(self, term: ConvexTerm) -> ConvexTerm:
        self.terms.append(term)
        lb = term.epi_lower_bound()
        if np.isfinite(lb):
            self.lo[term.epi] = max(self.lo[term.epi], lb)
        return term

    def add_quadratic_epigraph(self, idx, P, q, c0=0.0, name="epi") -> Tuple[int, QuadraticTerm]:
        epi = self.add_continuous(-np.inf, np.inf, name=name)
        term = QuadraticTerm(idx, P, q, c0, epi)
        self.add_term(term)
        return epi, term

    def add_logistic_epigraph(self, idx, w, name="l_epi") -> Tuple[int, LogisticTerm]:
        epi = self.add_continuous(0.0, np.inf, name=name)
        term = LogisticTerm(idx, w, epi)
        self.add_term(term)
        return epi, term

    def add_cut_oracle(self, oracle: Callable[[np.ndarray], list]):
        self.cut_oracles.append(oracle)

    def add_completion_hook(self, hook: Callable[[np.ndarray], None]):
        self.completion_hooks.append(hook)

    # -- LP assembly -------------------------------------------------------
    def base_lp_arrays(self):
        n = self.n_vars
        A = np.zeros((len(self.rows), n))
        sense = np.zeros(len(self.rows), dtype=int)
        b = np.zeros(len(self.rows))
        for i, row in enumerate(self.rows):
            A[i, row.idx] = row.coefs
            sense[i] = row.sense
            b[i] = row.rhs
        return A, sense, b

    def integer_indices(self) -> np.ndarray:
        return np.array([j for j, k in enumerate(self.kinds) if k in (BIN, INT)], dtype=int)

    def row_values(self, x: np.ndarray) -> np.ndarray:
        return np.array([float(r.coefs @ x[r.idx]) for r in self.rows])

    def is_row_feasible(self, x: np.ndarray, tol: float) -> bool:
        for r in self.rows:
            v = float(r.coefs @ x[r.idx])
            if r.sense == -1 and v > r.rhs + tol:
                return False
            if r.sense == 1 and v < r.rhs - tol:
                return False
            if r.sense == 0 and abs(v - r.rhs) > tol:
                return False
        return True

    def debug_check_terms(self, rng: np.random.Generator, samples: int = 50):
        """Midpoint-vs-chord convexity spot check on every term oracle."""
        n = self.n_vars
        lo = np.where(np.isfinite(self.lo), self.lo, -10.0)
        hi = np.where(np.isfinite(self.hi), self.hi, 10.0)
        for term in self.terms:
            for _ in range(samples):
                xa = lo + rng.random(n) * (hi - lo)
                xb = lo + rng.random(n) * (hi - lo)
                if isinstance(term, PerspectiveTerm):
                    xa[term.z] = max(xa[term.z], 0.1)
                    xb[term.z] = max(xb[term.z], 0.1)
                mid = 0.5 * (xa + xb)
                chord = 0.5 * (term.value(xa) + term.value(xb))
                if term.value(mid) > chord + 1e-7 * (1 + abs(chord)):
                    raise EngineError("term failed midpoint convexity check")


def add_big_m_link(model: MioModel, theta: int, z: int, M: float) -> Tuple[int, int]:
    """Adds -M z <= theta <= M z and a support-rounding completion hook."""
    if M <= 0:
        raise EngineError("big-M must be positive")
    r1 = model.add_constr([theta, z], [1.0, -M], -1, 0.0)
    r2 = model.add_constr([theta, z], [-1.0, -M], -1, 0.0)

    def hook(x: np.ndarray):
        x[z] = 1.0 if abs(x[theta]) > 1e-7 else 0.0

    model.add_completion_hook(hook)
    return r1, r2


# ---------------------------------------------------------------------------
# solve result
# ---------------------------------------------------------------------------


@dataclass
class SolveResult:
    status: str
    x: Optional[np.ndarray]
    obj: Optional[float]
    bound: float
    gap: float
    nodes: int
    cut_count: int
    root_bound: float
    runtime: float = 0.0
    cuts: List[Tuple[np.ndarray, np.ndarray, float]] = field(default_factory=list)

    def to_dict(self, include_time: bool = True) -> dict:
        d = {
            "status": self.status,
            "objective": None if self.obj is None else float(self.obj),
            "bound": float(self.bound),
            "gap": float(self.gap),
            "nodes": int(self.nodes),
            "cuts": int(self.cut_count),
            "root_bound": float(self.root_bound),
        }
        if include_time:
            d["runtime_s"] = float(self.runtime)
        return d


DEFAULT_OPTIONS = {
    "gap_tol": 1e-4,
    "abs_opt_tol": 1e-9,
    "node_limit": 200000,
    "time_limit": float("inf"),
    "cut_rounds": 30,
    "root_cut_rounds": None,  # defaults to cut_rounds
    "fine_cut_rounds": 150,
    "max_node_visits": 60,
    "int_tol": INT_TOL,
    "cut_violation_tol": CUT_VIOLATION_TOL,
    "workers": 1,
    "cut_pool_cap": 150,
    "explore_ties": False,
    "tie_key": None,
    "incumbent_hint": None,
    "extra_cut_rows": None,  # list of (idx, coefs, rhs) seeded as <= rows
    "node_log": None,  # callable(str)
    "debug_checks": False,
    "lp_options": None,
}


@dataclass(order=True)
class _Node:
    bound: float
    seq: int
    bounds: dict = field(compare=False)
    basis: object = field(compare=False, default=None)
    depth: int = field(compare=False, default=0)
    visits: int = field(compare=False, default=0)


class _Search:
    """Shared branch-and-cut state; safe under concurrent node processing."""

    def __init__(self, model: MioModel, opts: dict):
        self.model = model
        self.opts = opts
        self.lock = threading.Lock()
        self.heap: List[_Node] = []
        self.seq = 0
        self.inc_x: Optional[np.ndarray] = None
        self.inc_obj = math.inf
        self.inc_key = None
        self.nodes_processed = 0
        self.pool_idx: List[np.ndarray] = []
        self.pool_coefs: List[np.ndarray] = []
        self.pool_rhs: List[float] = []
        self.pool_keys = set()
        self.record: List[Tuple[np.ndarray, np.ndarray, float]] = []
        self.int_idx = model.integer_indices()
        self.n = model.n_vars
        self.base_A, self.base_sense, self.base_b = model.base_lp_arrays()
        self.c = np.asarray(model.obj, dtype=float)
        self.lo0 = np.asarray(model.lo, dtype=float)
        self.hi0 = np.asarray(model.hi, dtype=float)
        self.root_bound = -math.inf
        self.stop_reason: Optional[str] = None
        self.t0 = time.time()

    # -- cut pool ---------------------------------------------------------
    def add_cut(self, idx: np.ndarray, coefs: np.ndarray, rhs: float) -> bool:
        key = (tuple(int(i) for i in idx), tuple(np.round(coefs, 10)), round(float(rhs), 10))
        if key in self.pool_keys:
            return False
        self.pool_keys.add(key)
        idx = np.asarray(idx, dtype=int)
        coefs = np.asarray(coefs, dtype=float)
        self.pool_idx.append(idx)
        self.pool_coefs.append(coefs)
        self.pool_rhs.append(float(rhs))
        self.record.append((idx, coefs, float(rhs)))
        return True

    def compact_pool(self, cap: int):
        """Keep the newest cuts only; safe between node solves (all cuts
        are globally valid, so dropping old ones never invalidates bounds)."""
        if len(self.pool_rhs) <= cap:
            return
        self.pool_idx = self.pool_idx[-cap:]
        self.pool_coefs = self.pool_coefs[-cap:]
        self.pool_rhs = self.pool_rhs[-cap:]

    def pool_rows(self, start: int, stop: int) -> Tuple[np.ndarray, np.ndarray]:
        rows = np.zeros((stop - start, self.n))
        rhs = np.zeros(stop - start)
        for k in range(start, stop):
            rows[k - start, self.pool_idx[k]] = self.pool_coefs[k]
            rhs[k - start] = self.pool_rhs[k]
        return rows, rhs

    def build_problem(self, bounds: dict) -> Tuple[LpProblem, int]:
        with self.lock:
            n_cuts = len(self.pool_rhs)
            rows, rhs = self.pool_rows(0, n_cuts)
        lo = self.lo0.copy()
        hi = self.hi0.copy()
        for j, (l, h) in bounds.items():
            lo[j], hi[j] = l, h
        A = np.vstack([self.base_A, rows]) if n_cuts else self.base_A
        sense = np.concatenate([self.base_sense, -np.ones(n_cuts, dtype=int)])
        b = np.concatenate([self.base_b, rhs])
        return LpProblem(self.c, A, sense, b, lo, hi), n_cuts

    # -- incumbent ---------------------------------------------------------
    def offer_incumbent(self, x: np.ndarray, obj: float) -> bool:
        key = self.opts["tie_key"](x) if self.opts["tie_key"] else None
        with self.lock:
            if obj < self.inc_obj - 1e-9:
                self.inc_x, self.inc_obj, self.inc_key = x.copy(), obj, key
                return True
            if (
                self.opts["explore_ties"]
                and key is not None
                and abs(obj - self.inc_obj) <= 1e-9
                and (self.inc_key is None or key < self.inc_key)
            ):
                self.inc_x, self.inc_obj, self.inc_key = x.copy(), obj, key
                return True
        return False

    def prune_slack(self) -> float:
        if self.opts["explore_ties"]:
            return -1e-9  # keep bound-tied nodes alive
        rel = self.opts["gap_tol"] * max(1.0, abs(self.inc_obj) if np.isfinite(self.inc_obj) else 1.0)
        return max(self.opts["abs_opt_tol"], rel)

    def should_prune(self, bound: float) -> bool:
        if not np.isfinite(self.inc_obj):
            return False
        return bound >= self.inc_obj - self.prune_slack()

    def global_bound(self) -> float:
        with self.lock:
            open_bounds = [nd.bound for nd in self.heap]
        cands = open_bounds + ([self.inc_obj] if np.isfinite(self.inc_obj) else [])
        if not cands:
            return self.inc_obj
        return min(min(open_bounds) if open_bounds else math.inf, self.inc_obj)


def _completion(model: MioModel, x: np.ndarray, int_idx: np.ndarray) -> np.ndarray:
    xc = x.copy()
    for hook in model.completion_hooks:
        hook(xc)
    if int_idx.size:
        xc[int_idx] = np.round(xc[int_idx])
    for term in model.terms:
        xc[term.epi] = max(xc[term.epi], term.value(xc))
    return xc


def _true_objective(model: MioModel, c: np.ndarray, x: np.ndarray) -> float:
    return float(c @ x)


def _feas_scale(search: _Search) -> float:
    b_mag = float(np.abs(search.base_b).max()) if search.base_b.size else 0.0
    return 1e-6 * (1.0 + b_mag)


class _NodeWorker:
    def __init__(self, search: _Search):
        self.s = search
        self.model = search.model
        self.opts = search.opts

    # collect violated cuts at a point; returns count added
    def _generate_cuts(self, x: np.ndarray, tol: float = None) -> int:
        added = 0
        if tol is None:
            tol = self.opts["cut_violation_tol"]
        for term in self.model.terms:
            cut = term.cut(x, tol)
            if cut is None:
                continue
            idx, coefs, rhs = cut
            if float(coefs @ x[idx]) > rhs + tol and self.s.add_cut(idx, coefs, rhs):
                added += 1
        for oracle in self.model.cut_oracles:
            for idx, coefs, rhs in oracle(x):
                idx = np.asarray(idx, dtype=int)
                coefs = np.asarray(coefs, dtype=float)
                if float(coefs @ x[idx]) > rhs + tol and self.s.add_cut(idx, coefs, rhs):
                    added += 1
        return added

    def _term_violation(self, x: np.ndarray) -> float:
        v = 0.0
        for term in self.model.terms:
            v = max(v, term.violation(x))
        return v

    def _fractional_var(self, x: np.ndarray, floor: float) -> Optional[int]:
        best, best_frac, best_class = None, floor, None
        for j in self.s.int_idx:
            frac = abs(x[j] - round(x[j]))
            cls = self.model.branch_class[j]
            if frac <= floor:
                continue
            if best is None or cls < best_class or (cls == best_class and frac > best_frac + 1e-12):
                best, best_frac, best_class = int(j), frac, cls
        return best

    def _first_unfixed_int(self, node: _Node, x: np.ndarray) -> Optional[int]:
        for j in self.s.int_idx:
            lo, hi = self.s.lo0[j], self.s.hi0[j]
            if j in node.bounds:
                lo, hi = node.bounds[j]
            if hi - lo > 0.5:
                return int(j)
        return None

    def _try_incumbent(self, x: np.ndarray, node: _Node) -> bool:
        """Snap/complete candidates and accept one if genuinely feasible.

        Two candidates are tried: the hook-assisted completion and (when
        hooks exist) a plain nearest-integer rounding.  Bound-box and row
        feasibility are verified exactly before acceptance.
        """
        s = self.s
        candidates = [_completion(self.model, x, s.int_idx)]
        if self.model.completion_hooks:
            xr = x.copy()
            if s.int_idx.size:
                xr[s.int_idx] = np.round(xr[s.int_idx])
            for term in self.model.terms:
                xr[term.epi] = max(xr[term.epi], term.value(xr))
            candidates.append(xr)
        accepted = False
        for xc in candidates:
            ok = True
            for j, (l, h) in node.bounds.items():
                if xc[j] < l - 1e-9 or xc[j] > h + 1e-9:
                    ok = False
                    break
            if not ok:
                continue
            if np.any(xc < s.lo0 - 1e-9) or np.any(xc > s.hi0 + 1e-9):
                continue
            if not self.model.is_row_feasible(xc, _feas_scale(s)):
                continue
            obj = _true_objective(self.model, s.c, xc)
            accepted = s.offer_incumbent(xc, obj) or accepted
        return accepted

    def process(self, node: _Node):
        s = self.s
        opts = self.opts
        prob, _ = s.build_problem(node.bounds)
        session = LpSession(prob, warm=node.basis, options=opts["lp_options"])
        status = session.solve()
        if status == "infeasible":
            return
        if status == "unbounded":
            raise EngineError("node relaxation unbounded; supply finite bounds or big-M values")
        if status == "iteration_limit":
            # no usable bound from this relaxation; keep the parent's and
            # branch on some unfixed integer so the tree still shrinks
            frac = self._first_unfixed_int(node, session.x)
            if frac is None:
                return
            lo_j, hi_j = node.bounds.get(frac, (s.lo0[frac], s.hi0[frac]))
            (llo, lhi), (rlo, rhi) = split_box(session.x[frac], lo_j, hi_j)
            with s.lock:
                for child_lo, child_hi in ((llo, lhi), (rlo, rhi)):
                    if child_lo > child_hi:
                        continue
                    nb = dict(node.bounds)
                    nb[frac] = (child_lo, child_hi)
                    s.seq += 1
                    heapq.heappush(s.heap, _Node(node.bound, s.seq, nb, None, node.depth + 1, 0))
            return

        rounds = opts["root_cut_rounds"] if (node.depth == 0 and opts["root_cut_rounds"]) else opts["cut_rounds"]
        prev_obj = session.obj
        last_optimal = session.obj
        flat = 0
        for _ in range(rounds):
            if self._generate_cuts(session.x) == 0:
                break
            with s.lock:
                n_have = session.problem.n_rows - s.base_A.shape[0]
                rows, rhs = s.pool_rows(n_have, len(s.pool_rhs))
            if rows.shape[0] == 0:
                break
            status = session.add_rows(rows, -np.ones(rows.shape[0], dtype=int), rhs)
            if status == "infeasible":
                return
            if status == "iteration_limit":
                break  # keep the last optimal bound; resume via branching
            if status != "optimal":
                raise EngineError(f"LP returned {status} inside cut loop")
            # stop early once the bound stops moving; remaining violations
            # are handled by the integral-point refinement or by branching
            last_optimal = session.obj
            if session.obj - prev_obj <= 1e-7 * (1.0 + abs(session.obj)):
                flat += 1
                if flat >= 2 and node.depth > 0:
                    break
            else:
                flat = 0
            prev_obj = session.obj

        bound = max(node.bound, last_optimal)
        if node.depth == 0:
            s.root_bound = max(s.root_bound, bound)
        if s.should_prune(bound):
            return

        x = session.x
        self._try_incumbent(x, node)
        if s.should_prune(bound):
            return

        frac = self._fractional_var(x, opts["int_tol"])
        if frac is None:
            # Integral relaxation point.  The LP value only closes the node
            # once the surrogate has converged at that point; refine with
            # finer cuts, stopping on stall.
            if self.model.terms:
                close_tol = max(1e-7, 1e-7 * (1 + abs(session.obj)))
                fine_tol = close_tol / 5.0
                best_resid = math.inf
                stalled = 0
                for _ in range(opts["fine_cut_rounds"]):
                    resid = self._term_violation(session.x)
                    if resid <= fine_tol:
                        break
                    if resid < best_resid * 0.98:
                        best_resid, stalled = resid, 0
                    else:
                        stalled += 1
                        if stalled >= 12:
                            break
                    if self._generate_cuts(session.x, tol=fine_tol / 2) == 0:
                        break
                    with s.lock:
                        n_have = session.problem.n_rows - s.base_A.shape[0]
                        rows, rhs = s.pool_rows(n_have, len(s.pool_rhs))
                    status = session.add_rows(rows, -np.ones(rows.shape[0], dtype=int), rhs)
                    if status == "infeasible":
                        return
                    bound = max(bound, session.obj)
                    if node.depth == 0:
                        s.root_bound = max(s.root_bound, bound)
                    frac = self._fractional_var(session.x, opts["int_tol"])
                    if frac is not None:
                        break
                x = session.x
            if frac is None:
                self._try_incumbent(x, node)
                residual = self._term_violation(x) if self.model.terms else 0.0
                close_tol = max(1e-7, 1e-7 * (1 + abs(session.obj)))
                if residual <= close_tol or s.should_prune(bound):
                    return  # node solved: bound equals value up to close_tol
                # surrogate unconverged: split on an unfixed integer so the
                # tree keeps shrinking, or requeue for pure refinement
                unfixed = self._first_unfixed_int(node, x)
                if unfixed is None:
                    if node.visits + 1 >= opts["max_node_visits"]:
                        return  # accept close_tol-level slack on this leaf
                    with s.lock:
                        s.seq += 1
                        heapq.heappush(s.heap, _Node(bound, s.seq, dict(node.bounds), session.basis, node.depth, node.visits + 1))
                    return
                frac = unfixed
        if frac is None:
            # integers all within tolerance but snapping was infeasible:
            # force a branch on the most fractional integer
            frac = self._fractional_var(x, 1e-12)
            if frac is None:
                return
        lo_j, hi_j = self.s.lo0[frac], self.s.hi0[frac]
        if frac in node.bounds:
            lo_j, hi_j = node.bounds[frac]
        (llo, lhi), (rlo, rhi) = split_box(x[frac], lo_j, hi_j)
        basis = session.basis
        with s.lock:
            for child_lo, child_hi in ((llo, lhi), (rlo, rhi)):
                if child_lo > child_hi:
                    continue
                nb = dict(node.bounds)
                nb[frac] = (child_lo, child_hi)
                s.seq += 1
                heapq.heappush(s.heap, _Node(bound, s.seq, nb, basis, node.depth + 1, 0))


def solve(model: MioModel, options: Optional[dict] = None) -> SolveResult:
    """Branch-and-cut solve of a MioModel (minimization)."""
    opts = dict(DEFAULT_OPTIONS)
    opts.update(options or {})
    if model.n_vars == 0:
        raise EngineError("model has no variables")
    if opts["debug_checks"]:
        model.debug_check_terms(np.random.default_rng(0))

    s = _Search(model, opts)
    if opts["extra_cut_rows"]:
        for idx, coefs, rhs in opts["extra_cut_rows"]:
            s.add_cut(np.asarray(idx, dtype=int), np.asarray(coefs, dtype=float), float(rhs))
    hint = opts["incumbent_hint"]
    if hint is not None:
        xh = _completion(model, np.asarray(hint, dtype=float), s.int_idx)
        if model.is_row_feasible(xh, _feas_scale(s)) and not (
            np.any(xh < s.lo0 - 1e-9) or np.any(xh > s.hi0 + 1e-9)
        ):
            s.offer_incumbent(xh, _true_objective(model, s.c, xh))

    root = _Node(-math.inf, 0, {}, None, 0, 0)
    s.heap.append(root)
    worker = _NodeWorker(s)

    def run_serial():
        while s.heap:
            if s.nodes_processed >= opts["node_limit"]:
                s.stop_reason = "NodeLimit"
                return
            if time.time() - s.t0 > opts["time_limit"]:
                s.stop_reason = "TimeLimit"
                return
            node = heapq.heappop(s.heap)
            if s.should_prune(node.bound):
                continue
            s.compact_pool(opts["cut_pool_cap"])
            # the popped node carries the smallest bound (-inf if unknown)
            gb = min(node.bound, s.global_bound())
            if not opts["explore_ties"] and np.isfinite(s.inc_obj) and np.isfinite(gb):
                gap = (s.inc_obj - gb) / max(1.0, abs(s.inc_obj))
                if gap <= opts["gap_tol"]:
                    heapq.heappush(s.heap, node)
                    s.stop_reason = "GapLimit"
                    return
            s.nodes_processed += 1
            worker.process(node)
            if opts["node_log"]:
                opts["node_log"](
                    f"node {s.nodes_processed} depth {node.depth} bound {node.bound:.6g} "
                    f"inc {s.inc_obj:.6g} open {len(s.heap)}"
                )

    def run_threaded(k: int):
        cond = threading.Condition()
        active = [0]
        stop = [False]

        def loop():
            while True:
                with cond:
                    while not s.heap and active[0] > 0 and not stop[0]:
                        cond.wait(0.01)
                    if stop[0] or (not s.heap and active[0] == 0):
                        cond.notify_all()
                        return
                    if not s.heap:
                        continue
                    if s.nodes_processed >= opts["node_limit"]:
                        s.stop_reason = "NodeLimit"
                        stop[0] = True
                        cond.notify_all()
                        return
                    if time.time() - s.t0 > opts["time_limit"]:
                        s.stop_reason = "TimeLimit"
                        stop[0] = True
                        cond.notify_all()
                        return
                    node = heapq.heappop(s.heap)
                    if s.should_prune(node.bound):
                        continue
                    s.nodes_processed += 1
                    active[0] += 1
                try:
                    worker.process(node)
                finally:
                    with cond:
                        active[0] -= 1
                        cond.notify_all()

        threads = [threading.Thread(target=loop) for _ in range(k)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()

    with single_thread_blas(limits=1, user_api="blas"):
        if opts["workers"] > 1:
            run_threaded(int(opts["workers"]))
        else:
            run_serial()

    # final bookkeeping
    have_inc = np.isfinite(s.inc_obj)
    if s.stop_reason is None:
        bound = s.inc_obj if have_inc else math.inf
        status = "Optimal" if have_inc else "Infeasible"
    else:
        bound = s.global_bound()
        status = s.stop_reason
        if status == "GapLimit" and have_inc:
            gap = (s.inc_obj - bound) / max(1.0, abs(s.inc_obj))
            if gap <= opts["abs_opt_tol"]:
                status = "Optimal"
    gap = 0.0
    if have_inc and np.isfinite(bound):
        gap = max(0.0, (s.inc_obj - bound) / max(1.0, abs(s.inc_obj)))
    elif not have_inc:
        gap = math.inf
    cuts = list(s.record)
    return SolveResult(
        status=status,
        x=s.inc_x,
        obj=s.inc_obj if have_inc else None,
        bound=bound,
        gap=gap,
        nodes=s.nodes_processed,
        cut_count=len(cuts),
        root_bound=s.root_bound if np.isfinite(s.root_bound) else bound,
        runtime=time.time() - s.t0,
        cuts=cuts,
    )


def root_relaxation(model: MioModel, options: Optional[dict] = None) -> SolveResult:
    """Solve only the root relaxation with its cut loop; bound and cuts."""
    opts = dict(DEFAULT_OPTIONS)
    opts.update(options or {})
    opts["node_limit"] = 1
    opts["gap_tol"] = 0.0
    opts.setdefault("incumbent_hint", None)
    res = solve(model, opts)
    if res.status == "Infeasible":
        return res
    bound = res.root_bound if np.isfinite(res.root_bound) else res.bound
    return SolveResult(
        status=res.status if res.status in ("Optimal", "Infeasible") else "NodeLimit",
        x=res.x,
        obj=res.obj,
        bound=bound,
        gap=res.gap,
        nodes=res.nodes,
        cut_count=res.cut_count,
        root_bound=bound,
        runtime=res.runtime,
        cuts=res.cuts,
    )
