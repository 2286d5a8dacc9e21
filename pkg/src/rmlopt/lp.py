"""Bounded-variable primal simplex for the node relaxations.

Dense arithmetic throughout: problems at desk scale (a few thousand
nonzeros) do not justify sparse factorizations, and a dense basis inverse
makes warm restarts after bound changes and row additions trivial.

Conventions
-----------
Rows are stored as ``a @ x  (sense)  rhs`` with sense in {-1: <=, 0: ==,
+1: >=}.  Internally every row gets one slack column so the system becomes
``A x + s = b`` with slack bounds encoding the sense.  Minimization only.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

try:  # pinned BLAS threading keeps pivot sequences reproducible
    from threadpoolctl import threadpool_limits as single_thread_blas
except ImportError:  # pragma: no cover
    from contextlib import nullcontext

    def single_thread_blas(limits=None, user_api=None):
        return nullcontext()

# Shared solver tolerances; every module inherits these.
FEAS_TOL = 1e-7
OPT_TOL = 1e-7
PIVOT_FLOOR = 1e-9

LEQ, EQ, GEQ = -1, 0, 1

_SENSE_STR = {LEQ: "<=", EQ: "=", GEQ: ">="}


class LpError(Exception):
    pass


@dataclass
class LpProblem:
    """min c @ x  s.t.  A x (sense) b,  lo <= x <= hi."""

    c: np.ndarray
    A: np.ndarray
    sense: np.ndarray
    b: np.ndarray
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float)
        n = self.c.shape[0]
        self.A = np.asarray(self.A, dtype=float).reshape(-1, n)
        self.sense = np.asarray(self.sense, dtype=int)
        self.b = np.asarray(self.b, dtype=float)
        self.lo = np.asarray(self.lo, dtype=float)
        self.hi = np.asarray(self.hi, dtype=float)
        m = self.A.shape[0]
        if self.sense.shape != (m,) or self.b.shape != (m,):
            raise LpError("row arrays disagree on the number of rows")
        if self.lo.shape != (n,) or self.hi.shape != (n,):
            raise LpError("bound arrays disagree on the number of variables")
        if not np.all(np.isfinite(self.b)):
            raise LpError("rhs must be finite")
        if np.any(self.lo > self.hi + 1e-12):
            raise LpError("lower bound above upper bound")

    @property
    def n_vars(self) -> int:
        return self.c.shape[0]

    @property
    def n_rows(self) -> int:
        return self.A.shape[0]

    def with_rows(self, rows: np.ndarray, senses, rhs) -> "LpProblem":
        rows = np.asarray(rows, dtype=float).reshape(-1, self.n_vars)
        return LpProblem(
            self.c,
            np.vstack([self.A, rows]) if rows.size else self.A,
            np.concatenate([self.sense, np.asarray(senses, dtype=int)]),
            np.concatenate([self.b, np.asarray(rhs, dtype=float)]),
            self.lo,
            self.hi,
        )

    def with_bounds(self, var: int, lo: float, hi: float) -> "LpProblem":
        if lo > hi:
            raise LpError("empty bound box")
        new_lo = self.lo.copy()
        new_hi = self.hi.copy()
        new_lo[var] = lo
        new_hi[var] = hi
        return LpProblem(self.c, self.A, self.sense, self.b, new_lo, new_hi)

    def export_text(self, names: Optional[Sequence[str]] = None) -> str:
        """Human-readable rendering, one constraint per line."""
        names = list(names) if names is not None else [f"x{j}" for j in range(self.n_vars)]

        def lin(coefs):
            parts = []
            for j, v in enumerate(coefs):
                if v == 0.0:
                    continue
                parts.append(f"{'+' if v >= 0 else '-'} {abs(v):.12g} {names[j]}")
            return " ".join(parts) if parts else "0"

        lines = ["min " + lin(self.c), "subject to"]
        for i in range(self.n_rows):
            lines.append(f"  r{i}: {lin(self.A[i])} {_SENSE_STR[int(self.sense[i])]} {self.b[i]:.12g}")
        lines.append("bounds")
        for j in range(self.n_vars):
            lines.append(f"  {self.lo[j]:.12g} <= {names[j]} <= {self.hi[j]:.12g}")
        return "\n".join(lines)


@dataclass
class Basis:
    """Warm-start descriptor: basic column ids plus nonbasic bound sides.

    Column ids cover structurals then slacks (slack of row i is n_vars + i),
    so a basis stays meaningful when rows are appended.
    """

    basic: np.ndarray
    at_upper: np.ndarray


@dataclass
class LpSolution:
    status: str  # optimal | infeasible | unbounded | iteration_limit
    x: np.ndarray
    obj: float
    duals: np.ndarray
    reduced_costs: np.ndarray
    basis: Optional[Basis]
    problem: LpProblem
    iterations: int = 0

    def dual_objective(self) -> float:
        """y'b plus nonbasic bound contributions; equals obj at optimality."""
        prob = self.problem
        n = prob.n_vars
        val = float(self.duals @ prob.b)
        basic = set(self.basis.basic.tolist()) if self.basis else set()
        for j in range(n):
            if j in basic:
                continue
            val += self.reduced_costs[j] * self.x[j]
        return val


class _Simplex:
    def __init__(self, prob: LpProblem, options: dict):
        self.prob = prob
        self.opts = options
        n, m = prob.n_vars, prob.n_rows
        self.n, self.m = n, m
        self.N = n + m
        self.Afull = np.hstack([prob.A, np.eye(m)]) if m else prob.A.reshape(0, n)
        slack_lo = np.where(prob.sense == LEQ, 0.0, np.where(prob.sense == GEQ, -np.inf, 0.0))
        slack_hi = np.where(prob.sense == LEQ, np.inf, 0.0)
        self.lo = np.concatenate([prob.lo, slack_lo])
        self.hi = np.concatenate([prob.hi, slack_hi])
        self.c = np.concatenate([prob.c, np.zeros(m)])
        # static column norms for steepest-edge-lite pricing
        self.colnorm = np.sqrt((self.Afull * self.Afull).sum(axis=0) + 1.0)
        self.iter_limit = options.get("iteration_limit", 20000 + 40 * (n + m))
        self.refactor_every = options.get("refactor_every", 120)
        self._dirty = 0

    # -- state helpers -------------------------------------------------
    def _start(self, warm: Optional[Basis]):
        n, m, N = self.n, self.m, self.N
        self.at_upper = np.zeros(N, dtype=bool)
        usable = (
            warm is not None
            and len(warm.basic) <= m
            and warm.at_upper.shape[0] <= N
            and len(set(warm.basic.tolist())) == len(warm.basic)
            and (len(warm.basic) == 0 or (warm.basic.min() >= 0 and warm.basic.max() < N))
        )
        if usable:
            basic = list(warm.basic)
            have = set(basic)
            # rows appended since the basis was recorded: their slacks enter
            for i in range(m - 1, -1, -1):
                if len(basic) == m:
                    break
                s = n + i
                if s not in have:
                    basic.append(s)
                    have.add(s)
            self.basic = np.array(basic, dtype=int)
            self.at_upper[: warm.at_upper.shape[0]] = warm.at_upper
        else:
            self.basic = np.arange(n, n + m, dtype=int)
        self.is_basic = np.zeros(N, dtype=bool)
        self.is_basic[self.basic] = True
        # nonbasic variables sit at a finite bound, or 0 when free
        self.x = np.zeros(N)
        for j in range(N):
            if self.is_basic[j]:
                continue
            self.x[j] = self._nonbasic_value(j)
        if not self._refactor():
            # singular warm basis: fall back to the slack basis
            self.basic = np.arange(n, n + m, dtype=int)
            self.is_basic[:] = False
            self.is_basic[self.basic] = True
            self.at_upper[:] = False
            for j in range(N):
                if not self.is_basic[j]:
                    self.x[j] = self._nonbasic_value(j)
            if not self._refactor():
                raise LpError("slack basis singular; malformed problem")

    def _nonbasic_value(self, j: int) -> float:
        lo, hi = self.lo[j], self.hi[j]
        if self.at_upper[j] and np.isfinite(hi):
            return hi
        if np.isfinite(lo):
            return lo
        if np.isfinite(hi):
            self.at_upper[j] = True
            return hi
        return 0.0

    def _refactor(self) -> bool:
        m = self.m
        if m == 0:
            self.Binv = np.zeros((0, 0))
            return True
        B = self.Afull[:, self.basic]
        try:
            self.Binv = np.linalg.inv(B)
        except np.linalg.LinAlgError:
            return False
        if not np.all(np.isfinite(self.Binv)):
            return False
        self._recompute_basics()
        self._dirty = 0
        return True

    def _install_basis(self, chosen: List[int]) -> bool:
        removed = set(self.basic.tolist()) - set(chosen)
        self.basic = np.array(chosen, dtype=int)
        self.is_basic[:] = False
        self.is_basic[self.basic] = True
        for j in removed:
            self.at_upper[j] = False
            self.x[j] = self._nonbasic_value(j)
        return self._refactor()

    def _repair_basis(self) -> bool:
        """Rebuild a nonsingular basis, keeping current columns if possible.

        Greedy Gram--Schmidt over current basic columns first, then slack
        identity columns; if even that inverts poorly, fall back to the
        all-slack basis, which is exactly invertible, and re-optimize from
        there.  This method cannot fail on a well-formed problem.
        """
        m, n = self.m, self.n
        if m == 0:
            return True
        candidates = list(self.basic) + [n + i for i in range(m) if not self.is_basic[n + i]]
        Q = np.zeros((m, m))
        rank = 0
        chosen: List[int] = []
        for j in candidates:
            if rank == m:
                break
            a = self.Afull[:, j].astype(float)
            r = a - Q[:, :rank] @ (Q[:, :rank].T @ a)
            nr = np.linalg.norm(r)
            if nr > 1e-6 * (1.0 + np.linalg.norm(a)):
                Q[:, rank] = r / nr
                rank += 1
                chosen.append(j)
        if rank == m and self._install_basis(chosen):
            return True
        # the slack basis is the identity and always invertible
        return self._install_basis([n + i for i in range(m)])

    def _recompute_basics(self):
        if self.m == 0:
            return
        nb_mask = ~self.is_basic
        resid = self.prob.b - self.Afull[:, nb_mask] @ self.x[nb_mask]
        self.x[self.basic] = self.Binv @ resid

    # -- pricing -------------------------------------------------------
    def _reduced(self, cost: np.ndarray) -> np.ndarray:
        if self.m:
            y = self.Binv.T @ cost[self.basic]
            d = cost - self.Afull.T @ y
        else:
            y = np.zeros(0)
            d = cost.copy()
        self._y = y
        return d

    def _entering(self, d: np.ndarray, bland: bool):
        tol = OPT_TOL
        cand_dir = np.zeros(self.N, dtype=int)
        nb = ~self.is_basic
        lo_f = np.isfinite(self.lo)
        hi_f = np.isfinite(self.hi)
        at_up = self.at_upper & hi_f
        at_lo = nb & ~at_up & lo_f
        free = nb & ~at_up & ~lo_f
        inc = (at_lo | free) & nb & (d < -tol)
        dec = (at_up | free) & nb & (d > tol)
        cand_dir[inc] = 1
        cand_dir[dec & (cand_dir == 0)] = -1
        idx = np.nonzero(cand_dir)[0]
        if idx.size == 0:
            return None, 0
        if bland:
            q = int(idx[0])
        else:
            # largest reduced cost per unit of static column norm
            q = int(idx[np.argmax(np.abs(d[idx]) / self.colnorm[idx])])
        return q, int(cand_dir[q])

    # -- ratio test ----------------------------------------------------
    def _ratio(self, q: int, sigma: int, col: np.ndarray, phase1: bool):
        """Returns (t, r, kind); r is basic position or -1 for a bound flip."""
        m = self.m
        best_t, best_r, best_kind = np.inf, -1, ""
        if m:
            xB = self.x[self.basic]
            loB = self.lo[self.basic]
            hiB = self.hi[self.basic]
            rate = -sigma * col  # d x_B / d t
            live = np.abs(rate) > PIVOT_FLOOR
            up = live & (rate > 0)
            dn = live & (rate < 0)
            # default targets: feasible basics block at the bound they approach
            to_upper = up & np.isfinite(hiB)
            to_lower = dn & np.isfinite(loB)
            tgt_val = np.where(to_upper, hiB, np.where(to_lower, loB, np.nan))
            tgt_up = to_upper
            if phase1:
                below = xB < loB - FEAS_TOL
                above = xB > hiB + FEAS_TOL
                # infeasible basics block only when re-entering their box
                tgt_val = np.where(below, np.where(up, loB, np.nan), tgt_val)
                tgt_val = np.where(above, np.where(dn, hiB, np.nan), tgt_val)
                tgt_up = np.where(below, False, np.where(above, True, tgt_up))
            ok = live & np.isfinite(tgt_val)
            if ok.any():
                t_all = np.full(m, np.inf)
                t_all[ok] = np.maximum((tgt_val[ok] - xB[ok]) / rate[ok], 0.0)
                tmin = t_all.min()
                if np.isfinite(tmin):
                    # Harris-style: among near-minimal ratios take the
                    # largest pivot for numerical stability
                    ties = np.nonzero(t_all <= tmin + 1e-9 * (1.0 + abs(tmin)))[0]
                    best_r = int(ties[np.argmax(np.abs(col[ties]))])
                    best_t = float(t_all[best_r])
                    best_kind = "upper" if tgt_up[best_r] else "lower"
        # entering variable flipping to its opposite bound
        span = self.hi[q] - self.lo[q]
        if np.isfinite(span) and span < best_t:
            return span, -1, "flip"
        return best_t, best_r, best_kind

    # -- main loop -------------------------------------------------------
    def run(self, warm: Optional[Basis]):
        self._start(warm)
        self.iterations = 0
        status = self._phase(phase1=True)
        if status == "infeasible":
            return "infeasible"
        if status == "iteration_limit":
            return "iteration_limit"
        return self._phase(phase1=False)

    def _phase1_cost(self) -> np.ndarray:
        w = np.zeros(self.N)
        xB = self.x[self.basic]
        below = xB < self.lo[self.basic] - FEAS_TOL
        above = xB > self.hi[self.basic] + FEAS_TOL
        w[self.basic[below]] = -1.0
        w[self.basic[above]] = 1.0
        return w

    def _infeasibility(self) -> float:
        """Largest bound violation among basic variables."""
        if self.m == 0:
            return 0.0
        xB = self.x[self.basic]
        lo = self.lo[self.basic]
        hi = self.hi[self.basic]
        below = np.where(np.isfinite(lo), np.maximum(lo - xB, 0.0), 0.0)
        above = np.where(np.isfinite(hi), np.maximum(xB - hi, 0.0), 0.0)
        return float(max(below.max(initial=0.0), above.max(initial=0.0)))

    def _row_residual(self) -> float:
        if self.m == 0:
            return 0.0
        return float(np.abs(self.Afull @ self.x - self.prob.b).max())

    def _verify_state(self) -> bool:
        """True when the current state can back a termination claim.

        Cheap when clean; otherwise refactorizes (which also recomputes the
        basic values), so drift can never produce a false status.
        """
        if self._dirty == 0:
            return True
        if self._row_residual() <= 1e-9:
            # per-pivot column spot-checks plus an exact row residual make
            # a full refactorization unnecessary
            self._dirty = 0
            return True
        self._refactor() or self._repair_basis()
        self._dirty = 0
        return False

    def _phase(self, phase1: bool) -> str:
        bland = False
        degen_run = 0
        since_refactor = 0
        while True:
            if self.iterations >= self.iter_limit:
                return "iteration_limit"
            if phase1:
                if self._infeasibility() <= FEAS_TOL:
                    if self._verify_state() and self._infeasibility() <= FEAS_TOL:
                        return "feasible"
                    continue
                cost = self._phase1_cost()
            else:
                cost = self.c
            d = self._reduced(cost)
            q, sigma = self._entering(d, bland)
            if q is None:
                if not self._verify_state():
                    continue  # re-test with the refreshed factorization
                if phase1:
                    # stationary: the residual is the true phase-1 minimum
                    return "feasible" if self._infeasibility() <= 10 * FEAS_TOL else "infeasible"
                return "optimal"
            col = self.Binv @ self.Afull[:, q] if self.m else np.zeros(0)
            t, r, kind = self._ratio(q, sigma, col, phase1)
            if not np.isfinite(t):
                if phase1:
                    # cannot happen for a consistent phase-1 direction; retry clean
                    if not self._refactor():
                        return "infeasible"
                    self.iterations += 1
                    continue
                return "unbounded"
            self.iterations += 1
            since_refactor += 1
            if t <= 1e-11:
                degen_run += 1
                if degen_run >= 30:
                    bland = True
            else:
                degen_run = 0
                bland = False
            # apply the step
            if self.m:
                self.x[self.basic] -= sigma * t * col
            if r == -1:
                # bound flip of the entering variable
                self.at_upper[q] = sigma > 0
                self.x[q] = self.hi[q] if sigma > 0 else self.lo[q]
            else:
                leave = self.basic[r]
                self.x[q] = self.x[q] + sigma * t
                self.at_upper[leave] = kind == "upper"
                self.x[leave] = self.hi[leave] if kind == "upper" else self.lo[leave]
                self.basic[r] = q
                self.is_basic[leave] = False
                self.is_basic[q] = True
                self._update_binv(r, col)
                if since_refactor >= self.refactor_every:
                    since_refactor = 0
                    if not self._refactor() and not self._repair_basis():
                        raise LpError("basis became singular")

    def _update_binv(self, r: int, col: np.ndarray):
        piv = col[r]
        if abs(piv) < PIVOT_FLOOR / 10:
            if not self._refactor() and not self._repair_basis():
                raise LpError("degenerate pivot led to singular basis")
            return
        eta = -col / piv
        eta[r] = 1.0 / piv
        er = np.zeros(self.m)
        er[r] = 1.0
        self.Binv += np.outer(eta - er, self.Binv[r, :])
        self._dirty += 1
        # spot-check the updated inverse against the new basic column;
        # ill-conditioned pivot chains otherwise amplify silently
        if self.m <= 256 or self._dirty % 4 == 0:
            u = self.Binv @ self.Afull[:, self.basic[r]]
            u[r] -= 1.0
            if np.abs(u).max() > 1e-7:
                if not self._refactor() and not self._repair_basis():
                    raise LpError("basis became singular")

    # -- incremental mutation (cut loops, branching) ---------------------
    def append_rows(self, rows: np.ndarray, senses, rhs):
        """Append rows touching structural columns only; new slacks basic."""
        rows = np.asarray(rows, dtype=float).reshape(-1, self.n)
        senses = np.asarray(senses, dtype=int)
        rhs = np.asarray(rhs, dtype=float)
        k = rows.shape[0]
        if k == 0:
            return
        n, m = self.n, self.m
        new_Afull = np.zeros((m + k, self.N + k))
        new_Afull[:m, : self.N] = self.Afull
        new_Afull[m:, :n] = rows
        new_Afull[m:, self.N :] = np.eye(k)
        self.Afull = new_Afull
        s_lo = np.where(senses == LEQ, 0.0, np.where(senses == GEQ, -np.inf, 0.0))
        s_hi = np.where(senses == LEQ, np.inf, 0.0)
        self.lo = np.concatenate([self.lo, s_lo])
        self.hi = np.concatenate([self.hi, s_hi])
        self.c = np.concatenate([self.c, np.zeros(k)])
        self.at_upper = np.concatenate([self.at_upper, np.zeros(k, dtype=bool)])
        self.colnorm = np.sqrt((self.Afull * self.Afull).sum(axis=0) + 1.0)
        # block-extend the basis inverse: B' = [[B, 0], [R_B, I]]
        if m:
            R_B = new_Afull[m:, :][:, self.basic]
            top = np.hstack([self.Binv, np.zeros((m, k))])
            bot = np.hstack([-R_B @ self.Binv, np.eye(k)])
            self.Binv = np.vstack([top, bot])
        else:
            self.Binv = np.eye(k)
        new_slacks = np.arange(self.N, self.N + k)
        self.basic = np.concatenate([self.basic, new_slacks])
        is_basic = np.zeros(self.N + k, dtype=bool)
        is_basic[: self.N] = self.is_basic
        is_basic[new_slacks] = True
        self.is_basic = is_basic
        self.N += k
        self.m += k
        self.prob = self.prob.with_rows(rows, senses, rhs)
        self.x = np.concatenate([self.x, np.zeros(k)])
        self._recompute_basics()

    def change_bound(self, var: int, lo: float, hi: float):
        if lo > hi:
            raise LpError("empty bound box")
        self.prob = self.prob.with_bounds(var, lo, hi)
        self.lo[var] = lo
        self.hi[var] = hi
        if not self.is_basic[var]:
            self.x[var] = self._nonbasic_value(var)
            self._recompute_basics()

    def run_from_current(self) -> str:
        """Re-optimize from the current (possibly infeasible) basis."""
        self.iterations = 0
        status = self._phase(phase1=True)
        if status in ("infeasible", "iteration_limit"):
            return status
        return self._phase(phase1=False)

    # -- extraction ------------------------------------------------------
    def solution(self, status: str) -> LpSolution:
        n, m = self.n, self.m
        if status in ("optimal", "iteration_limit"):
            if not self._refactor():
                self._repair_basis()
            d = self._reduced(self.c)
            y = self._y
        else:
            d = np.zeros(self.N)
            y = np.zeros(m)
        x = self.x[:n].copy()
        # snap negligible bound violations introduced by the pivot floor
        np.clip(x, np.where(np.isfinite(self.prob.lo), self.prob.lo, -np.inf), np.where(np.isfinite(self.prob.hi), self.prob.hi, np.inf), out=x)
        obj = float(self.prob.c @ x) if status in ("optimal", "iteration_limit") else np.nan
        basis = Basis(self.basic.copy(), self.at_upper.copy())
        return LpSolution(status, x, obj, y.copy(), d.copy(), basis, self.prob, self.iterations)


class LpSession:
    """Incremental solve session: append rows / move bounds / warm resolve.

    The basis inverse is block-extended on row additions, so cut loops do
    not pay a refactorization per round.  One session drives one node;
    branching creates children via ``change_bound`` on a fresh session
    started from the parent basis.
    """

    def __init__(self, prob: LpProblem, warm: Optional[Basis] = None, options: Optional[dict] = None):
        self._core = _Simplex(prob, options or {})
        self._core._start(warm)
        self.status: Optional[str] = None

    @property
    def problem(self) -> LpProblem:
        return self._core.prob

    def solve(self) -> str:
        self.status = self._core.run_from_current()
        return self.status

    def add_rows(self, rows, senses, rhs) -> str:
        self._core.append_rows(rows, senses, rhs)
        self.status = self._core.run_from_current()
        return self.status

    def change_bound(self, var: int, lo: float, hi: float) -> str:
        self._core.change_bound(var, lo, hi)
        self.status = self._core.run_from_current()
        return self.status

    @property
    def x(self) -> np.ndarray:
        n = self._core.n
        x = self._core.x[:n].copy()
        lo, hi = self._core.prob.lo, self._core.prob.hi
        np.clip(x, np.where(np.isfinite(lo), lo, -np.inf), np.where(np.isfinite(hi), hi, np.inf), out=x)
        return x

    @property
    def obj(self) -> float:
        return float(self._core.prob.c @ self.x)

    @property
    def basis(self) -> Basis:
        return Basis(self._core.basic.copy(), self._core.at_upper.copy())

    def extract(self) -> LpSolution:
        if self.status is None:
            self.solve()
        return self._core.solution(self.status)


def _drop_empty_rows(prob: LpProblem):
    """Presolve: remove all-zero rows, detecting trivial infeasibility."""
    if prob.n_rows == 0:
        return prob, np.arange(0)
    norms = np.abs(prob.A).max(axis=1) if prob.n_rows else np.zeros(0)
    keep = norms > 0.0
    if np.all(keep):
        return prob, np.arange(prob.n_rows)
    for i in np.nonzero(~keep)[0]:
        s, rhs = int(prob.sense[i]), prob.b[i]
        bad = (s == LEQ and rhs < -FEAS_TOL) or (s == GEQ and rhs > FEAS_TOL) or (s == EQ and abs(rhs) > FEAS_TOL)
        if bad:
            return None, np.nonzero(keep)[0]
    sub = LpProblem(prob.c, prob.A[keep], prob.sense[keep], prob.b[keep], prob.lo, prob.hi)
    return sub, np.nonzero(keep)[0]


def solve_lp(prob: LpProblem, warm: Optional[Basis] = None, options: Optional[dict] = None) -> LpSolution:
    """Solve min c'x subject to the rows and bounds of ``prob``.

    ``warm`` may come from a previous solve of a problem with the same
    variables and a row prefix of this one; missing rows get their slack
    basic.  An iteration-limit hit is reported as its own status, never as
    a wrong answer.
    """
    options = options or {}
    sub, keep = _drop_empty_rows(prob)
    if sub is None:
        return LpSolution("infeasible", np.zeros(prob.n_vars), np.nan, np.zeros(prob.n_rows), np.zeros(prob.n_vars + prob.n_rows), None, prob)
    mapped_warm = warm
    if warm is not None and sub.n_rows != prob.n_rows:
        mapped_warm = None  # row renumbering under presolve: restart cold
    with single_thread_blas(limits=1, user_api="blas"):
        engine = _Simplex(sub, options)
        status = engine.run(mapped_warm)
        sol = engine.solution(status)
    if sub.n_rows != prob.n_rows:
        duals = np.zeros(prob.n_rows)
        duals[keep] = sol.duals
        red = np.zeros(prob.n_vars + prob.n_rows)
        red[: prob.n_vars] = sol.reduced_costs[: prob.n_vars]
        sol = LpSolution(sol.status, sol.x, sol.obj, duals, red, None, prob, sol.iterations)
    return sol


def add_rows_and_resolve(sol: LpSolution, rows, senses, rhs, options: Optional[dict] = None) -> LpSolution:
    """Append rows (cuts) and re-solve warm from the previous basis."""
    if sol.status != "optimal":
        raise LpError("warm row addition requires a prior optimal solution")
    prob = sol.problem.with_rows(rows, senses, rhs)
    return solve_lp(prob, warm=sol.basis, options=options)


def change_bounds_and_resolve(sol: LpSolution, var: int, lo: float, hi: float, options: Optional[dict] = None) -> LpSolution:
    """Tighten/relax one variable box and re-solve warm (branching support)."""
    prob = sol.problem.with_bounds(var, lo, hi)
    return solve_lp(prob, warm=sol.basis, options=options)
