"""Outlier-robust fitting and min-max robust training.

Least trimmed squares flags up to k points whose labels get free
corrections (their loss vanishes); the big-M must dominate any residual.
Min-max training runs delayed constraint generation: a master problem over
a finite scenario pool alternates with a separation oracle that returns the
most damaging perturbation, until nothing is violated.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from .data import Dataset
from .engine import EngineError, MioModel, QuadraticTerm, solve
from .linear import default_big_m

log = logging.getLogger("rmlopt")


@dataclass
class TrimmedFit:
    coefficients: np.ndarray
    outlier_flags: np.ndarray  # 1 marks a discarded point
    corrections: np.ndarray
    objective: float  # loss over kept points, recomputed
    k: int
    feature_names: Tuple[str, ...]
    gap: float = 0.0
    meta: dict = field(default_factory=dict)

    def kept_residuals(self, ds: Dataset) -> np.ndarray:
        resid = np.asarray(ds.y, dtype=float) - ds.X @ self.coefficients
        return resid[self.outlier_flags == 0]

    def to_dict(self) -> dict:
        return {
            "kind": "trimmed_fit",
            "coefficients": self.coefficients.tolist(),
            "outlier_flags": self.outlier_flags.astype(int).tolist(),
            "corrections": self.corrections.tolist(),
            "objective": self.objective,
            "k": int(self.k),
            "gap": self.gap,
            "feature_names": list(self.feature_names),
            "meta": self.meta,
        }

    @staticmethod
    def from_dict(d: dict) -> "TrimmedFit":
        return TrimmedFit(
            coefficients=np.asarray(d["coefficients"], dtype=float),
            outlier_flags=np.asarray(d["outlier_flags"], dtype=int),
            corrections=np.asarray(d["corrections"], dtype=float),
            objective=float(d["objective"]),
            k=int(d["k"]),
            feature_names=tuple(d["feature_names"]),
            gap=float(d.get("gap", 0.0)),
            meta=d.get("meta", {}),
        )


def lts_big_m(X: np.ndarray, y: np.ndarray, M_theta: float) -> float:
    """Correction bound: must dominate any achievable residual."""
    return 2.0 * (float(np.abs(y).max(initial=0.0)) + M_theta * float(np.abs(X).sum(axis=1).max(initial=0.0)))


def build_lts(ds: Dataset, k: int, M: Optional[float] = None):
    X, y = ds.X, np.asarray(ds.y, dtype=float)
    n, d = X.shape
    if not (0 <= k < n):
        raise ValueError("trim count must satisfy 0 <= k < n")
    M_theta = default_big_m(X, y)
    M_r = M if M is not None else lts_big_m(X, y, M_theta)
    m = MioModel()
    theta = [m.add_continuous(-M_theta, M_theta, name=f"theta{j}") for j in range(d)]
    # per-point caps keep the rows well-scaled; any achievable residual of
    # point i is below |y_i| + M_theta ||x_i||_1
    M_i = np.minimum(M_r, np.abs(y) + M_theta * np.abs(X).sum(axis=1) + 1.0)
    corr = [m.add_continuous(-M_i[i], M_i[i], name=f"r{i}") for i in range(n)]
    zvar = [m.add_binary(name=f"z{i}") for i in range(n)]
    for i in range(n):
        m.add_constr([corr[i], zvar[i]], [1.0, -M_i[i]], -1, 0.0)
        m.add_constr([corr[i], zvar[i]], [-1.0, -M_i[i]], -1, 0.0)

        def hook(x, ci=corr[i], zi=zvar[i]):
            x[zi] = 1.0 if abs(x[ci]) > 1e-7 else 0.0

        m.add_completion_hook(hook)
    m.add_constr(zvar, [1.0] * n, -1, float(k))
    # residual quadratic over (theta, r): sum_i (y_i - theta'x_i - r_i)^2
    A = np.hstack([X, np.eye(n)])
    P = A.T @ A
    q = -2.0 * A.T @ y
    c0 = float(y @ y)
    epi, _ = m.add_quadratic_epigraph(theta + corr, P, q, c0, name="rss")
    m.obj[epi] = 1.0
    return m, {"theta": theta, "corr": corr, "z": zvar, "rss_epi": epi, "M_r": M_r, "M_theta": M_theta}


def fit_lts(ds: Dataset, k: int, M: Optional[float] = None, options: Optional[dict] = None) -> TrimmedFit:
    """Least trimmed squares: OLS while discarding up to k worst points."""
    model, info = build_lts(ds, k, M)
    options = dict(options or {})
    if options.get("incumbent_hint") is None and ds.n > ds.d:
        # OLS warm start, flagging the k largest residuals
        X, y = ds.X, np.asarray(ds.y, dtype=float)
        th = np.linalg.lstsq(X, y, rcond=None)[0]
        resid = y - X @ th
        worst = np.argsort(-np.abs(resid))[:k]
        hint = np.zeros(model.n_vars)
        for pos, v in enumerate(info["theta"]):
            hint[v] = th[pos]
        for i in worst:
            hint[info["corr"][i]] = resid[i]
        options["incumbent_hint"] = hint
    res = solve(model, options)
    if res.x is None:
        raise EngineError(f"LTS terminated {res.status}")
    theta = np.array([res.x[v] for v in info["theta"]])
    flags = np.array([1 if res.x[v] > 0.5 else 0 for v in info["z"]])
    y = np.asarray(ds.y, dtype=float)
    resid = y - ds.X @ theta
    corr = np.where(flags == 1, resid, 0.0)  # flagged corrections absorb the residual
    kept = resid[flags == 0]
    return TrimmedFit(
        coefficients=theta,
        outlier_flags=flags,
        corrections=corr,
        objective=float(kept @ kept),
        k=k,
        feature_names=ds.feature_names,
        gap=res.gap,
        meta={"nodes": res.nodes, "M_r": info["M_r"], "root_bound": res.root_bound},
    )


def lts_root_relaxation_bound(ds: Dataset, k: int, M: Optional[float] = None, options: Optional[dict] = None) -> float:
    from .engine import root_relaxation

    model, _ = build_lts(ds, k, M)
    res = root_relaxation(model, options)
    return float(res.bound)


# ---------------------------------------------------------------------------
# robust training via delayed constraint generation
# ---------------------------------------------------------------------------


@dataclass
class UncertaintySet:
    """Either an explicit finite list of perturbation matrices, or a
    per-point flip budget on binary features."""

    kind: str  # "finite" | "flip_budget" | "linf_ball"
    perturbations: Optional[List[np.ndarray]] = None
    budget: int = 0
    radius: float = 0.0
    exact: bool = True

    @staticmethod
    def finite(perturbations: Sequence[np.ndarray]) -> "UncertaintySet":
        mats = [np.asarray(U, dtype=float) for U in perturbations]
        return UncertaintySet("finite", mats)

    @staticmethod
    def flip_budget(budget: int) -> "UncertaintySet":
        if budget < 0:
            raise ValueError("budget must be nonnegative")
        return UncertaintySet("flip_budget", None, int(budget))

    @staticmethod
    def linf_ball(radius: float) -> "UncertaintySet":
        if radius < 0:
            raise ValueError("radius must be nonnegative")
        return UncertaintySet("linf_ball", None, 0, float(radius))


@dataclass
class RobustFit:
    coefficients: np.ndarray
    objective: float  # certified worst-case total loss
    iterations: int
    scenarios: List[np.ndarray]
    violations: List[float]
    exact: bool
    feature_names: Tuple[str, ...]
    meta: dict = field(default_factory=dict)

    def write_certificate(self, path: str):
        doc = {
            "iterations": self.iterations,
            "certified_value": self.objective,
            "exact_oracle": self.exact,
            "per_iteration_violation": [float(v) for v in self.violations],
            "scenarios": [U.tolist() for U in self.scenarios],
        }
        with open(path, "w") as fh:
            json.dump(doc, fh, indent=1)

    def to_dict(self) -> dict:
        return {
            "kind": "robust_fit",
            "coefficients": self.coefficients.tolist(),
            "objective": self.objective,
            "iterations": self.iterations,
            "exact": self.exact,
            "feature_names": list(self.feature_names),
            "meta": self.meta,
        }


def hinge_total(X: np.ndarray, y: np.ndarray, theta: np.ndarray) -> float:
    return float(np.maximum(0.0, 1.0 - y * (X @ theta)).sum())


def separation_flip_budget(theta: np.ndarray, r_bar: float, ds: Dataset, budget: int, tol: float = 1e-6):
    """Exact worst case under at most ``budget`` coordinate flips per point.

    The hinge is monotone decreasing in the margin, so per point the
    adversary flips the coordinates with the largest margin damage; points
    separate, making the greedy choice exact.  Returns (U, worst_total) or
    None when the current epigraph value covers the worst case.
    """
    X = ds.X
    if not np.all(np.isin(X, (0.0, 1.0))):
        raise ValueError("flip-budget separation needs binary features")
    y = np.asarray(ds.with_labels_signed().y, dtype=float)
    n, d = X.shape
    U = np.zeros((n, d))
    total = 0.0
    for i in range(n):
        delta = y[i] * theta * (1.0 - 2.0 * X[i])  # margin change per flip
        order = np.argsort(delta)  # most damaging (most negative) first
        t_i = y[i] * float(theta @ X[i])
        for j in order[:budget]:
            if delta[j] < 0:
                U[i, j] = 1.0 - 2.0 * X[i, j]
                t_i += delta[j]
        total += max(0.0, 1.0 - t_i)
    if total <= r_bar + tol:
        return None
    return U, total


def robust_fit(
    ds: Dataset,
    uncertainty: UncertaintySet,
    theta_box: float = 10.0,
    ridge: float = 0.0,
    max_iterations: int = 50,
    separation: Optional[Callable] = None,
    options: Optional[dict] = None,
    tol: float = 1e-6,
) -> RobustFit:
    """Min-max hinge-loss training by delayed constraint generation.

    The master keeps an epigraph of the worst scenario seen; the separation
    oracle supplies the most damaging admissible perturbation until none is
    violated by more than ``tol``.  A caller-supplied inexact oracle marks
    the result heuristic.
    """
    ds_signed = ds.with_labels_signed()
    X = ds.X
    y = np.asarray(ds_signed.y, dtype=float)
    n, d = X.shape
    exact = uncertainty.exact if separation is None else getattr(separation, "exact", False)

    scenarios: List[np.ndarray] = [np.zeros((n, d))]
    if uncertainty.kind == "finite":
        pass  # scenarios arrive through separation over the finite list
    violations: List[float] = []

    def worst_case(theta: np.ndarray, r_bar: float):
        if separation is not None:
            return separation(theta, r_bar, ds_signed)
        if uncertainty.kind == "finite":
            best = None
            for U in uncertainty.perturbations:
                val = hinge_total(X + U, y, theta)
                if best is None or val > best[1]:
                    best = (U, val)
            if best is None or best[1] <= r_bar + tol:
                return None
            return best
        if uncertainty.kind == "flip_budget":
            return separation_flip_budget(theta, r_bar, ds_signed, uncertainty.budget, tol)
        if uncertainty.kind == "linf_ball":
            # per-point worst: push every feature against the margin
            U = -uncertainty.radius * np.outer(y, np.sign(theta))
            val = hinge_total(X + U, y, theta)
            if val <= r_bar + tol:
                return None
            return U, val
        raise ValueError(f"unknown uncertainty kind {uncertainty.kind!r}")

    theta_val = np.zeros(d)
    master_obj = 0.0
    iterations = 0
    for it in range(max_iterations):
        iterations = it + 1
        m = MioModel()
        theta = [m.add_continuous(-theta_box, theta_box, name=f"theta{j}") for j in range(d)]
        r = m.add_continuous(0.0, np.inf, name="worst_loss", obj=1.0)
        if ridge > 0:
            epi, _ = m.add_quadratic_epigraph(theta, ridge * np.eye(d), np.zeros(d), 0.0, name="ridge")
            m.obj[epi] = 1.0
        for s_id, U in enumerate(scenarios):
            Xs = X + U
            hv = [m.add_continuous(0.0, np.inf, name=f"h{s_id}_{i}") for i in range(n)]
            for i in range(n):
                # h_i >= 1 - y_i theta' xs_i
                m.add_constr([hv[i]] + theta, [-1.0] + list(-y[i] * Xs[i]), -1, -1.0)
            m.add_constr(hv + [r], [1.0] * n + [-1.0], -1, 0.0)
        res = solve(m, options)
        if res.x is None:
            raise EngineError(f"robust master terminated {res.status}")
        new_master = float(res.obj)
        if new_master < master_obj - 1e-7 * (1 + abs(master_obj)):
            raise EngineError("master objective decreased across iterations")
        master_obj = new_master
        theta_val = np.array([res.x[v] for v in theta])
        r_val = float(res.x[r])
        hit = worst_case(theta_val, r_val)
        if hit is None:
            violations.append(0.0)
            break
        U, val = hit
        violations.append(float(val - r_val))
        scenarios.append(np.asarray(U, dtype=float))
    else:
        log.warning("constraint generation hit the iteration cap with violations left")
    return RobustFit(
        coefficients=theta_val,
        objective=master_obj,
        iterations=iterations,
        scenarios=scenarios,
        violations=violations,
        exact=exact,
        feature_names=ds.feature_names,
        meta={"ridge": ridge, "theta_box": theta_box, "uncertainty": uncertainty.kind},
    )
