"""Sparse additive models: L0/L2 regression, integer risk scores, sparse SVM.

The regression builders share one variable layout across the big-M and
perspective formulations (theta block, indicator block, per-coordinate ridge
epigraphs, residual epigraph) so that relaxation bounds are directly
comparable: any cut valid for the big-M model is valid for the perspective
model, whose cone cuts only tighten further.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .data import Dataset
from .engine import (
    EngineError,
    LogisticTerm,
    MioModel,
    PerspectiveTerm,
    QuadraticTerm,
    SolveResult,
    add_big_m_link,
    solve,
)

log = logging.getLogger("rmlopt")

SUPPORT_TOL = 1e-7


def default_big_m(X: np.ndarray, y: np.ndarray, lam2: float = 0.0) -> float:
    """10x the largest ridge/OLS warm-start coefficient, floored at 1."""
    d = X.shape[1]
    G = X.T @ X + (lam2 + 1e-8) * np.eye(d)
    theta = np.linalg.solve(G, X.T @ y)
    return max(1.0, 10.0 * float(np.abs(theta).max(initial=0.0)))


@dataclass
class SparseLinearModel:
    coefficients: np.ndarray
    support: List[int]
    objective: float
    formulation: str  # bigM | perspective | fairness-augmented | svm
    feature_names: Tuple[str, ...]
    intercept: Optional[float] = None
    gap: float = 0.0
    meta: dict = field(default_factory=dict)

    def predict(self, X: np.ndarray) -> np.ndarray:
        out = X @ self.coefficients
        if self.intercept is not None:
            out = out + self.intercept
        return out

    def predict_label(self, X: np.ndarray) -> np.ndarray:
        return np.where(self.predict(X) >= 0.0, 1.0, -1.0)

    def to_dict(self) -> dict:
        return {
            "kind": "sparse_linear",
            "formulation": self.formulation,
            "coefficients": self.coefficients.tolist(),
            "intercept": self.intercept,
            "support": list(map(int, self.support)),
            "objective": self.objective,
            "gap": self.gap,
            "feature_names": list(self.feature_names),
            "meta": self.meta,
        }

    @staticmethod
    def from_dict(d: dict) -> "SparseLinearModel":
        return SparseLinearModel(
            coefficients=np.asarray(d["coefficients"], dtype=float),
            support=list(d["support"]),
            objective=float(d["objective"]),
            formulation=d["formulation"],
            feature_names=tuple(d["feature_names"]),
            intercept=d.get("intercept"),
            gap=float(d.get("gap", 0.0)),
            meta=d.get("meta", {}),
        )


def _design(ds: Dataset, fit_intercept: bool) -> Tuple[np.ndarray, List[str]]:
    if fit_intercept:
        return np.hstack([ds.X, np.ones((ds.n, 1))]), list(ds.feature_names) + ["(intercept)"]
    return ds.X, list(ds.feature_names)


def build_sparse_regression(
    ds: Dataset,
    lam0: float,
    lam2: float,
    mode: str = "bigM",
    M: Optional[float] = None,
    fit_intercept: bool = False,
) -> Tuple[MioModel, dict]:
    """L0/L2 least squares as a MioModel; returns (model, variable layout).

    Layout: theta_j, then z_j, then (when lam2 > 0) ridge epigraphs r_j,
    optional intercept, then the residual epigraph.  In big-M mode the r_j
    carry plain tangent cuts of theta^2; in perspective mode they carry
    rotated-cone cuts -- same feasible set at integer points, tighter
    relaxation.
    """
    if lam0 < 0 or lam2 < 0:
        raise ValueError("penalties must be nonnegative")
    if mode not in ("bigM", "perspective"):
        raise ValueError(f"unknown mode {mode!r}")
    if mode == "perspective" and lam2 == 0.0:
        log.warning("perspective mode needs a ridge term; downgrading to bigM")
        mode = "bigM"
    X, y = ds.X, np.asarray(ds.y, dtype=float)
    n, d = X.shape
    if M is None:
        M = default_big_m(X, y, lam2)
    m = MioModel()
    theta = [m.add_continuous(-M, M, name=f"theta{j}") for j in range(d)]
    zvar = [m.add_binary(name=f"z{j}", obj=lam0) for j in range(d)]
    for j in range(d):
        add_big_m_link(m, theta[j], zvar[j], M)
    rvar: List[int] = []
    if lam2 > 0:
        for j in range(d):
            r = m.add_continuous(0.0, M * M, name=f"r{j}", obj=lam2)
            rvar.append(r)
            if mode == "perspective":
                m.add_term(PerspectiveTerm(theta[j], zvar[j], r))
            else:
                m.add_term(QuadraticTerm([theta[j]], [[1.0]], [0.0], 0.0, r))
    cols = list(theta)
    if fit_intercept:
        b_cap = 10.0 * (float(np.abs(y).max(initial=0.0)) + 1.0)
        icpt = m.add_continuous(-b_cap, b_cap, name="intercept")
        cols.append(icpt)
    else:
        icpt = None
    Xd = np.hstack([X, np.ones((n, 1))]) if fit_intercept else X
    P = Xd.T @ Xd
    q = -2.0 * (Xd.T @ y)
    c0 = float(y @ y)
    epi, _ = m.add_quadratic_epigraph(cols, P, q, c0, name="rss")
    m.obj[epi] = 1.0
    info = {"theta": theta, "z": zvar, "r": rvar, "rss_epi": epi, "intercept": icpt, "M": M, "mode": mode}
    return m, info


def _extract_linear(ds, res: SolveResult, info, lam0, lam2, formulation, feature_names) -> SparseLinearModel:
    x = res.x
    coefs = np.array([x[j] for j in info["theta"]])
    support = [j for j in range(len(coefs)) if abs(coefs[j]) > SUPPORT_TOL]
    icpt = float(x[info["intercept"]]) if info.get("intercept") is not None else None
    return SparseLinearModel(
        coefficients=coefs,
        support=support,
        objective=float(res.obj),
        formulation=formulation,
        feature_names=tuple(feature_names),
        intercept=icpt,
        gap=res.gap,
        meta={
            "lam0": lam0,
            "lam2": lam2,
            "M": info["M"],
            "nodes": res.nodes,
            "cuts": res.cut_count,
            "root_bound": res.root_bound,
        },
    )


def fit_sparse_regression(
    ds: Dataset,
    lam0: float,
    lam2: float = 0.0,
    mode: str = "bigM",
    M: Optional[float] = None,
    fit_intercept: bool = False,
    options: Optional[dict] = None,
) -> SparseLinearModel:
    """Least squares with an exact L0 penalty (and optional ridge)."""
    model, info = build_sparse_regression(ds, lam0, lam2, mode, M, fit_intercept)
    options = dict(options or {})
    if options.get("incumbent_hint") is None:
        # dense ridge solution as a feasibility hint; the engine completes
        # indicators and epigraphs and verifies before accepting
        Xd = np.hstack([ds.X, np.ones((ds.n, 1))]) if fit_intercept else ds.X
        G = Xd.T @ Xd + (lam2 + 1e-8) * np.eye(Xd.shape[1])
        th = np.linalg.solve(G, Xd.T @ np.asarray(ds.y, dtype=float))
        hint = np.zeros(model.n_vars)
        for pos, j in enumerate(info["theta"]):
            hint[j] = np.clip(th[pos], -info["M"], info["M"])
        if info.get("intercept") is not None:
            hint[info["intercept"]] = th[-1]
        options["incumbent_hint"] = hint
    res = solve(model, options)
    if res.x is None:
        raise EngineError(f"sparse regression terminated {res.status} without incumbent")
    return _extract_linear(ds, res, info, lam0, lam2, info["mode"], ds.feature_names)


def regression_objective(ds: Dataset, model_: SparseLinearModel, lam0: float, lam2: float) -> float:
    """Recompute the training objective from scratch (audits)."""
    resid = np.asarray(ds.y, dtype=float) - model_.predict(ds.X)
    theta = model_.coefficients
    return float(resid @ resid + lam0 * np.sum(np.abs(theta) > SUPPORT_TOL) + lam2 * theta @ theta)


# ---------------------------------------------------------------------------
# risk scores
# ---------------------------------------------------------------------------


@dataclass
class RiskScore:
    weights: np.ndarray  # integers
    intercept: Optional[int]
    support: List[int]
    objective: float
    bounds: Tuple[int, int]
    feature_names: Tuple[str, ...]
    gap: float = 0.0
    meta: dict = field(default_factory=dict)

    def score(self, X: np.ndarray) -> np.ndarray:
        s = X @ self.weights
        if self.intercept is not None:
            s = s + self.intercept
        return s

    def probability(self, X: np.ndarray) -> np.ndarray:
        return 1.0 / (1.0 + np.exp(-self.score(X)))

    def score_table(self) -> List[Tuple[int, float]]:
        """Achievable integer scores with their sigmoid probabilities."""
        neg = int(sum(min(w, 0) for w in self.weights))
        pos = int(sum(max(w, 0) for w in self.weights))
        off = int(self.intercept or 0)
        return [(s + off, 1.0 / (1.0 + math.exp(-(s + off)))) for s in range(neg, pos + 1)]

    def to_dict(self) -> dict:
        return {
            "kind": "risk_score",
            "weights": [int(w) for w in self.weights],
            "intercept": None if self.intercept is None else int(self.intercept),
            "support": list(map(int, self.support)),
            "objective": self.objective,
            "bounds": list(self.bounds),
            "gap": self.gap,
            "feature_names": list(self.feature_names),
            "meta": self.meta,
        }

    @staticmethod
    def from_dict(d: dict) -> "RiskScore":
        return RiskScore(
            weights=np.asarray(d["weights"], dtype=int),
            intercept=d.get("intercept"),
            support=list(d["support"]),
            objective=float(d["objective"]),
            bounds=tuple(d["bounds"]),
            feature_names=tuple(d["feature_names"]),
            gap=float(d.get("gap", 0.0)),
            meta=d.get("meta", {}),
        )


def logistic_objective(X, y, weights, intercept, lam0) -> float:
    t = y * (X @ weights + (intercept or 0.0))
    loss = np.where(t > 40, np.exp(-np.minimum(t, 700)), np.log1p(np.exp(-np.clip(t, -700, 40))))
    return float(loss.sum() + lam0 * np.sum(np.abs(weights) > SUPPORT_TOL))


def build_risk_score(ds: Dataset, lam0: float, l: int, u: int, use_intercept: bool = True):
    if not (l <= 0 <= u) or int(l) != l or int(u) != u:
        raise ValueError("answer bounds must be integers with l <= 0 <= u")
    ds = ds.with_labels_signed()
    X, y = ds.X, np.asarray(ds.y, dtype=float)
    n, d = X.shape
    m = MioModel()
    theta = [m.add_integer(l, u, name=f"w{j}") for j in range(d)]
    zvar = [m.add_binary(name=f"z{j}", obj=lam0) for j in range(d)]
    for j in range(d):
        # l z_j <= theta_j <= u z_j keeps weights on the selected questions
        m.add_constr([theta[j], zvar[j]], [1.0, -float(u)], -1, 0.0)
        m.add_constr([theta[j], zvar[j]], [-1.0, float(l)], -1, 0.0)

        def hook(x, tj=theta[j], zj=zvar[j]):
            x[zj] = 1.0 if abs(x[tj]) > 0.5 else 0.0

        m.add_completion_hook(hook)
    icpt = None
    cols = list(theta)
    if use_intercept:
        # integer offset kept on a 3x wider range than the answers for calibration
        icpt = m.add_integer(3 * l, 3 * u, name="intercept")
        cols.append(icpt)
    for i in range(n):
        w = y[i] * (np.concatenate([X[i], [1.0]]) if use_intercept else X[i])
        epi, _ = m.add_logistic_epigraph(cols, w, name=f"loss{i}")
        m.obj[epi] = 1.0
    return ds, m, {"theta": theta, "z": zvar, "intercept": icpt}


def fit_risk_score(
    ds: Dataset,
    lam0: float,
    l: int = -5,
    u: int = 5,
    use_intercept: bool = True,
    options: Optional[dict] = None,
) -> RiskScore:
    """Integer-weight sparse logistic model via dynamic outer approximation."""
    ds_signed, model, info = build_risk_score(ds, lam0, l, u, use_intercept)
    res = solve(model, options)
    if res.x is None:
        raise EngineError(f"risk score terminated {res.status} without incumbent")
    w = np.array([int(round(res.x[j])) for j in info["theta"]])
    icpt = int(round(res.x[info["intercept"]])) if info["intercept"] is not None else None
    obj = logistic_objective(ds_signed.X, np.asarray(ds_signed.y, dtype=float), w, icpt, lam0)
    return RiskScore(
        weights=w,
        intercept=icpt,
        support=[j for j in range(len(w)) if w[j] != 0],
        objective=obj,
        bounds=(int(l), int(u)),
        feature_names=ds.feature_names,
        gap=res.gap,
        meta={"lam0": lam0, "nodes": res.nodes, "cuts": res.cut_count, "label_map": ds_signed.label_map},
    )


# ---------------------------------------------------------------------------
# sparse support vector machines
# ---------------------------------------------------------------------------


def build_sparse_svm(ds: Dataset, lam1: float, lam0: float, M: Optional[float] = None):
    ds = ds.with_labels_signed()
    X, y = ds.X, np.asarray(ds.y, dtype=float)
    n, d = X.shape
    if M is None:
        M = default_big_m(X, y)
    m = MioModel()
    theta = [m.add_continuous(-M, M, name=f"theta{j}") for j in range(d)]
    zvar = [m.add_binary(name=f"z{j}", obj=lam0) for j in range(d)]
    for j in range(d):
        add_big_m_link(m, theta[j], zvar[j], M)
    hinge = [m.add_continuous(0.0, np.inf, name=f"h{i}", obj=lam1) for i in range(n)]
    for i in range(n):
        # y_i theta'x_i >= 1 - h_i
        m.add_constr(theta + [hinge[i]], list(-y[i] * X[i]) + [-1.0], -1, -1.0)
    epi, _ = m.add_quadratic_epigraph(theta, 0.5 * np.eye(d), np.zeros(d), 0.0, name="ridge")
    m.obj[epi] = 1.0
    return ds, m, {"theta": theta, "z": zvar, "hinge": hinge, "M": M}


def svm_objective(ds: Dataset, model_: SparseLinearModel, lam1: float, lam0: float) -> float:
    y = np.asarray(ds.with_labels_signed().y, dtype=float)
    margins = y * model_.predict(ds.X)
    hinge = np.maximum(0.0, 1.0 - margins)
    th = model_.coefficients
    return float(0.5 * th @ th + lam1 * hinge.sum() + lam0 * np.sum(np.abs(th) > SUPPORT_TOL))


def fit_sparse_svm(
    ds: Dataset,
    lam1: float,
    lam0: float,
    M: Optional[float] = None,
    options: Optional[dict] = None,
) -> SparseLinearModel:
    """Hinge-loss classifier with ridge margin and exact L0 sparsity."""
    ds_signed, model, info = build_sparse_svm(ds, lam1, lam0, M)
    res = solve(model, options)
    if res.x is None:
        raise EngineError(f"sparse SVM terminated {res.status} without incumbent")
    out = _extract_linear(ds_signed, res, info, lam0, 0.0, "svm", ds.feature_names)
    out.meta["lam1"] = lam1
    out.meta["label_map"] = ds_signed.label_map
    # objective recomputed from the incumbent hinge values, not the surrogate
    out.objective = svm_objective(ds_signed, out, lam1, lam0)
    return out


# ---------------------------------------------------------------------------
# hierarchical category constraints
# ---------------------------------------------------------------------------


class HierarchyError(Exception):
    pass


@dataclass(frozen=True)
class CategoryTree:
    """Rooted tree over category vertices; leaves are observed values."""

    parent: Dict[str, Optional[str]]

    def __post_init__(self):
        roots = [v for v, p in self.parent.items() if p is None]
        if len(roots) != 1:
            raise HierarchyError(f"expected one root, found {len(roots)}")
        for v in self.parent:
            seen = set()
            cur = v
            while cur is not None:
                if cur in seen:
                    raise HierarchyError(f"cycle through {cur!r}")
                seen.add(cur)
                nxt = self.parent.get(cur, "__missing__")
                if nxt == "__missing__":
                    raise HierarchyError(f"vertex {cur!r} has an undeclared parent")
                cur = nxt

    @property
    def root(self) -> str:
        return next(v for v, p in self.parent.items() if p is None)

    def vertices(self) -> List[str]:
        return sorted(self.parent)

    def leaves(self) -> List[str]:
        parents = {p for p in self.parent.values() if p is not None}
        return sorted(v for v in self.parent if v not in parents)

    def path_to_root(self, leaf: str) -> List[str]:
        out = []
        cur = leaf
        while cur is not None:
            out.append(cur)
            cur = self.parent[cur]
        return out


@dataclass
class HierarchyBundle:
    """Path constraints: at most one selected vertex per root-to-leaf path."""

    vertices: List[str]
    paths: List[List[str]]  # one per leaf

    def n_constraints(self) -> int:
        return len(self.paths)

    def attach(self, model: MioModel, z_of_vertex: Dict[str, int]) -> List[int]:
        rows = []
        for path in self.paths:
            idx = [z_of_vertex[v] for v in path]
            rows.append(model.add_constr(idx, [1.0] * len(idx), -1, 1.0))
        return rows

    def selection_feasible(self, selected: Sequence[str]) -> bool:
        chosen = set(selected)
        return all(len(chosen.intersection(path)) <= 1 for path in self.paths)


def hierarchy_constraints(tree: CategoryTree) -> HierarchyBundle:
    """One row per leaf: sum of selections along its root path <= 1."""
    return HierarchyBundle(tree.vertices(), [tree.path_to_root(leaf) for leaf in tree.leaves()])


def fit_hierarchical_regression(
    ds: Dataset,
    tree: CategoryTree,
    lam0: float,
    lam2: float = 0.0,
    mode: str = "bigM",
    M: Optional[float] = None,
    options: Optional[dict] = None,
) -> SparseLinearModel:
    """Sparse regression whose columns are category-tree vertices.

    Dataset columns must be named after tree vertices (indicator encoding of
    membership at every level); the path constraints stop the model from
    selecting two vertices describing the same observation.
    """
    missing = [v for v in tree.vertices() if v not in ds.feature_names]
    if missing:
        raise HierarchyError(f"dataset lacks vertex columns: {missing[:5]}")
    model, info = build_sparse_regression(ds, lam0, lam2, mode, M)
    z_of_vertex = {v: info["z"][ds.feature_names.index(v)] for v in tree.vertices()}
    bundle = hierarchy_constraints(tree)
    bundle.attach(model, z_of_vertex)
    res = solve(model, options)
    if res.x is None:
        raise EngineError(f"hierarchical regression terminated {res.status}")
    out = _extract_linear(ds, res, info, lam0, lam2, info["mode"], ds.feature_names)
    out.meta["hierarchy_leaves"] = len(bundle.paths)
    return out
