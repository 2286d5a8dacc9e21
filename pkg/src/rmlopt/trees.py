"""Optimal classification trees (flow MILP), rule lists and decision sets.

Tree nodes are indexed breadth-first with the root at 1; a depth-D tree has
internal nodes 1..2^D-1 and leaves 2^D..2^(D+1)-1 (depth counts arc levels,
so D=2 means two stacked tests).  Internal nodes may predict, which prunes
the subtree below them.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .data import Dataset
from .engine import EngineError, MioModel, SolveResult, solve

log = logging.getLogger("rmlopt")

MAX_POOL = 5000
MAX_LITERALS = 3


def internal_nodes(depth: int) -> List[int]:
    return list(range(1, 2 ** depth))

def leaf_nodes(depth: int) -> List[int]:
    return list(range(2 ** depth, 2 ** (depth + 1)))

def ancestors(k: int) -> List[int]:
    out = []
    while k > 1:
        k //= 2
        out.append(k)
    return out


def _require_binary(ds: Dataset):
    if not np.all(np.isin(ds.X, (0.0, 1.0))):
        raise ValueError("tree formulations need binarized features; call binarize() first")


@dataclass
class TreeModel:
    """Routing tree: tests on binary features, predictions at some nodes."""

    depth: int
    test_feature: Dict[int, int]
    prediction: Dict[int, object]
    labels: Tuple[object, ...]
    feature_names: Tuple[str, ...]
    objective: float = 0.0
    gap: float = 0.0
    kind: str = "classification"  # or "policy"
    meta: dict = field(default_factory=dict)

    def route(self, x: np.ndarray) -> List[int]:
        path = [1]
        k = 1
        while k not in self.prediction:
            j = self.test_feature[k]
            k = 2 * k if x[j] == 0 else 2 * k + 1
            path.append(k)
        return path

    def predict_one(self, x: np.ndarray):
        return self.prediction[self.route(x)[-1]]

    def predict(self, X: np.ndarray) -> np.ndarray:
        return np.array([self.predict_one(x) for x in X])

    def accuracy(self, ds: Dataset) -> int:
        pred = self.predict(ds.X)
        return int(np.sum(pred == np.asarray(ds.y)))

    def render_text(self) -> str:
        lines: List[str] = []

        def walk(k: int, indent: int):
            pad = "  " * indent
            if k in self.prediction:
                word = "treat" if self.kind == "policy" else "predict"
                lines.append(f"{pad}{word} {self.prediction[k]}")
                return
            j = self.test_feature[k]
            lines.append(f"{pad}if {self.feature_names[j]} == 0:")
            walk(2 * k, indent + 1)
            lines.append(f"{pad}else:")
            walk(2 * k + 1, indent + 1)

        walk(1, 0)
        return "\n".join(lines)

    def to_dict(self) -> dict:
        return {
            "kind": "tree",
            "tree_kind": self.kind,
            "depth": self.depth,
            "tests": {str(k): int(j) for k, j in self.test_feature.items()},
            "predictions": {str(k): p for k, p in self.prediction.items()},
            "labels": list(self.labels),
            "feature_names": list(self.feature_names),
            "objective": self.objective,
            "gap": self.gap,
            "meta": self.meta,
        }

    @staticmethod
    def from_dict(d: dict) -> "TreeModel":
        return TreeModel(
            depth=int(d["depth"]),
            test_feature={int(k): int(v) for k, v in d["tests"].items()},
            prediction={int(k): v for k, v in d["predictions"].items()},
            labels=tuple(d["labels"]),
            feature_names=tuple(d["feature_names"]),
            objective=float(d["objective"]),
            gap=float(d.get("gap", 0.0)),
            kind=d.get("tree_kind", "classification"),
            meta=d.get("meta", {}),
        )


def build_flow_tree(
    X: np.ndarray,
    depth: int,
    classes: Sequence[object],
    scores: Optional[np.ndarray] = None,
    y: Optional[np.ndarray] = None,
    rule_list: bool = False,
    assign_all: bool = False,
):
    """Flow MILP over a depth-D tree skeleton.

    Classification mode (``y`` given): each point earns 1 when it reaches a
    node predicting its label; points may stay unrouted.  Assignment mode
    (``scores`` n x |classes|): every point is routed and earns the score of
    the class predicted where it exits; used for policy trees and for
    fairness overlays that need the predicted class of every point.
    """
    n, d = X.shape
    B = internal_nodes(depth)
    L = leaf_nodes(depth)
    nodes = B + L
    ncls = len(classes)
    m = MioModel()
    theta = {(k, j): m.add_binary(name=f"t{k}_{j}") for k in B for j in range(d)}
    phi = {(k, c): m.add_binary(name=f"p{k}_{c}") for k in nodes for c in range(ncls)}
    inflow = {}
    sink = {}
    for i in range(n):
        for k in nodes:
            lo = 1.0 if (assign_all and k == 1) else 0.0
            inflow[i, k] = m.add_var(lo, 1.0, "bin", name=f"f{i}_{k}", branch_class=1)
            sink[i, k] = m.add_var(0.0, 1.0, "bin", name=f"s{i}_{k}", branch_class=1)
    # each internal node tests, predicts, or sits below a predictor
    for k in B:
        idx = [theta[k, j] for j in range(d)] + [phi[k, c] for c in range(ncls)]
        idx += [phi[a, c] for a in ancestors(k) for c in range(ncls)]
        m.add_constr(idx, [1.0] * len(idx), 0, 1.0)
    for k in L:
        idx = [phi[k, c] for c in range(ncls)]
        idx += [phi[a, c] for a in ancestors(k) for c in range(ncls)]
        m.add_constr(idx, [1.0] * len(idx), 0, 1.0)
    for i in range(n):
        for k in B:
            # conservation: inflow = left + right + sink
            m.add_constr(
                [inflow[i, k], inflow[i, 2 * k], inflow[i, 2 * k + 1], sink[i, k]],
                [1.0, -1.0, -1.0, -1.0],
                0,
                0.0,
            )
            zero_j = [theta[k, j] for j in range(d) if X[i, j] == 0]
            one_j = [theta[k, j] for j in range(d) if X[i, j] == 1]
            m.add_constr([inflow[i, 2 * k]] + zero_j, [1.0] + [-1.0] * len(zero_j), -1, 0.0)
            m.add_constr([inflow[i, 2 * k + 1]] + one_j, [1.0] + [-1.0] * len(one_j), -1, 0.0)
        for k in L:
            m.add_constr([inflow[i, k], sink[i, k]], [1.0, -1.0], 0, 0.0)
    assign = None
    if y is not None:
        cls_of = {c: idx for idx, c in enumerate(classes)}
        for i in range(n):
            yi = cls_of[y[i]]
            for k in nodes:
                m.add_constr([sink[i, k], phi[k, yi]], [1.0, -1.0], -1, 0.0)
            m.set_objective([sink[i, k] for k in nodes], [-1.0] * len(nodes))
    else:
        # assignment mode: exits allowed at any predicting node; linking
        # variables pick up the predicted class (continuous: forced by
        # integrality of sink and phi)
        assign = {(i, c): m.add_var(0.0, 1.0, "cont", name=f"w{i}_{c}") for i in range(n) for c in range(ncls)}
        for i in range(n):
            for k in nodes:
                idx = [sink[i, k]] + [phi[k, c] for c in range(ncls)]
                m.add_constr(idx, [1.0] + [-1.0] * ncls, -1, 0.0)
            m.add_constr([assign[i, c] for c in range(ncls)], [1.0] * ncls, 0, 1.0)
            for k in nodes:
                for c in range(ncls):
                    m.add_constr([assign[i, c], sink[i, k], phi[k, c]], [-1.0, 1.0, 1.0], -1, 1.0)
        if scores is not None:
            for i in range(n):
                for c in range(ncls):
                    m.obj[assign[i, c]] = -float(scores[i, c])
    if rule_list:
        # every testing node needs a child that predicts
        for k in B:
            idx = [theta[k, j] for j in range(d)]
            idx += [phi[2 * k, c] for c in range(ncls)] + [phi[2 * k + 1, c] for c in range(ncls)]
            m.add_constr(idx, [1.0] * d + [-1.0] * (2 * ncls), -1, 0.0)
    info = {"theta": theta, "phi": phi, "inflow": inflow, "sink": sink, "assign": assign, "B": B, "L": L, "classes": list(classes)}
    return m, info


def extract_tree(res: SolveResult, info, depth: int, feature_names, kind="classification") -> TreeModel:
    x = res.x
    tests = {}
    preds = {}
    classes = info["classes"]
    for (k, j), v in info["theta"].items():
        if x[v] > 0.5:
            tests[k] = j
    for (k, c), v in info["phi"].items():
        if x[v] > 0.5:
            preds[k] = classes[c]
    # drop structure on dead paths (below a predicting ancestor)
    tests = {k: j for k, j in tests.items() if _on_live_path(k, preds)}
    return TreeModel(
        depth=depth,
        test_feature=tests,
        prediction={k: p for k, p in preds.items() if _on_live_path(k, preds, include_self=True)},
        labels=tuple(classes),
        feature_names=tuple(feature_names),
        objective=float(res.obj),
        gap=res.gap,
        kind=kind,
        meta={"nodes": res.nodes, "cuts": res.cut_count},
    )


def _on_live_path(k: int, preds: Dict[int, object], include_self: bool = False) -> bool:
    for a in ancestors(k):
        if a in preds:
            return False
    if not include_self and k in preds:
        return False
    return True


def fit_tree(ds: Dataset, depth: int, options: Optional[dict] = None) -> TreeModel:
    """Exact depth-D classification tree maximizing training accuracy."""
    _require_binary(ds)
    if depth < 1:
        raise ValueError("depth must be >= 1")
    classes = sorted(set(np.asarray(ds.y).tolist()))
    model, info = build_flow_tree(ds.X, depth, classes, y=np.asarray(ds.y))
    res = solve(model, options)
    if res.x is None:
        raise EngineError(f"tree fit terminated {res.status}")
    tree = extract_tree(res, info, depth, ds.feature_names)
    tree.objective = -res.obj  # stored as number of correct classifications
    tree.meta["status"] = res.status
    acc = tree.accuracy(ds)
    if abs(acc - tree.objective) > 1e-6:
        raise EngineError(f"tree routing recount {acc} disagrees with objective {tree.objective}")
    return tree


def fit_rule_list(ds: Dataset, depth: int, options: Optional[dict] = None) -> TreeModel:
    """Classification tree constrained to rule-list shape."""
    _require_binary(ds)
    classes = sorted(set(np.asarray(ds.y).tolist()))
    model, info = build_flow_tree(ds.X, depth, classes, y=np.asarray(ds.y), rule_list=True)
    res = solve(model, options)
    if res.x is None:
        raise EngineError(f"rule list fit terminated {res.status}")
    tree = extract_tree(res, info, depth, ds.feature_names)
    tree.objective = -res.obj
    tree.kind = "rule_list"
    acc = tree.accuracy(ds)
    if abs(acc - tree.objective) > 1e-6:
        raise EngineError("rule list recount mismatch")
    return tree


def is_rule_list_shape(tree: TreeModel) -> bool:
    """Every testing node has at least one predicting child."""
    for k in tree.test_feature:
        if 2 * k in tree.prediction or 2 * k + 1 in tree.prediction:
            continue
        return False
    return True


# ---------------------------------------------------------------------------
# decision sets
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Conjunction:
    """AND of literals; literal = (feature index, required binary value)."""

    literals: Tuple[Tuple[int, int], ...]

    def covers(self, X: np.ndarray) -> np.ndarray:
        out = np.ones(X.shape[0], dtype=bool)
        for j, v in self.literals:
            out &= X[:, j] == v
        return out

    def describe(self, names: Sequence[str]) -> str:
        return " and ".join(f"{names[j]} == {v}" for j, v in self.literals)

    @property
    def n_literals(self) -> int:
        return len(self.literals)


def conjunction_pool(d: int, max_width: int) -> List[Conjunction]:
    """All conjunctions of <= max_width literals, lexicographic, capped."""
    width = min(max_width, MAX_LITERALS)
    pool: List[Conjunction] = []
    for w in range(1, width + 1):
        for feats in itertools.combinations(range(d), w):
            for vals in itertools.product((0, 1), repeat=w):
                pool.append(Conjunction(tuple(zip(feats, vals))))
                if len(pool) >= MAX_POOL:
                    log.warning("conjunction pool capped at %d", MAX_POOL)
                    return pool
    return pool


@dataclass
class DecisionSet:
    conjunctions: List[Conjunction]
    complexity_budget: float
    objective: float
    feature_names: Tuple[str, ...]
    gap: float = 0.0
    meta: dict = field(default_factory=dict)

    @property
    def total_literals(self) -> int:
        return sum(c.n_literals for c in self.conjunctions)

    def predict(self, X: np.ndarray) -> np.ndarray:
        covered = np.zeros(X.shape[0], dtype=bool)
        for c in self.conjunctions:
            covered |= c.covers(X)
        return np.where(covered, 1.0, -1.0)

    def accuracy(self, ds: Dataset) -> int:
        y = np.asarray(ds.with_labels_signed().y, dtype=float)
        return int(np.sum(self.predict(ds.X) == y))

    def describe(self) -> List[str]:
        return [c.describe(self.feature_names) for c in self.conjunctions]

    def to_dict(self) -> dict:
        return {
            "kind": "decision_set",
            "conjunctions": [[list(map(int, lit)) for lit in c.literals] for c in self.conjunctions],
            "complexity_budget": self.complexity_budget,
            "objective": self.objective,
            "gap": self.gap,
            "feature_names": list(self.feature_names),
            "meta": self.meta,
        }

    @staticmethod
    def from_dict(d: dict) -> "DecisionSet":
        conjs = [Conjunction(tuple((int(a), int(b)) for a, b in lits)) for lits in d["conjunctions"]]
        return DecisionSet(
            conjunctions=conjs,
            complexity_budget=float(d["complexity_budget"]),
            objective=float(d["objective"]),
            feature_names=tuple(d["feature_names"]),
            gap=float(d.get("gap", 0.0)),
            meta=d.get("meta", {}),
        )


def build_decision_set(
    ds: Dataset,
    budget: float,
    pool: Optional[List[Conjunction]] = None,
    max_width: int = 2,
    exact_indicators: bool = False,
):
    _require_binary(ds)
    ds_signed = ds.with_labels_signed()
    X = ds.X
    y = np.asarray(ds_signed.y, dtype=float)
    n = ds.n
    if pool is None:
        pool = conjunction_pool(ds.d, max_width)
    if not pool:
        raise ValueError("empty conjunction pool")
    cover = np.column_stack([c.covers(X) for c in pool])  # n x |K|
    m = MioModel()
    theta = [m.add_binary(name=f"c{k}") for k in range(len(pool))]
    zvar = [m.add_binary(name=f"ok{i}", obj=-1.0, branch_class=1) for i in range(n)]
    for i in range(n):
        Ki = np.nonzero(cover[i])[0]
        if y[i] < 0:
            for k in Ki:
                m.add_constr([theta[k], zvar[i]], [1.0, 1.0], -1, 1.0)
            if exact_indicators:
                # covered-by-none forces a correct negative
                m.add_constr([zvar[i]] + [theta[k] for k in Ki], [-1.0] + [-1.0] * len(Ki), -1, -1.0)
        else:
            idx = [theta[k] for k in Ki]
            m.add_constr([zvar[i]] + idx, [1.0] + [-1.0] * len(idx), -1, 0.0)
            if exact_indicators:
                for k in Ki:
                    m.add_constr([zvar[i], theta[k]], [-1.0, 1.0], -1, 0.0)
    m.add_constr(theta, [float(c.n_literals) for c in pool], -1, float(budget))
    return m, {"theta": theta, "z": zvar, "pool": pool, "cover": cover}


def fit_decision_set(
    ds: Dataset,
    budget: float,
    pool: Optional[List[Conjunction]] = None,
    max_width: int = 2,
    options: Optional[dict] = None,
) -> DecisionSet:
    """Disjunction of conjunctions maximizing training accuracy.

    A point is predicted +1 exactly when some chosen conjunction covers it;
    the total literal count is capped by ``budget``.
    """
    model, info = build_decision_set(ds, budget, pool, max_width)
    res = solve(model, options)
    if res.x is None:
        raise EngineError(f"decision set fit terminated {res.status}")
    chosen = [info["pool"][k] for k, v in enumerate(info["theta"]) if res.x[v] > 0.5]
    out = DecisionSet(
        conjunctions=chosen,
        complexity_budget=budget,
        objective=-res.obj,
        feature_names=ds.feature_names,
        gap=res.gap,
        meta={"nodes": res.nodes, "pool_size": len(info["pool"]), "label_map": ds.with_labels_signed().label_map},
    )
    acc = out.accuracy(ds)
    if abs(acc - out.objective) > 1e-6:
        raise EngineError(f"decision set recount {acc} disagrees with objective {out.objective}")
    return out
