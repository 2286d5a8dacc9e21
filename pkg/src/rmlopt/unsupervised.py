"""Interpretable clustering and Bayesian-network structure learning.

Clustering minimizes the total dissimilarity of co-clustered pairs over
either a free m-group partition or the exit nodes of a feature-split tree.
Products of assignment indicators are handled by McCormick rows or by a
convexified quadratic whose level is recorded on the result.

Network learning scores each node by least squares on its parents, big-M
links arcs to weights, and breaks cycles with integer topological labels;
subset (cycle) inequalities are available as a separating cut oracle.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .data import Dataset
from .engine import EngineError, MioModel, QuadraticTerm, solve
from .linear import default_big_m
from .trees import build_flow_tree, extract_tree, internal_nodes, leaf_nodes

log = logging.getLogger("rmlopt")


def pairwise_dissimilarity(X: np.ndarray) -> np.ndarray:
    diff = X[:, None, :] - X[None, :, :]
    return np.sqrt((diff * diff).sum(axis=2))


@dataclass
class Clustering:
    assignment: np.ndarray  # group label per datapoint
    objective: float
    mode: str  # mccormick | convexified
    convex_level: Optional[float] = None
    partitioner: str = "free"
    gap: float = 0.0
    meta: dict = field(default_factory=dict)

    def recount(self, D: np.ndarray) -> float:
        """Sum of dissimilarities over unordered co-clustered pairs."""
        n = len(self.assignment)
        total = 0.0
        for i in range(n):
            for j in range(i + 1, n):
                if self.assignment[i] == self.assignment[j]:
                    total += D[i, j]
        return total

    def to_dict(self) -> dict:
        return {
            "kind": "clustering",
            "assignment": [int(g) for g in self.assignment],
            "objective": self.objective,
            "mode": self.mode,
            "convex_level": self.convex_level,
            "partitioner": self.partitioner,
            "gap": self.gap,
            "meta": self.meta,
        }

    @staticmethod
    def from_dict(d: dict) -> "Clustering":
        return Clustering(
            assignment=np.asarray(d["assignment"], dtype=int),
            objective=float(d["objective"]),
            mode=d["mode"],
            convex_level=d.get("convex_level"),
            partitioner=d.get("partitioner", "free"),
            gap=float(d.get("gap", 0.0)),
            meta=d.get("meta", {}),
        )

    def append_to_csv(self, rows_path: str, out_path: str, column: str = "cluster"):
        import csv

        with open(rows_path, newline="") as fh:
            rows = list(csv.reader(fh))
        rows[0].append(column)
        for i, g in enumerate(self.assignment, start=1):
            rows[i].append(str(int(g)))
        with open(out_path, "w", newline="") as fh:
            csv.writer(fh).writerows(rows)


def _mccormick_rows(m: MioModel, zi: int, zj: int, D_val: float):
    """Product variable for a co-membership pair, plus the four-row box."""
    zeta = m.add_var(0.0, 1.0, "cont", name=f"prod_{zi}_{zj}", obj=D_val)
    m.add_constr([zeta, zi, zj], [1.0, -1.0, -1.0], 1, -1.0)  # zeta >= zi + zj - 1
    m.add_constr([zeta, zi], [1.0, -1.0], -1, 0.0)
    m.add_constr([zeta, zj], [1.0, -1.0], -1, 0.0)
    return zeta


def build_free_clustering(D: np.ndarray, groups: int, mode: str, lam: Optional[float]):
    n = D.shape[0]
    m = MioModel()
    z = {(i, g): m.add_binary(name=f"z{i}_{g}") for i in range(n) for g in range(groups)}
    for i in range(n):
        m.add_constr([z[i, g] for g in range(groups)], [1.0] * groups, 0, 1.0)
    # symmetry breaking: first point opens group 0; a group is usable only
    # if some earlier point sits in the previous group
    m.add_constr([z[0, 0]], [1.0], 0, 1.0)
    for g in range(1, groups):
        for i in range(n):
            idx = [z[i, g]] + [z[i2, g - 1] for i2 in range(i)]
            m.add_constr(idx, [1.0] + [-1.0] * (len(idx) - 1), -1, 0.0)
    zeta = {}
    level = None
    if mode == "mccormick":
        for g in range(groups):
            for i in range(n):
                for j in range(i + 1, n):
                    if D[i, j] > 0 or True:
                        zeta[g, i, j] = _mccormick_rows(m, z[i, g], z[j, g], float(D[i, j]))
    elif mode == "convexified":
        level = lam if lam is not None else float(D.sum(axis=1).max())
        if level < float(np.abs(np.linalg.eigvalsh(D / 2.0)).max()):
            log.warning("convexification level below spectral bound; raising")
            level = float(np.abs(np.linalg.eigvalsh(D / 2.0)).max()) + 1e-6
        P = D / 2.0 + level * np.eye(n)
        q = -level * np.ones(n)
        for g in range(groups):
            idx = [z[i, g] for i in range(n)]
            epi, _ = m.add_quadratic_epigraph(idx, P, q, 0.0, name=f"q{g}")
            m.obj[epi] = 1.0
    else:
        raise ValueError(f"unknown clustering mode {mode!r}")
    return m, {"z": z, "zeta": zeta, "level": level, "groups": groups}


def build_tree_clustering(X: np.ndarray, D: np.ndarray, depth: int, mode: str, lam: Optional[float]):
    n = X.shape[0]
    m, info = build_flow_tree(X, depth, classes=["cell"], scores=np.zeros((n, 1)), assign_all=True)
    sink = info["sink"]
    nodes = internal_nodes(depth) + leaf_nodes(depth)
    zeta = {}
    level = None
    if mode == "mccormick":
        for k in nodes:
            for i in range(n):
                for j in range(i + 1, n):
                    zeta[k, i, j] = _mccormick_rows(m, sink[i, k], sink[j, k], float(D[i, j]))
    elif mode == "convexified":
        level = lam if lam is not None else float(D.sum(axis=1).max())
        P = D / 2.0 + level * np.eye(n)
        q = -level * np.ones(n)
        for k in nodes:
            idx = [sink[i, k] for i in range(n)]
            epi, _ = m.add_quadratic_epigraph(idx, P, q, 0.0, name=f"q{k}")
            m.obj[epi] = 1.0
    else:
        raise ValueError(f"unknown clustering mode {mode!r}")
    info.update({"zeta": zeta, "level": level})
    return m, info


def fit_clustering(
    ds: Dataset,
    partitioner: Tuple[str, int] = ("free", 2),
    mode: str = "mccormick",
    lam: Optional[float] = None,
    dissimilarity: Optional[np.ndarray] = None,
    options: Optional[dict] = None,
) -> Clustering:
    """Exact minimum-dissimilarity clustering on a free or tree partition."""
    kind, size = partitioner
    D = dissimilarity if dissimilarity is not None else pairwise_dissimilarity(ds.X)
    n = ds.n
    if kind == "free":
        if size > n:
            raise ValueError("more groups than datapoints")
        model, info = build_free_clustering(D, size, mode, lam)
        res = solve(model, options)
        if res.x is None:
            raise EngineError(f"clustering terminated {res.status}")
        assign = np.zeros(n, dtype=int)
        for i in range(n):
            assign[i] = next(g for g in range(size) if res.x[info["z"][i, g]] > 0.5)
    elif kind == "tree":
        if not np.all(np.isin(ds.X, (0.0, 1.0))):
            raise ValueError("tree partitioner needs binarized features")
        model, info = build_tree_clustering(ds.X, D, size, mode, lam)
        res = solve(model, options)
        if res.x is None:
            raise EngineError(f"clustering terminated {res.status}")
        nodes = internal_nodes(size) + leaf_nodes(size)
        assign = np.zeros(n, dtype=int)
        for i in range(n):
            assign[i] = next(k for k in nodes if res.x[info["sink"][i, k]] > 0.5)
    else:
        raise ValueError(f"unknown partitioner {kind!r}")
    out = Clustering(
        assignment=assign,
        objective=float("nan"),
        mode=mode,
        convex_level=info["level"],
        partitioner=kind,
        gap=res.gap,
        meta={"nodes": res.nodes, "size": size},
    )
    out.objective = out.recount(D)
    if abs(out.objective - res.obj) > 1e-5 * (1 + abs(out.objective)):
        raise EngineError(f"clustering recount {out.objective} disagrees with solver objective {res.obj}")
    return out


# ---------------------------------------------------------------------------
# Bayesian networks
# ---------------------------------------------------------------------------


@dataclass
class LearnedDag:
    adjacency: np.ndarray  # d x d binary, [j, k] = arc j -> k
    weights: np.ndarray
    ordering: np.ndarray  # topological position per node
    objective: float
    feature_names: Tuple[str, ...]
    gap: float = 0.0
    meta: dict = field(default_factory=dict)

    def arcs(self) -> List[Tuple[int, int]]:
        return [(j, k) for j in range(self.adjacency.shape[0]) for k in range(self.adjacency.shape[1]) if self.adjacency[j, k]]

    def is_acyclic(self) -> bool:
        d = self.adjacency.shape[0]
        indeg = self.adjacency.sum(axis=0).astype(int)
        queue = [k for k in range(d) if indeg[k] == 0]
        seen = 0
        adj = self.adjacency.copy()
        while queue:
            u = queue.pop()
            seen += 1
            for v in range(d):
                if adj[u, v]:
                    adj[u, v] = 0
                    indeg[v] -= 1
                    if indeg[v] == 0:
                        queue.append(v)
        return seen == d

    def ordering_certifies(self) -> bool:
        return all(self.ordering[k] >= self.ordering[j] + 1 for j, k in self.arcs())

    def export_edge_list(self, path: str):
        with open(path, "w") as fh:
            fh.write("source\ttarget\tweight\n")
            for j, k in self.arcs():
                fh.write(f"{self.feature_names[j]}\t{self.feature_names[k]}\t{self.weights[j, k]:.12g}\n")

    def to_dict(self) -> dict:
        return {
            "kind": "dag",
            "adjacency": self.adjacency.astype(int).tolist(),
            "weights": self.weights.tolist(),
            "ordering": self.ordering.astype(int).tolist(),
            "objective": self.objective,
            "gap": self.gap,
            "feature_names": list(self.feature_names),
            "meta": self.meta,
        }

    @staticmethod
    def from_dict(d: dict) -> "LearnedDag":
        return LearnedDag(
            adjacency=np.asarray(d["adjacency"], dtype=int),
            weights=np.asarray(d["weights"], dtype=float),
            ordering=np.asarray(d["ordering"], dtype=int),
            objective=float(d["objective"]),
            feature_names=tuple(d["feature_names"]),
            gap=float(d.get("gap", 0.0)),
            meta=d.get("meta", {}),
        )


def cycle_cut_oracle(z_of_arc: Dict[Tuple[int, int], int], d: int, tol: float = 1e-4):
    """Separates subset (cycle) inequalities at fractional points.

    Finds the shortest directed cycle under arc weights (1 - z) and emits
    ``sum of z over S x S <= |S| - 1`` when violated by more than ``tol``.
    """

    def oracle(x: np.ndarray) -> list:
        w = np.full((d, d), np.inf)
        for (j, k), var in z_of_arc.items():
            w[j, k] = max(0.0, 1.0 - x[var])
        # shortest path k -> j for every arc (j, k) closes the cheapest cycle
        dist = w.copy()
        nxt = [[k if np.isfinite(w[j, k]) else -1 for k in range(d)] for j in range(d)]
        for mid in range(d):
            for a in range(d):
                for b in range(d):
                    if dist[a, mid] + dist[mid, b] < dist[a, b]:
                        dist[a, b] = dist[a, mid] + dist[mid, b]
                        nxt[a][b] = nxt[a][mid]
        cuts = []
        best = None
        for j in range(d):
            for k in range(d):
                if (j, k) in z_of_arc and np.isfinite(dist[k, j]):
                    cost = w[j, k] + dist[k, j]
                    if best is None or cost < best[0]:
                        best = (cost, j, k)
        if best is None or best[0] >= 1.0 - tol:
            return cuts
        _, j0, k0 = best
        cycle = [j0, k0]
        cur = k0
        while cur != j0:
            cur = nxt[cur][j0]
            if cur == -1 or len(cycle) > d + 1:
                return cuts
            if cur != j0:
                cycle.append(cur)
        S = sorted(set(cycle))
        idx = [z_of_arc[a, b] for a in S for b in S if (a, b) in z_of_arc]
        if not idx:
            return cuts
        lhs = sum(x[v] for v in idx)
        if lhs > len(S) - 1 + tol:
            cuts.append((np.array(idx), np.ones(len(idx)), float(len(S) - 1)))
        return cuts

    return oracle


def build_bayesian_network(ds: Dataset, lam0: float, M: Optional[float] = None, cycle_cuts: bool = False):
    X = ds.X
    n, d = X.shape
    if M is None:
        M = max(default_big_m(np.delete(X, k, axis=1), X[:, k]) for k in range(d))
    m = MioModel()
    theta = {}
    z = {}
    for j in range(d):
        for k in range(d):
            if j == k:
                continue
            theta[j, k] = m.add_continuous(-M, M, name=f"th{j}_{k}")
            z[j, k] = m.add_binary(name=f"z{j}_{k}", obj=lam0)
            m.add_constr([theta[j, k], z[j, k]], [1.0, -M], -1, 0.0)
            m.add_constr([theta[j, k], z[j, k]], [-1.0, -M], -1, 0.0)

            def hook(xv, tjk=theta[j, k], zjk=z[j, k]):
                xv[zjk] = 1.0 if abs(xv[tjk]) > 1e-7 else 0.0

            m.add_completion_hook(hook)
    zeta = [m.add_integer(1, d, name=f"ord{k}") for k in range(d)]
    for j in range(d):
        for k in range(d):
            if j == k:
                continue
            # arc j -> k forces position(k) >= position(j) + 1
            m.add_constr([zeta[j], zeta[k], z[j, k]], [1.0, -1.0, float(d)], -1, float(d) - 1.0)
    for k in range(d):
        parents = [j for j in range(d) if j != k]
        Xp = X[:, parents]
        P = Xp.T @ Xp
        q = -2.0 * Xp.T @ X[:, k]
        c0 = float(X[:, k] @ X[:, k])
        epi, _ = m.add_quadratic_epigraph([theta[j, k] for j in parents], P, q, c0, name=f"rss{k}")
        m.obj[epi] = 1.0
    if cycle_cuts:
        m.add_cut_oracle(cycle_cut_oracle(z, d))
    return m, {"theta": theta, "z": z, "zeta": zeta, "M": M}


def dag_objective(ds: Dataset, weights: np.ndarray, lam0: float) -> float:
    X = ds.X
    resid = X - X @ weights
    return float((resid * resid).sum() + lam0 * np.sum(np.abs(weights) > 1e-7))


def fit_bayesian_network(
    ds: Dataset,
    lam0: float,
    M: Optional[float] = None,
    cycle_cuts: bool = False,
    options: Optional[dict] = None,
) -> LearnedDag:
    """Least-squares DAG learning with ordering-label acyclicity.

    Ties between equally-scoring graphs are broken toward the
    lexicographically smallest arc set, which requires exploring
    bound-tied nodes; expect full enumeration behaviour on tiny problems.
    """
    if ds.d > 12:
        log.warning("network learning beyond ~10 features is outside the practical envelope")
    model, info = build_bayesian_network(ds, lam0, M, cycle_cuts)
    opts = dict(options or {})
    opts.setdefault("explore_ties", True)
    opts.setdefault("gap_tol", 0.0)
    d = ds.d

    def tie_key(x):
        return tuple(sorted((j, k) for (j, k), v in info["z"].items() if x[v] > 0.5))

    opts.setdefault("tie_key", tie_key)
    res = solve(model, opts)
    if res.x is None:
        raise EngineError(f"network learning terminated {res.status}")
    adj = np.zeros((d, d), dtype=int)
    weights = np.zeros((d, d))
    for (j, k), v in info["z"].items():
        if res.x[v] > 0.5 and abs(res.x[info["theta"][j, k]]) > 1e-7:
            adj[j, k] = 1
            weights[j, k] = res.x[info["theta"][j, k]]
    ordering = np.array([int(round(res.x[v])) for v in info["zeta"]])
    out = LearnedDag(
        adjacency=adj,
        weights=weights,
        ordering=ordering,
        objective=dag_objective(ds, weights, lam0),
        feature_names=ds.feature_names,
        gap=res.gap,
        meta={"nodes": res.nodes, "M": info["M"], "lam0": lam0},
    )
    if not out.is_acyclic():
        raise EngineError("learned graph contains a cycle")
    return out
