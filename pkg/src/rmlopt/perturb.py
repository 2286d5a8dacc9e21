"""Minimal-perturbation search: adversarial verification and counterfactuals.

Both problems look for the cheapest input change that flips a model's
prediction; verification asks it about a ReLU network under a norm budget,
counterfactual explanation asks it about an interpretable model under an
actionability-aware cost.  Every returned perturbation is re-validated by a
plain forward pass before being reported.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .engine import EngineError, MioModel, solve
from .linear import SparseLinearModel
from .trees import TreeModel, ancestors

ATTACK_MARGIN = 1e-5


class PerturbationError(Exception):
    pass


@dataclass
class ReluNetwork:
    """Fully-connected ReLU net; the last layer is linear (class scores)."""

    weights: List[np.ndarray]
    biases: List[np.ndarray]
    pre_bounds: Optional[List[Tuple[np.ndarray, np.ndarray]]] = None

    def __post_init__(self):
        self.weights = [np.asarray(W, dtype=float) for W in self.weights]
        self.biases = [np.asarray(b, dtype=float) for b in self.biases]
        for W, b in zip(self.weights, self.biases):
            if W.shape[0] != b.shape[0]:
                raise PerturbationError("bias length disagrees with weight rows")
            if not (np.all(np.isfinite(W)) and np.all(np.isfinite(b))):
                raise PerturbationError("network weights must be finite")

    @property
    def n_inputs(self) -> int:
        return self.weights[0].shape[1]

    @property
    def n_outputs(self) -> int:
        return self.weights[-1].shape[0]

    def forward(self, x: np.ndarray) -> np.ndarray:
        a = np.asarray(x, dtype=float)
        for W, b in zip(self.weights[:-1], self.biases[:-1]):
            a = np.maximum(0.0, W @ a + b)
        return self.weights[-1] @ a + self.biases[-1]

    def predict_label(self, x: np.ndarray) -> int:
        return int(np.argmax(self.forward(x)))

    def to_dict(self) -> dict:
        return {"layers": [{"weights": W.tolist(), "bias": b.tolist()} for W, b in zip(self.weights, self.biases)]}

    def save_json(self, path: str):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1)

    @staticmethod
    def from_dict(d: dict) -> "ReluNetwork":
        return ReluNetwork(
            weights=[np.asarray(layer["weights"], dtype=float) for layer in d["layers"]],
            biases=[np.asarray(layer["bias"], dtype=float) for layer in d["layers"]],
        )

    @staticmethod
    def load_json(path: str) -> "ReluNetwork":
        with open(path) as fh:
            return ReluNetwork.from_dict(json.load(fh))


def propagate_bounds(net: ReluNetwork, x: np.ndarray, eps: float, norm: str = "inf") -> ReluNetwork:
    """Interval-arithmetic pre-activation bounds for inputs in an eps-box."""
    if norm not in ("inf", "linf"):
        raise PerturbationError("only the sup-norm box is supported for propagation")
    lo = np.asarray(x, dtype=float) - eps
    hi = np.asarray(x, dtype=float) + eps
    bounds = []
    for idx, (W, b) in enumerate(zip(net.weights, net.biases)):
        Wp = np.maximum(W, 0.0)
        Wn = np.minimum(W, 0.0)
        l = Wp @ lo + Wn @ hi + b
        u = Wp @ hi + Wn @ lo + b
        bounds.append((l, u))
        if idx < len(net.weights) - 1:
            lo = np.maximum(0.0, l)
            hi = np.maximum(0.0, u)
    return ReluNetwork(net.weights, net.biases, bounds)


def encode_relu(model: MioModel, pre_var_expr, l: float, u: float, name: str = "n"):
    """Big-M encoding of s = max(0, pre) given pre-activation bounds [l, u].

    ``pre_var_expr`` is (idx, coefs, const) describing the affine
    pre-activation.  Stable neurons get a direct linear encoding without a
    binary.  Returns (post_var, binary_var_or_None).
    """
    if l > u:
        raise PerturbationError("invalid bounds: l > u")
    idx, coefs, const = pre_var_expr
    idx = list(idx)
    coefs = list(coefs)
    if u <= 0:
        s = model.add_continuous(0.0, 0.0, name=f"{name}_post")
        return s, None
    if l >= 0:
        s = model.add_continuous(max(l, 0.0), u, name=f"{name}_post")
        # s = pre
        model.add_constr(idx + [s], coefs + [-1.0], 0, -const)
        return s, None
    s = model.add_continuous(0.0, max(u, 0.0), name=f"{name}_post")
    z = model.add_binary(name=f"{name}_on")
    # s >= pre
    model.add_constr(idx + [s], coefs + [-1.0], -1, -const)
    # s <= u z
    model.add_constr([s, z], [1.0, -u], -1, 0.0)
    # s <= pre - l (1 - z), i.e. s - pre - l z <= -l
    model.add_constr([s] + idx + [z], [1.0] + [-c for c in coefs] + [-l], -1, const - l)
    return s, z


@dataclass
class PerturbationResult:
    status: str  # attack | certified | infeasible_target
    perturbation: Optional[np.ndarray] = None
    norm: Optional[float] = None
    achieved_label: Optional[object] = None
    certified_radius: Optional[float] = None
    meta: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "status": self.status,
            "perturbation": None if self.perturbation is None else [float(v) for v in self.perturbation],
            "norm": self.norm,
            "achieved_label": self.achieved_label,
            "certified_radius": self.certified_radius,
            "meta": self.meta,
        }


def _encode_network(model: MioModel, net: ReluNetwork, u_vars: Sequence[int], x: np.ndarray):
    """Wire the net on inputs x + u; returns per-class score expressions."""
    exprs = [([u_vars[j]], [1.0], float(x[j])) for j in range(net.n_inputs)]
    binaries = []
    for layer, (W, b) in enumerate(zip(net.weights, net.biases)):
        l_arr, u_arr = net.pre_bounds[layer]
        new_exprs = []
        for r in range(W.shape[0]):
            idx: List[int] = []
            coefs: List[float] = []
            const = float(b[r])
            for c in range(W.shape[1]):
                w = float(W[r, c])
                if w == 0.0:
                    continue
                e_idx, e_coef, e_const = exprs[c]
                const += w * e_const
                for vid, vc in zip(e_idx, e_coef):
                    idx.append(vid)
                    coefs.append(w * vc)
            if layer == len(net.weights) - 1:
                new_exprs.append((idx, coefs, const))
            else:
                s, z = encode_relu(model, (idx, coefs, const), float(l_arr[r]), float(u_arr[r]), name=f"l{layer}r{r}")
                if z is not None:
                    binaries.append(z)
                new_exprs.append(([s], [1.0], 0.0))
        exprs = new_exprs
    return exprs, binaries


def verify(
    net: ReluNetwork,
    x: np.ndarray,
    target: int,
    eps: float,
    norm: str = "inf",
    search_radius: Optional[float] = None,
    margin: float = ATTACK_MARGIN,
    options: Optional[dict] = None,
) -> PerturbationResult:
    """Minimal sup-norm perturbation driving the prediction to ``target``.

    Certifies robustness at radius eps when the minimum exceeds eps (or no
    attack exists inside the search box).  Attacks are re-validated by a
    forward pass before being returned.
    """
    x = np.asarray(x, dtype=float)
    current = net.predict_label(x)
    if target == current:
        return PerturbationResult("infeasible_target", meta={"reason": "target equals current label"})
    if not (0 <= target < net.n_outputs):
        raise PerturbationError("target label out of range")
    R = search_radius if search_radius is not None else max(eps, 1.0)
    bounded = propagate_bounds(net, x, R, "inf")

    def attempt(mgn: float):
        model = MioModel()
        u_vars = [model.add_continuous(-R, R, name=f"u{j}") for j in range(net.n_inputs)]
        rho = model.add_continuous(0.0, R, name="rho", obj=1.0)
        for j in u_vars:
            model.add_constr([j, rho], [1.0, -1.0], -1, 0.0)
            model.add_constr([j, rho], [-1.0, -1.0], -1, 0.0)
        scores, _ = _encode_network(model, bounded, u_vars, x)
        t_idx, t_coef, t_const = scores[target]
        for c in range(net.n_outputs):
            if c == target:
                continue
            c_idx, c_coef, c_const = scores[c]
            # score_c - score_target <= -margin
            model.add_constr(c_idx + t_idx, list(c_coef) + [-v for v in t_coef], -1, t_const - c_const - mgn)
        r = solve(model, options)
        return r, u_vars

    res, u_vars = attempt(margin)
    if res.x is None:
        return PerturbationResult(
            "certified",
            certified_radius=R,
            meta={"reason": "no attack inside search box", "search_radius": R, "eps": eps},
        )
    u_star = np.array([res.x[j] for j in u_vars])
    nrm = float(np.abs(u_star).max(initial=0.0))
    achieved = net.predict_label(x + u_star)
    if achieved != target:
        # tolerance-thin margin: push strictly past the boundary and retry
        res, u_vars = attempt(margin * 100)
        if res.x is None:
            return PerturbationResult(
                "certified",
                certified_radius=R,
                meta={"reason": "no attack inside search box", "search_radius": R, "eps": eps},
            )
        u_star = np.array([res.x[j] for j in u_vars])
        nrm = float(np.abs(u_star).max(initial=0.0))
        achieved = net.predict_label(x + u_star)
        if achieved != target:
            raise EngineError("attack failed forward-pass revalidation")
    if nrm > eps:
        return PerturbationResult(
            "certified",
            perturbation=u_star,
            norm=nrm,
            certified_radius=nrm,
            meta={"minimal_norm": nrm, "eps": eps, "nodes": res.nodes},
        )
    return PerturbationResult(
        "attack",
        perturbation=u_star,
        norm=nrm,
        achieved_label=achieved,
        meta={"eps": eps, "nodes": res.nodes},
    )


# ---------------------------------------------------------------------------
# counterfactual explanations
# ---------------------------------------------------------------------------


def _linear_counterfactual(
    model_: SparseLinearModel,
    x_bar: np.ndarray,
    target: float,
    cost: str,
    sparsity: Optional[Tuple[float, float]],
    frozen: Optional[Sequence[int]],
    box: Optional[Tuple[np.ndarray, np.ndarray]],
    margin: float,
    options: Optional[dict],
) -> PerturbationResult:
    theta = model_.coefficients
    icpt = model_.intercept or 0.0
    d = len(theta)
    cur = 1.0 if float(theta @ x_bar + icpt) >= 0 else -1.0
    if cur == target:
        return PerturbationResult("attack", perturbation=np.zeros(d), norm=0.0, achieved_label=target,
                                  meta={"reason": "already classified as target"})
    m = MioModel()
    span = float(np.abs(x_bar).max(initial=1.0)) + 1.0
    cap = 100.0 * span
    u = [m.add_continuous(-cap, cap, name=f"u{j}") for j in range(d)]
    frozen = set(frozen or ())
    for j in frozen:
        m.lo[u[j]] = m.hi[u[j]] = 0.0
    if box is not None:
        lo_b, hi_b = box
        for j in range(d):
            m.lo[u[j]] = max(m.lo[u[j]], float(lo_b[j] - x_bar[j]))
            m.hi[u[j]] = min(m.hi[u[j]], float(hi_b[j] - x_bar[j]))
    if cost == "linf":
        rho = m.add_continuous(0.0, cap, name="rho", obj=1.0)
        for j in range(d):
            m.add_constr([u[j], rho], [1.0, -1.0], -1, 0.0)
            m.add_constr([u[j], rho], [-1.0, -1.0], -1, 0.0)
    elif cost == "l1":
        for j in range(d):
            up = m.add_continuous(0.0, cap, name=f"up{j}", obj=1.0)
            um = m.add_continuous(0.0, cap, name=f"um{j}", obj=1.0)
            m.add_constr([u[j], up, um], [1.0, -1.0, 1.0], 0, 0.0)
    else:
        raise PerturbationError(f"unknown cost {cost!r}")
    if sparsity is not None:
        lam0, M = sparsity
        for j in range(d):
            z = m.add_binary(name=f"zs{j}", obj=lam0)
            m.add_constr([u[j], z], [1.0, -M], -1, 0.0)
            m.add_constr([u[j], z], [-1.0, -M], -1, 0.0)
    # target * (theta'(x+u) + intercept) >= margin
    idx = [u[j] for j in range(d) if theta[j] != 0.0]
    coefs = [-target * theta[j] for j in range(d) if theta[j] != 0.0]
    rhs = target * (float(theta @ x_bar) + icpt) - margin
    m.add_constr(idx, coefs, -1, rhs)
    res = solve(m, options)
    if res.x is None:
        return PerturbationResult("infeasible_target", meta={"reason": "no feasible change under constraints"})
    u_star = np.array([res.x[v] for v in u])
    achieved = 1.0 if float(theta @ (x_bar + u_star) + icpt) >= 0 else -1.0
    if achieved != target:
        raise EngineError("counterfactual failed revalidation")
    nrm = float(np.abs(u_star).max(initial=0.0)) if cost == "linf" else float(np.abs(u_star).sum())
    return PerturbationResult("attack", perturbation=u_star, norm=nrm, achieved_label=target,
                              meta={"cost": cost, "objective": res.obj})


def _tree_counterfactual(
    tree: TreeModel,
    x_bar: np.ndarray,
    target,
    cost: str,
    frozen: Optional[Sequence[int]],
    options: Optional[dict],
) -> PerturbationResult:
    d = len(tree.feature_names)
    if tree.predict_one(x_bar) == target:
        return PerturbationResult("attack", perturbation=np.zeros(d), norm=0.0, achieved_label=target,
                                  meta={"reason": "already classified as target"})
    target_nodes = [k for k, lab in tree.prediction.items() if lab == target]
    if not target_nodes:
        return PerturbationResult("infeasible_target", meta={"reason": "no node predicts the target label"})
    m = MioModel()
    xv = [m.add_binary(name=f"x{j}") for j in range(d)]
    frozen = set(frozen or ())
    for j in range(d):
        if j in frozen:
            m.lo[xv[j]] = m.hi[xv[j]] = float(x_bar[j])
    w = [m.add_binary(name=f"pick{k}") for k in target_nodes]
    m.add_constr(w, [1.0] * len(w), 0, 1.0)
    for pos, k in enumerate(target_nodes):
        node = k
        for a in ancestors(k):
            j = tree.test_feature[a]
            if node == 2 * a:  # reached via the left (feature == 0) branch
                m.add_constr([xv[j], w[pos]], [1.0, 1.0], -1, 1.0)
            else:
                m.add_constr([xv[j], w[pos]], [-1.0, 1.0], -1, 0.0)
            node = a
    if cost == "l1":
        for j in range(d):
            m.obj[xv[j]] = 1.0 if x_bar[j] == 0 else -1.0
        const = float(np.sum(x_bar))
    elif cost == "linf":
        rho = m.add_continuous(0.0, 1.0, name="rho", obj=1.0)
        for j in range(d):
            sgn = 1.0 if x_bar[j] == 0 else -1.0
            m.add_constr([xv[j], rho], [sgn, -1.0], -1, float(sgn * x_bar[j]))
        const = 0.0
    else:
        raise PerturbationError(f"unknown cost {cost!r}")
    res = solve(m, options)
    if res.x is None:
        return PerturbationResult("infeasible_target", meta={"reason": "actionability constraints block all target nodes"})
    x_new = np.array([round(res.x[v]) for v in xv], dtype=float)
    if tree.predict_one(x_new) != target:
        raise EngineError("tree counterfactual failed revalidation")
    u_star = x_new - x_bar
    nrm = float(np.abs(u_star).sum()) if cost == "l1" else float(np.abs(u_star).max(initial=0.0))
    return PerturbationResult("attack", perturbation=u_star, norm=nrm, achieved_label=target,
                              meta={"cost": cost, "objective": res.obj + const})


def counterfactual(
    model_,
    x_bar: np.ndarray,
    target,
    cost: str = "l1",
    sparsity: Optional[Tuple[float, float]] = None,
    frozen: Optional[Sequence[int]] = None,
    box: Optional[Tuple[np.ndarray, np.ndarray]] = None,
    margin: float = ATTACK_MARGIN,
    options: Optional[dict] = None,
) -> PerturbationResult:
    """Cheapest feature change that flips the model to ``target``.

    ``frozen`` lists immutable feature indices; ``box`` caps the reachable
    feature values for linear models.  Tree counterfactuals work on the
    tree's binary feature space and choose a target-labeled node whose root
    path the new point must satisfy.
    """
    x_bar = np.asarray(x_bar, dtype=float)
    if isinstance(model_, SparseLinearModel):
        return _linear_counterfactual(model_, x_bar, float(target), cost, sparsity, frozen, box, margin, options)
    if isinstance(model_, TreeModel):
        return _tree_counterfactual(model_, x_bar, target, cost, frozen, options)
    raise PerturbationError(f"unsupported model type {type(model_).__name__}")
