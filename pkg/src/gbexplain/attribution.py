"""Exact Shapley attribution for tree ensembles, on the margin scale.

Two independent routes compute identical values: a brute-force sum over all
feature coalitions (exponential, capped) and a per-tree polynomial path
walk.  Conditional expectations use the cover weights carried by the model,
so the engine needs no background dataset.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .errors import CapacityError
from .model import Leaf, TreeEnsemble, TreeNode, as_features, margin
from .oracle import kernel_for

BRUTEFORCE_MAX_FEATURES = 20


@dataclass(frozen=True)
class AttributionVector:
    phi: np.ndarray  # one attribution per feature
    base: float      # expected margin under the cover weighting

    def total(self) -> float:
        return self.base + float(self.phi.sum())


def expvalue(tree: TreeNode, x, subset: Iterable[int]) -> float:
    """Cover-weighted expectation of the tree's value given the features in
    ``subset`` fixed to x's values and the rest marginalized."""
    x = np.asarray(x, dtype=np.float64)
    s = frozenset(subset)

    def rec(node: TreeNode) -> float:
        if isinstance(node, Leaf):
            return node.value
        if node.feature in s:
            child = node.left if x[node.feature] < node.threshold else node.right
            return rec(child)
        return (node.left.cover * rec(node.left)
                + node.right.cover * rec(node.right)) / node.cover

    return rec(tree)


def _coalition_values(ensemble: TreeEnsemble, x: np.ndarray) -> np.ndarray:
    """expvalue of the whole model for every feature coalition at once,
    indexed by bitmask (vectorized form of the per-subset recursion)."""
    n = ensemble.feature_count
    masks = np.arange(1 << n, dtype=np.int64)

    def rec(node: TreeNode) -> np.ndarray:
        if isinstance(node, Leaf):
            return np.full(masks.shape[0], node.value)
        vl = rec(node.left)
        vr = rec(node.right)
        hot = vl if x[node.feature] < node.threshold else vr
        blend = (node.left.cover * vl + node.right.cover * vr) / node.cover
        in_coalition = (masks >> node.feature & 1).astype(bool)
        return np.where(in_coalition, hot, blend)

    values = np.full(masks.shape[0], ensemble.base_margin)
    for tree in ensemble.trees:
        values = values + rec(tree)
    return values


def shapley_bruteforce(ensemble: TreeEnsemble, x) -> AttributionVector:
    """Direct evaluation of the coalition-weighted sum over all subsets."""
    n = ensemble.feature_count
    if n > BRUTEFORCE_MAX_FEATURES:
        raise CapacityError(
            "brute force is exponential and capped at %d features; "
            "use shapley_tree" % BRUTEFORCE_MAX_FEATURES
        )
    x = as_features(x, n)
    values = _coalition_values(ensemble, x)

    fact = [math.factorial(k) for k in range(n + 1)]
    weight = [fact[s] * fact[n - s - 1] / fact[n] for s in range(n)]

    masks = np.arange(1 << n, dtype=np.int64)
    sizes = np.bitwise_count(masks)
    w = np.asarray(weight)
    phi = np.zeros(n, dtype=np.float64)
    for i in range(n):
        without = masks[(masks >> i & 1) == 0]
        gain = values[without | (1 << i)] - values[without]
        phi[i] = float(np.sum(w[sizes[without]] * gain))
    return AttributionVector(phi=phi, base=float(values[0]))


def shapley_tree(ensemble: TreeEnsemble, x) -> AttributionVector:
    """Polynomial per-tree path walk; matches the brute force within 1e-9."""
    x = as_features(x, ensemble.feature_count)
    kernel = kernel_for(ensemble)
    phi = kernel.shap(x)
    return AttributionVector(phi=phi, base=float(kernel.flat.expected_value))


def positive_features(attr: AttributionVector) -> set[int]:
    """Features with strictly positive attribution; no magnitude threshold."""
    return {int(i) for i in np.nonzero(attr.phi > 0.0)[0]}


def local_accuracy_gap(ensemble: TreeEnsemble, x, attr: AttributionVector) -> float:
    """|base + sum(phi) - margin(x)|; zero up to float error by construction."""
    return abs(attr.total() - margin(ensemble, x))
