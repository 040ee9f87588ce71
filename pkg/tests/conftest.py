"""Shared fixtures and independent brute-force oracles.

The brute-force helpers here deliberately use only the object-tree routing
in ``gbexplain.model`` (never the kernels), so they stay an independent
check of everything the kernels compute.
"""

from __future__ import annotations

import itertools
import json
import math

import numpy as np
import pytest

from gbexplain.model import (
    BENIGN,
    MALICIOUS,
    Internal,
    Leaf,
    TreeEnsemble,
    all_feature_thresholds,
    margin,
    parse_model,
    predict,
)

FIX_A_DOC = {
    "feature_count": 3,
    "feature_names": ["f0", "f1", "f2"],
    "base_margin": 0.0,
    "trees": [
        [
            {"id": 0, "cover": 20.0, "split_feature": 0, "threshold": 5.0,
             "left": 1, "right": 2},
            {"id": 1, "leaf": 1.0, "cover": 10.0},
            {"id": 2, "cover": 10.0, "split_feature": 1, "threshold": 2.0,
             "left": 3, "right": 4},
            {"id": 3, "leaf": -2.0, "cover": 3.0},
            {"id": 4, "leaf": 0.5, "cover": 7.0},
        ],
        [
            {"id": 0, "cover": 20.0, "split_feature": 2, "threshold": 0.0,
             "left": 1, "right": 2},
            {"id": 1, "leaf": -1.0, "cover": 8.0},
            {"id": 2, "leaf": 1.0, "cover": 12.0},
        ],
    ],
}

SINGLE_LEAF_DOC = {
    "feature_count": 1,
    "feature_names": ["f0"],
    "base_margin": 0.0,
    "trees": [[{"id": 0, "leaf": 0.7, "cover": 1.0}]],
}


@pytest.fixture(scope="session")
def fix_a() -> TreeEnsemble:
    return parse_model(json.dumps(FIX_A_DOC))


@pytest.fixture(scope="session")
def single_leaf() -> TreeEnsemble:
    return parse_model(json.dumps(SINGLE_LEAF_DOC))


@pytest.fixture
def x_alert() -> np.ndarray:
    return np.array([3.0, 9.0, 1.0])


# -- random fixtures -----------------------------------------------------------


def random_tree(rng, n_features, max_depth, cover, depth=0):
    if depth >= max_depth or rng.random() < 0.25:
        return Leaf(value=float(rng.uniform(-1.0, 1.0)), cover=cover)
    f = int(rng.integers(n_features))
    t = float(np.round(rng.uniform(-2.0, 2.0), 2))
    frac = float(rng.uniform(0.2, 0.8))
    cover_left = cover * frac
    cover_right = cover - cover_left
    return Internal(
        feature=f, threshold=t,
        left=random_tree(rng, n_features, max_depth, cover_left, depth + 1),
        right=random_tree(rng, n_features, max_depth, cover_right, depth + 1),
        cover=cover,
    )


def random_ensemble(rng, max_features=6, max_trees=4, max_depth=3) -> TreeEnsemble:
    n_features = int(rng.integers(2, max_features + 1))
    n_trees = int(rng.integers(1, max_trees + 1))
    trees = tuple(
        random_tree(rng, n_features, max_depth, cover=float(rng.uniform(10, 100)))
        for _ in range(n_trees)
    )
    return TreeEnsemble(
        trees=trees,
        base_margin=float(np.round(rng.uniform(-0.5, 0.5), 3)),
        feature_count=n_features,
        feature_names=tuple("f%d" % i for i in range(n_features)),
    )


def random_sample(rng, ensemble) -> np.ndarray:
    return np.round(rng.uniform(-2.5, 2.5, size=ensemble.feature_count), 3)


# -- brute-force oracles ---------------------------------------------------------


def cell_representatives(thresholds: list[float], lo: float, hi: float) -> list[float]:
    """One representative per cell of [lo, hi] induced by the thresholds
    (under the `x < t goes left` convention)."""
    cuts = [t for t in thresholds if lo < t <= hi]
    if lo == hi:
        return [lo]
    reps = [lo] if not math.isinf(lo) else []
    if math.isinf(lo):
        reps.append((cuts[0] - 1.0) if cuts else (min(hi, 0.0) if not math.isinf(hi) else 0.0))
    reps.extend(cuts)
    return reps


def box_grid(ensemble, lo, hi) -> np.ndarray:
    """All cell-representative points of a box (exact on the cell partition)."""
    thr = all_feature_thresholds(ensemble)
    axes = [cell_representatives(thr[f], lo[f], hi[f])
            for f in range(ensemble.feature_count)]
    pts = np.array(list(itertools.product(*axes)), dtype=np.float64)
    return pts.reshape(-1, ensemble.feature_count)


def grid_margins(ensemble, X: np.ndarray) -> np.ndarray:
    """Batch object-tree routing; stays independent of the kernels."""
    out = np.full(X.shape[0], ensemble.base_margin)
    idx = np.arange(X.shape[0])

    def acc(node, idx):
        if isinstance(node, Leaf):
            out[idx] += node.value
            return
        mask = X[idx, node.feature] < node.threshold
        if mask.any():
            acc(node.left, idx[mask])
        if not mask.all():
            acc(node.right, idx[~mask])

    for root in ensemble.trees:
        acc(root, idx)
    return out


def brute_margin_range(ensemble, lo, hi):
    vals = grid_margins(ensemble, box_grid(ensemble, lo, hi))
    return float(vals.min()), float(vals.max())


def brute_invariant(ensemble, x, subset, lo=None, hi=None) -> bool:
    """Exhaustive check that fixing ``subset`` forces x's predicted class."""
    n = ensemble.feature_count
    malicious = margin(ensemble, x) > 0.0
    box_lo = np.full(n, -np.inf) if lo is None else np.array(lo, dtype=float)
    box_hi = np.full(n, np.inf) if hi is None else np.array(hi, dtype=float)
    for f in subset:
        box_lo[f] = x[f]
        box_hi[f] = x[f]
    vals = grid_margins(ensemble, box_grid(ensemble, box_lo, box_hi))
    return bool(vals.min() > 0.0) if malicious else bool(vals.max() <= 0.0)


def brute_minimal_sets(ensemble, x) -> set[frozenset]:
    """All minimal valid subsets by scanning the entire power set."""
    n = ensemble.feature_count
    valid = {
        frozenset(s)
        for r in range(n + 1)
        for s in itertools.combinations(range(n), r)
        if brute_invariant(ensemble, x, s)
    }
    return {s for s in valid if not any(o < s for o in valid)}
