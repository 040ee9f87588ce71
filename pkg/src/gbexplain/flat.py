"""Flattened array form of a tree ensemble, shared by both kernel backends.

Nodes of all trees live in contiguous parallel arrays (pre-order within each
tree); child links are global indices.  Also carries per-feature threshold
tables and a feature -> trees inverted index used by the interval oracle.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import Internal, Leaf, TreeEnsemble

LEAF = -1  # sentinel in the feature array


@dataclass
class FlatEnsemble:
    n_features: int
    n_trees: int
    base_margin: float
    feature: np.ndarray    # int32[n_nodes], LEAF for leaves
    threshold: np.ndarray  # float64[n_nodes]
    left: np.ndarray       # int32[n_nodes], global index
    right: np.ndarray      # int32[n_nodes], global index
    value: np.ndarray      # float64[n_nodes], leaf value (0 at internals)
    cover: np.ndarray      # float64[n_nodes]
    roots: np.ndarray      # int32[n_trees]
    max_depth: int
    # per-feature sorted distinct thresholds, CSR layout
    thr_vals: np.ndarray   # float64
    thr_off: np.ndarray    # int32[n_features + 1]
    # feature -> sorted tree indices that split on it, CSR layout
    ftree_vals: np.ndarray  # int32
    ftree_off: np.ndarray   # int32[n_features + 1]
    expected_value: float   # base margin + cover-weighted mean leaf per tree


def _count(node) -> int:
    if isinstance(node, Leaf):
        return 1
    return 1 + _count(node.left) + _count(node.right)


def _leaf_mean(node) -> float:
    """Cover-weighted mean of leaf values under ``node``."""
    if isinstance(node, Leaf):
        return node.value
    lm = _leaf_mean(node.left)
    rm = _leaf_mean(node.right)
    return (node.left.cover * lm + node.right.cover * rm) / node.cover


def flatten(ensemble: TreeEnsemble) -> FlatEnsemble:
    n_nodes = sum(_count(root) for root in ensemble.trees)
    feature = np.full(n_nodes, LEAF, dtype=np.int32)
    threshold = np.zeros(n_nodes, dtype=np.float64)
    left = np.full(n_nodes, -1, dtype=np.int32)
    right = np.full(n_nodes, -1, dtype=np.int32)
    value = np.zeros(n_nodes, dtype=np.float64)
    cover = np.zeros(n_nodes, dtype=np.float64)
    roots = np.zeros(len(ensemble.trees), dtype=np.int32)

    max_depth = 0
    next_slot = 0
    per_feature_thr: list[set] = [set() for _ in range(ensemble.feature_count)]
    per_feature_trees: list[set] = [set() for _ in range(ensemble.feature_count)]

    for t, root in enumerate(ensemble.trees):
        roots[t] = next_slot
        # iterative pre-order with explicit parent patch-up
        stack = [(root, -1, False, 0)]  # node, parent slot, is_right, depth
        while stack:
            node, parent, is_right, depth = stack.pop()
            slot = next_slot
            next_slot += 1
            if parent >= 0:
                (right if is_right else left)[parent] = slot
            cover[slot] = node.cover
            max_depth = max(max_depth, depth)
            if isinstance(node, Leaf):
                value[slot] = node.value
            else:
                feature[slot] = node.feature
                threshold[slot] = node.threshold
                per_feature_thr[node.feature].add(node.threshold)
                per_feature_trees[node.feature].add(t)
                stack.append((node.right, slot, True, depth + 1))
                stack.append((node.left, slot, False, depth + 1))

    thr_off = np.zeros(ensemble.feature_count + 1, dtype=np.int32)
    thr_chunks = []
    ftree_off = np.zeros(ensemble.feature_count + 1, dtype=np.int32)
    ftree_chunks = []
    for f in range(ensemble.feature_count):
        thr_sorted = sorted(per_feature_thr[f])
        thr_chunks.extend(thr_sorted)
        thr_off[f + 1] = len(thr_chunks)
        trees_sorted = sorted(per_feature_trees[f])
        ftree_chunks.extend(trees_sorted)
        ftree_off[f + 1] = len(ftree_chunks)

    expected = ensemble.base_margin
    for root in ensemble.trees:
        expected += _leaf_mean(root)

    return FlatEnsemble(
        n_features=ensemble.feature_count,
        n_trees=len(ensemble.trees),
        base_margin=ensemble.base_margin,
        feature=feature,
        threshold=threshold,
        left=left,
        right=right,
        value=value,
        cover=cover,
        roots=roots,
        max_depth=max_depth,
        thr_vals=np.asarray(thr_chunks, dtype=np.float64),
        thr_off=thr_off,
        ftree_vals=np.asarray(ftree_chunks, dtype=np.int32),
        ftree_off=ftree_off,
        expected_value=expected,
    )
