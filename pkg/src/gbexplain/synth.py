"""Synthetic alert workloads for benchmarks and desk-scale evaluation.

Builds ensembles that behave like trained flow classifiers: a handful of
signal features carry an additive step function, every tree approximates
its conditional mean over the tree's cell, and the remaining features are
noise.  Samples come from per-class templates on the signal features, so
alert classes have stable explanations.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .model import BENIGN, MALICIOUS, Internal, Leaf, TreeEnsemble


@dataclass
class SyntheticWorkload:
    ensemble: TreeEnsemble
    signal_features: list[int]
    cuts: np.ndarray       # per signal feature, in (0, 1)
    weights: np.ndarray    # per signal feature, positive
    class_names: list[str]           # attack classes only
    templates: dict[str, np.ndarray]  # class -> +-1 per signal feature


def _signal_expectation(weights, cuts, sig_lo, sig_hi) -> float:
    """E[sum_j w_j * sign(x_j - c_j)] for x_j uniform on [sig_lo_j, sig_hi_j]."""
    total = 0.0
    for w, c, lo, hi in zip(weights, cuts, sig_lo, sig_hi):
        if lo >= c:
            p = 1.0
        elif hi <= c:
            p = 0.0
        else:
            p = (hi - c) / (hi - lo)
        total += w * (2.0 * p - 1.0)
    return total


def _grow_tree(rng, depth, lo, hi, cover, spec, max_depth, scale, leaf_noise,
               signal_levels):
    """Recursive splitter mimicking greedy gain ordering: the informative
    (signal) splits occupy the top levels, noise splits fill the rest, so
    leaf values are determined by the top of the tree."""
    n_signal = len(spec.signal_features)
    split_here = depth < 4 or (depth < max_depth and rng.random() < 0.6)
    if split_here:
        f = -1
        if depth < signal_levels:
            straddling = [
                j for j in range(n_signal)
                if lo[spec.signal_features[j]] < spec.cuts[j] < hi[spec.signal_features[j]]
            ]
            if straddling:
                j = straddling[int(rng.integers(len(straddling)))]
                f = spec.signal_features[j]
                t = spec.cuts[j]
        if f < 0:
            f = int(rng.integers(len(lo)))
            t = rng.uniform(lo[f], hi[f])
        width = hi[f] - lo[f]
        if width > 1e-9 and lo[f] < t < hi[f]:
            frac = (t - lo[f]) / width
            cover_left = cover * frac
            cover_right = cover - cover_left  # sums exactly
            if cover_left > 1e-9 and cover_right > 1e-9:
                old = hi[f]
                hi[f] = t
                left = _grow_tree(rng, depth + 1, lo, hi, cover_left, spec,
                                  max_depth, scale, leaf_noise, signal_levels)
                hi[f] = old
                old = lo[f]
                lo[f] = t
                right = _grow_tree(rng, depth + 1, lo, hi, cover_right, spec,
                                   max_depth, scale, leaf_noise, signal_levels)
                lo[f] = old
                return Internal(feature=f, threshold=float(t), left=left,
                                right=right, cover=float(cover))
    sig_lo = [lo[f] for f in spec.signal_features]
    sig_hi = [hi[f] for f in spec.signal_features]
    value = scale * _signal_expectation(spec.weights, spec.cuts, sig_lo, sig_hi)
    if leaf_noise > 0.0:
        value += rng.uniform(-leaf_noise, leaf_noise)
    return Leaf(value=float(value), cover=float(cover))


def make_workload(n_features: int = 92,
                  n_trees: int = 100,
                  max_depth: int = 10,
                  n_signal: int = 8,
                  n_classes: int = 8,
                  seed: int = 7,
                  leaf_noise: float = 0.0,
                  root_cover: float = 10_000.0,
                  signal_levels: int = 3) -> SyntheticWorkload:
    rng = np.random.default_rng(seed)
    signal = sorted(rng.choice(n_features, size=n_signal, replace=False).tolist())
    cuts = rng.uniform(0.35, 0.65, size=n_signal)
    weights = rng.uniform(0.5, 1.5, size=n_signal)

    class_names = ["attack%d" % j for j in range(n_classes)]
    templates: dict[str, np.ndarray] = {}
    for j, name in enumerate(class_names):
        bits = np.ones(n_signal)
        bits[j % n_signal] = -1.0
        templates[name] = bits
    templates[BENIGN] = -np.ones(n_signal)

    spec = SyntheticWorkload(
        ensemble=None,  # filled below
        signal_features=signal,
        cuts=cuts,
        weights=weights,
        class_names=class_names,
        templates=templates,
    )

    scale = 1.0 / n_trees
    trees = []
    for _ in range(n_trees):
        lo = np.zeros(n_features)
        hi = np.ones(n_features)
        trees.append(_grow_tree(rng, 0, lo, hi, root_cover, spec,
                                max_depth, scale, leaf_noise * scale,
                                signal_levels))
    spec.ensemble = TreeEnsemble(
        trees=tuple(trees),
        base_margin=0.0,
        feature_count=n_features,
        feature_names=tuple("f%02d" % i for i in range(n_features)),
    )
    return spec


def sample_alerts(workload: SyntheticWorkload, n: int, seed: int,
                  benign_fraction: float = 0.2, gap: float = 0.08):
    """Draw n samples: template-driven signal features, uniform noise.

    Returns (X, class_labels, binary_labels).
    """
    rng = np.random.default_rng(seed)
    ens = workload.ensemble
    n_features = ens.feature_count
    X = rng.uniform(0.0, 1.0, size=(n, n_features))
    class_labels: list[str] = []
    binary_labels: list[str] = []
    n_benign = int(round(n * benign_fraction))
    for i in range(n):
        if i < n_benign:
            cls = BENIGN
        else:
            cls = workload.class_names[(i - n_benign) % len(workload.class_names)]
        bits = workload.templates[cls]
        for j, f in enumerate(workload.signal_features):
            c = workload.cuts[j]
            if bits[j] > 0:
                lo = min(c + gap, 0.98)
                X[i, f] = rng.uniform(lo, 1.0)
            else:
                hi = max(c - gap, 0.02)
                X[i, f] = rng.uniform(0.0, hi)
        class_labels.append(cls)
        binary_labels.append(BENIGN if cls == BENIGN else MALICIOUS)
    return X, class_labels, binary_labels


def write_dataset_csv(path, X, class_labels, binary_labels, feature_names,
                      label_col: str = "label",
                      class_col: str = "attack_class") -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(list(feature_names) + [label_col, class_col])
        for row, label, cls in zip(np.asarray(X), binary_labels, class_labels):
            writer.writerow([repr(float(v)) for v in row] + [label, cls])
