"""Booster training and lossless export to the engine's model format.

The classifier is sklearn's gradient-boosted trees with the class
imbalance handled through per-sample weights (weight ``scale_pos_weight``
on the malicious class).  Export converts each regression tree to the
canonical node array; sklearn routes ``x <= t`` left while the engine
routes ``x < t`` left, so thresholds are bumped to ``nextafter(t, +inf)``,
which is bit-exact for float64 inputs.  After writing the file the export
is verified by running the engine's ``predict`` command and comparing
margins.
"""

from __future__ import annotations

import json
import math
import os
import shlex
import subprocess
import sys
import tempfile
from dataclasses import asdict, dataclass, field

import numpy as np
import pandas as pd
from sklearn.ensemble import GradientBoostingClassifier

from .prepare import BENIGN, MALICIOUS, PrepareError

VERIFY_TOLERANCE = 1e-6
VERIFY_ROWS = 1000


class ExportError(RuntimeError):
    """Engine-side margins drifted from the trainer's beyond tolerance."""


@dataclass
class TrainSpec:
    train_path: str
    label_col: str = "label"
    class_col: str = "attack_class"
    seed: int = 0
    scale_pos_weight: float = 2.2
    n_estimators: int = 100
    max_depth: int = 10
    learning_rate: float = 0.35
    engine_cmd: str = sys.executable + " -m gbexplain.cli"

    def __post_init__(self):
        if min(self.scale_pos_weight, self.n_estimators, self.max_depth,
               self.learning_rate) <= 0:
            raise PrepareError("hyperparameters must be positive")


def _tree_nodes(tree, learning_rate: float) -> list[dict]:
    """Canonical node array for one fitted regression tree."""
    left = tree.children_left
    right = tree.children_right
    nodes = []
    for node in range(tree.node_count):
        cover = float(tree.weighted_n_node_samples[node])
        if left[node] < 0:
            nodes.append({
                "id": int(node),
                "leaf": float(learning_rate * tree.value[node, 0, 0]),
                "cover": cover,
            })
        else:
            nodes.append({
                "id": int(node),
                "cover": cover,
                "split_feature": int(tree.feature[node]),
                # engine convention is `x < t`, sklearn's is `x <= t`
                "threshold": math.nextafter(float(tree.threshold[node]), math.inf),
                "left": int(left[node]),
                "right": int(right[node]),
                "default": "left",
            })
    return nodes


def export_model(model: GradientBoostingClassifier, feature_names: list[str],
                 probe_row: np.ndarray) -> dict:
    """Model document whose margins reproduce ``decision_function``."""
    trees = [_tree_nodes(est[0].tree_, model.learning_rate)
             for est in model.estimators_]

    # recover the raw initial score from a probe row: decision_function
    # minus the summed per-tree contributions
    contribution = 0.0
    for est in model.estimators_:
        tree = est[0].tree_
        node = 0
        while tree.children_left[node] >= 0:
            if probe_row[tree.feature[node]] <= tree.threshold[node]:
                node = tree.children_left[node]
            else:
                node = tree.children_right[node]
        contribution += model.learning_rate * tree.value[node, 0, 0]
    raw = float(model.decision_function(probe_row.reshape(1, -1))[0])
    base_margin = raw - contribution

    return {
        "feature_count": len(feature_names),
        "feature_names": list(feature_names),
        "base_margin": base_margin,
        "trees": trees,
    }


def _verify_export(engine_cmd: str, model_path: str, frame: pd.DataFrame,
                   feature_names: list[str], trainer_margins: np.ndarray) -> float:
    """Run the engine's predict command and compare margins; returns the
    worst absolute difference."""
    with tempfile.TemporaryDirectory() as tmp:
        data_path = os.path.join(tmp, "verify.csv")
        out_path = os.path.join(tmp, "pred.jsonl")
        frame[feature_names].to_csv(data_path, index=False, lineterminator="\n")
        cmd = shlex.split(engine_cmd) + [
            "predict", "--model", model_path, "--data", data_path,
            "--out", out_path,
        ]
        proc = subprocess.run(cmd, capture_output=True, text=True)
        if proc.returncode != 0:
            raise ExportError("engine predict failed (%d): %s"
                              % (proc.returncode, proc.stderr.strip()))
        engine_margins = np.array([
            json.loads(line)["margin"]
            for line in open(out_path, encoding="utf-8")
        ])
    if engine_margins.shape != trainer_margins.shape:
        raise ExportError("engine returned %d margins for %d rows"
                          % (engine_margins.shape[0], trainer_margins.shape[0]))
    return float(np.max(np.abs(engine_margins - trainer_margins)))


def train(spec: TrainSpec, out_dir: str) -> dict:
    """Fit the booster, export model.json and trainspec.json, verify margins.

    Returns a summary dict (train accuracy, verification gap, paths).
    """
    frame = pd.read_csv(spec.train_path)
    for col in (spec.label_col, spec.class_col):
        if col not in frame.columns:
            raise PrepareError("missing column %r in training data" % col)
    feature_names = [c for c in frame.columns
                     if c not in (spec.label_col, spec.class_col)]
    X = frame[feature_names].to_numpy(dtype=np.float64)
    labels = frame[spec.label_col].astype(str).str.lower()
    if not set(labels.unique()) <= {BENIGN, MALICIOUS}:
        raise PrepareError("label column must contain benign/malicious "
                           "(run prepare first)")
    y = (labels == MALICIOUS).to_numpy(dtype=np.int64)
    if len(np.unique(y)) < 2:
        raise PrepareError("training data needs both classes")

    weights = np.where(y == 1, spec.scale_pos_weight, 1.0)
    model = GradientBoostingClassifier(
        n_estimators=spec.n_estimators,
        max_depth=spec.max_depth,
        learning_rate=spec.learning_rate,
        random_state=spec.seed,
    )
    model.fit(X, y, sample_weight=weights)

    document = export_model(model, feature_names, X[0])
    os.makedirs(out_dir, exist_ok=True)
    model_path = os.path.join(out_dir, "model.json")
    with open(model_path, "w", encoding="utf-8") as fh:
        json.dump(document, fh, separators=(",", ":"))
        fh.write("\n")

    rng = np.random.default_rng(spec.seed)
    n_check = min(VERIFY_ROWS, len(frame))
    picks = np.sort(rng.choice(len(frame), size=n_check, replace=False))
    trainer_margins = model.decision_function(X[picks])
    gap = _verify_export(spec.engine_cmd, model_path, frame.iloc[picks],
                         feature_names, trainer_margins)
    if gap > VERIFY_TOLERANCE:
        os.remove(model_path)
        raise ExportError("export drift %.3g exceeds tolerance %g"
                          % (gap, VERIFY_TOLERANCE))

    accuracy = float(model.score(X, y))
    spec_path = os.path.join(out_dir, "trainspec.json")
    with open(spec_path, "w", encoding="utf-8") as fh:
        json.dump({
            "spec": asdict(spec),
            "sklearn_params": model.get_params(),
            "verified_rows": int(n_check),
            "verification_gap": gap,
            "train_accuracy": accuracy,
        }, fh, indent=2, sort_keys=True, default=str)
        fh.write("\n")
    return {
        "model_path": model_path,
        "trainspec_path": spec_path,
        "train_accuracy": accuracy,
        "verification_gap": gap,
        "n_trees": spec.n_estimators,
        "feature_names": feature_names,
    }
