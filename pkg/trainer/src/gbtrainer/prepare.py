"""Dataset preparation: seeded split, categorical encoding, label derivation."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np
import pandas as pd

BENIGN = "benign"
MALICIOUS = "malicious"

_BENIGN_VALUES = {"benign", "normal", "0", "false", "legitimate"}


class PrepareError(ValueError):
    """Dataset does not match the expected schema."""


@dataclass
class PrepareResult:
    train_path: str
    test_path: str
    encoding_path: str
    feature_names: list[str]
    n_train: int
    n_test: int


def _derive_binary(frame: pd.DataFrame, label_col: str | None,
                   class_col: str) -> pd.Series:
    if label_col is not None and label_col in frame.columns:
        raw = frame[label_col].astype(str).str.strip().str.lower()
    else:
        raw = frame[class_col].astype(str).str.strip().str.lower()
    return raw.map(lambda v: BENIGN if v in _BENIGN_VALUES else MALICIOUS)


def prepare(dataset_path: str, out_dir: str, label_col: str | None = "label",
            class_col: str = "attack_class", split_ratio: float = 0.8,
            seed: int = 0) -> PrepareResult:
    """Split a labeled CSV into train/test and normalize it for training.

    The split is a seeded permutation (deterministic for a fixed seed).
    Non-numeric feature columns are ordinal-encoded with the mapping saved
    to ``encoding.json``.  The binary label is derived (benign/malicious)
    while the multiclass label column is carried through unchanged.
    """
    if not 0.0 < split_ratio < 1.0:
        raise PrepareError("split ratio must be in (0, 1)")
    frame = pd.read_csv(dataset_path)
    if class_col not in frame.columns:
        raise PrepareError("missing class column %r" % class_col)
    if label_col is not None and label_col not in frame.columns:
        # fall back to deriving the binary label from the class column
        label_col = None

    binary = _derive_binary(frame, label_col, class_col)
    classes = frame[class_col].astype(str)
    drop = {class_col} | ({label_col} if label_col else set())
    feature_names = [c for c in frame.columns if c not in drop]
    if not feature_names:
        raise PrepareError("dataset has no feature columns")

    features = frame[feature_names].copy()
    encoding: dict[str, dict[str, int]] = {}
    for col in feature_names:
        numeric = pd.to_numeric(features[col], errors="coerce")
        if numeric.isna().any() and not features[col].isna().any():
            values = sorted(features[col].astype(str).unique())
            mapping = {v: i for i, v in enumerate(values)}
            encoding[col] = mapping
            features[col] = features[col].astype(str).map(mapping).astype(float)
        else:
            if numeric.isna().any():
                raise PrepareError("column %r contains missing values" % col)
            features[col] = numeric.astype(float)

    out = features
    out["label"] = binary.values
    out["attack_class"] = classes.values

    rng = np.random.default_rng(seed)
    order = rng.permutation(len(out))
    n_train = int(round(len(out) * split_ratio))
    train_idx, test_idx = order[:n_train], order[n_train:]

    os.makedirs(out_dir, exist_ok=True)
    train_path = os.path.join(out_dir, "train.csv")
    test_path = os.path.join(out_dir, "test.csv")
    encoding_path = os.path.join(out_dir, "encoding.json")
    out.iloc[train_idx].to_csv(train_path, index=False, lineterminator="\n")
    out.iloc[test_idx].to_csv(test_path, index=False, lineterminator="\n")
    with open(encoding_path, "w", encoding="utf-8") as fh:
        json.dump(encoding, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return PrepareResult(train_path=train_path, test_path=test_path,
                         encoding_path=encoding_path,
                         feature_names=feature_names,
                         n_train=len(train_idx), n_test=len(test_idx))
