"""Canonical tree-ensemble representation, parsing, and inference.

The model is an additive ensemble of binary decision trees over numeric
features.  Routing convention: ``x[feature] < threshold`` goes left,
otherwise right.  The raw additive score (margin) decides the class:
malicious iff margin > 0.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Iterator, Sequence, Union

import numpy as np

from .errors import DimensionError, ModelFormatError, StructuralError

BENIGN = "benign"
MALICIOUS = "malicious"

# Relative tolerance for the parent-cover == sum-of-children check.
COVER_RTOL = 1e-6


@dataclass(frozen=True)
class Leaf:
    value: float
    cover: float


@dataclass(frozen=True)
class Internal:
    feature: int
    threshold: float
    left: "TreeNode"
    right: "TreeNode"
    cover: float
    default_branch: str = "left"  # parsed and preserved; inputs are dense


TreeNode = Union[Leaf, Internal]


@dataclass(frozen=True)
class TreeEnsemble:
    trees: tuple[TreeNode, ...]
    base_margin: float
    feature_count: int
    feature_names: tuple[str, ...]

    def __post_init__(self):
        if len(self.feature_names) != self.feature_count:
            raise StructuralError(
                "feature_names length %d != feature_count %d"
                % (len(self.feature_names), self.feature_count)
            )


@dataclass(frozen=True)
class Prediction:
    margin: float
    probability: float
    klass: str


@dataclass
class Sample:
    """A feature vector plus optional ground-truth labels."""

    values: np.ndarray
    class_label: str | None = None
    binary_label: str | None = None  # BENIGN or MALICIOUS
    sample_id: str | None = None


def as_features(values: Sequence[float], feature_count: int) -> np.ndarray:
    """Validate and convert a feature vector to a float64 array."""
    x = np.asarray(values, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] != feature_count:
        raise DimensionError(
            "expected %d features, got shape %s" % (feature_count, x.shape)
        )
    if not np.all(np.isfinite(x)):
        raise DimensionError("feature values must be finite")
    return x


def _walk(node: TreeNode) -> Iterator[TreeNode]:
    stack = [node]
    while stack:
        n = stack.pop()
        yield n
        if isinstance(n, Internal):
            stack.append(n.right)
            stack.append(n.left)


def _parse_node(records: dict, node_id: int, tree_index: int, feature_count: int,
                visited: set) -> TreeNode:
    if node_id in visited:
        raise StructuralError(
            "tree %d: node %d referenced more than once (cycle or shared node)"
            % (tree_index, node_id)
        )
    visited.add(node_id)
    try:
        rec = records[node_id]
    except KeyError:
        raise StructuralError(
            "tree %d: missing node id %d" % (tree_index, node_id)
        ) from None

    where = "tree %d node %d" % (tree_index, node_id)
    cover = rec.get("cover")
    if not isinstance(cover, (int, float)) or isinstance(cover, bool) \
            or not math.isfinite(cover) or cover < 0:
        raise StructuralError("%s: cover must be a finite nonnegative number" % where)
    cover = float(cover)

    if "leaf" in rec:
        value = rec["leaf"]
        if not isinstance(value, (int, float)) or isinstance(value, bool) \
                or not math.isfinite(value):
            raise StructuralError("%s: leaf value must be a finite number" % where)
        return Leaf(value=float(value), cover=cover)

    for key in ("split_feature", "threshold", "left", "right"):
        if key not in rec:
            raise StructuralError("%s: internal node missing '%s'" % (where, key))
    feat = rec["split_feature"]
    if not isinstance(feat, int) or isinstance(feat, bool) \
            or not 0 <= feat < feature_count:
        raise StructuralError(
            "%s: split_feature %r out of range [0, %d)" % (where, feat, feature_count)
        )
    thr = rec["threshold"]
    if not isinstance(thr, (int, float)) or isinstance(thr, bool) or not math.isfinite(thr):
        raise StructuralError("%s: threshold must be a finite number" % where)
    default = rec.get("default", "left")
    if default not in ("left", "right"):
        raise StructuralError("%s: default must be 'left' or 'right'" % where)
    if cover <= 0:
        raise StructuralError("%s: internal node cover must be positive" % where)

    left = _parse_node(records, rec["left"], tree_index, feature_count, visited)
    right = _parse_node(records, rec["right"], tree_index, feature_count, visited)
    child_sum = left.cover + right.cover
    if abs(cover - child_sum) > COVER_RTOL * max(abs(cover), abs(child_sum)):
        raise StructuralError(
            "%s: cover %r != sum of children covers %r" % (where, cover, child_sum)
        )
    return Internal(feature=feat, threshold=float(thr), left=left, right=right,
                    cover=cover, default_branch=default)


def parse_model(document: bytes | str) -> TreeEnsemble:
    """Parse a canonical model JSON document into an immutable ensemble."""
    if isinstance(document, bytes):
        document = document.decode("utf-8")
    try:
        doc = json.loads(document)
    except json.JSONDecodeError as exc:
        raise ModelFormatError(
            "malformed JSON at byte offset %d: %s" % (exc.pos, exc.msg)
        ) from exc

    if not isinstance(doc, dict):
        raise ModelFormatError("top-level value must be an object")
    for key in ("feature_count", "feature_names", "base_margin", "trees"):
        if key not in doc:
            raise ModelFormatError("missing top-level key '%s'" % key)

    feature_count = doc["feature_count"]
    if not isinstance(feature_count, int) or isinstance(feature_count, bool) \
            or feature_count < 1:
        raise ModelFormatError("feature_count must be a positive integer")
    names = doc["feature_names"]
    if not isinstance(names, list) or not all(isinstance(n, str) for n in names):
        raise ModelFormatError("feature_names must be a list of strings")
    if len(names) != feature_count:
        raise StructuralError(
            "feature_names length %d != feature_count %d"
            % (len(names), feature_count)
        )
    base = doc["base_margin"]
    if not isinstance(base, (int, float)) or isinstance(base, bool) \
            or not math.isfinite(base):
        raise ModelFormatError("base_margin must be a finite number")
    if not isinstance(doc["trees"], list):
        raise ModelFormatError("trees must be a list")

    trees = []
    for t, nodes in enumerate(doc["trees"]):
        if not isinstance(nodes, list) or not nodes:
            raise StructuralError("tree %d: must be a nonempty node array" % t)
        records = {}
        for rec in nodes:
            if not isinstance(rec, dict) or "id" not in rec \
                    or not isinstance(rec["id"], int) or isinstance(rec["id"], bool):
                raise StructuralError("tree %d: every node needs an integer id" % t)
            if rec["id"] in records:
                raise StructuralError("tree %d: duplicate node id %d" % (t, rec["id"]))
            records[rec["id"]] = rec
        visited: set = set()
        root = _parse_node(records, 0, t, feature_count, visited)
        if len(visited) != len(records):
            orphans = sorted(set(records) - visited)
            raise StructuralError(
                "tree %d: nodes %s unreachable from root" % (t, orphans)
            )
        trees.append(root)

    return TreeEnsemble(trees=tuple(trees), base_margin=float(base),
                        feature_count=feature_count, feature_names=tuple(names))


def _emit_nodes(node: TreeNode, out: list, next_id: list) -> int:
    node_id = next_id[0]
    next_id[0] += 1
    if isinstance(node, Leaf):
        out.append({"id": node_id, "leaf": node.value, "cover": node.cover})
        return node_id
    rec = {"id": node_id, "cover": node.cover, "split_feature": node.feature,
           "threshold": node.threshold, "left": -1, "right": -1,
           "default": node.default_branch}
    out.append(rec)
    rec["left"] = _emit_nodes(node.left, out, next_id)
    rec["right"] = _emit_nodes(node.right, out, next_id)
    return node_id


def serialize_model(ensemble: TreeEnsemble) -> bytes:
    """Emit the canonical JSON form (pre-order node ids, root id 0)."""
    trees = []
    for root in ensemble.trees:
        nodes: list = []
        _emit_nodes(root, nodes, [0])
        trees.append(nodes)
    doc = {
        "feature_count": ensemble.feature_count,
        "feature_names": list(ensemble.feature_names),
        "base_margin": ensemble.base_margin,
        "trees": trees,
    }
    return json.dumps(doc, separators=(",", ":")).encode("utf-8")


def _route(node: TreeNode, x: np.ndarray) -> Leaf:
    while isinstance(node, Internal):
        node = node.left if x[node.feature] < node.threshold else node.right
    return node


def margin(ensemble: TreeEnsemble, x) -> float:
    """Raw additive score: base margin plus one leaf value per tree."""
    x = as_features(x, ensemble.feature_count)
    total = ensemble.base_margin
    for root in ensemble.trees:
        total += _route(root, x).value
    return total


def _logistic(m: float) -> float:
    if m >= 0:
        z = math.exp(-m)
        return 1.0 / (1.0 + z)
    z = math.exp(m)
    return z / (1.0 + z)


def predict(ensemble: TreeEnsemble, x) -> Prediction:
    m = margin(ensemble, x)
    return Prediction(margin=m, probability=_logistic(m),
                      klass=MALICIOUS if m > 0.0 else BENIGN)


def feature_thresholds(ensemble: TreeEnsemble, feature_index: int) -> list[float]:
    """Distinct thresholds used on one feature anywhere in the ensemble, ascending."""
    if not 0 <= feature_index < ensemble.feature_count:
        raise DimensionError(
            "feature index %d out of range [0, %d)"
            % (feature_index, ensemble.feature_count)
        )
    seen = set()
    for root in ensemble.trees:
        for node in _walk(root):
            if isinstance(node, Internal) and node.feature == feature_index:
                seen.add(node.threshold)
    return sorted(seen)


def all_feature_thresholds(ensemble: TreeEnsemble) -> list[list[float]]:
    """Per-feature sorted distinct thresholds for the whole ensemble."""
    per_feature: list[set] = [set() for _ in range(ensemble.feature_count)]
    for root in ensemble.trees:
        for node in _walk(root):
            if isinstance(node, Internal):
                per_feature[node.feature].add(node.threshold)
    return [sorted(s) for s in per_feature]
