import json
import math

import numpy as np
import pytest

from conftest import FIX_A_DOC, SINGLE_LEAF_DOC, random_ensemble, random_sample
from gbexplain.errors import DimensionError, ModelFormatError, StructuralError
from gbexplain.model import (
    BENIGN,
    MALICIOUS,
    Internal,
    Leaf,
    feature_thresholds,
    margin,
    parse_model,
    predict,
    serialize_model,
)


def test_parse_fix_a(fix_a):
    assert len(fix_a.trees) == 2
    assert fix_a.feature_count == 3
    assert fix_a.base_margin == 0.0
    root = fix_a.trees[0]
    assert isinstance(root, Internal)
    assert root.feature == 0 and root.threshold == 5.0
    assert isinstance(root.left, Leaf) and root.left.value == 1.0


def test_parse_single_leaf(single_leaf):
    assert margin(single_leaf, [123.0]) == 0.7
    assert margin(single_leaf, [-1e9]) == 0.7


def test_parse_cover_mismatch():
    doc = json.loads(json.dumps(FIX_A_DOC))
    doc["trees"][0][0]["cover"] = 10.0  # children sum to 20
    with pytest.raises(StructuralError, match="tree 0 node 0"):
        parse_model(json.dumps(doc))


def test_parse_malformed_json_reports_offset():
    with pytest.raises(ModelFormatError, match="byte offset"):
        parse_model(b'{"feature_count": 3,')


def test_parse_out_of_range_feature():
    doc = json.loads(json.dumps(FIX_A_DOC))
    doc["trees"][1][0]["split_feature"] = 7
    with pytest.raises(StructuralError, match="tree 1 node 0"):
        parse_model(json.dumps(doc))


def test_parse_rejects_unreachable_nodes():
    doc = json.loads(json.dumps(SINGLE_LEAF_DOC))
    doc["trees"][0].append({"id": 5, "leaf": 1.0, "cover": 1.0})
    with pytest.raises(StructuralError, match="unreachable"):
        parse_model(json.dumps(doc))


def test_parse_rejects_cycle():
    doc = {
        "feature_count": 1,
        "feature_names": ["f0"],
        "base_margin": 0.0,
        "trees": [[
            {"id": 0, "cover": 2.0, "split_feature": 0, "threshold": 0.0,
             "left": 1, "right": 0},
            {"id": 1, "leaf": 0.0, "cover": 1.0},
        ]],
    }
    with pytest.raises(StructuralError, match="referenced more than once"):
        parse_model(json.dumps(doc))


def test_margin_examples(fix_a, single_leaf):
    assert margin(fix_a, [3.0, 9.0, 1.0]) == 2.0
    assert margin(fix_a, [7.0, 1.0, -1.0]) == -3.0
    assert margin(single_leaf, [0.0]) == 0.7


def test_margin_dimension_error(fix_a):
    with pytest.raises(DimensionError):
        margin(fix_a, [1.0, 2.0])
    with pytest.raises(DimensionError):
        margin(fix_a, [1.0, 2.0, math.nan])


def test_predict_examples(fix_a):
    pred = predict(fix_a, [3.0, 9.0, 1.0])
    assert pred.klass == MALICIOUS and pred.margin == 2.0
    assert pred.probability == pytest.approx(1.0 / (1.0 + math.exp(-2.0)))
    assert predict(fix_a, [7.0, 1.0, -1.0]).klass == BENIGN


def test_predict_zero_margin_is_benign(single_leaf):
    doc = json.loads(json.dumps(SINGLE_LEAF_DOC))
    doc["trees"][0][0]["leaf"] = 0.0
    zero = parse_model(json.dumps(doc))
    pred = predict(zero, [5.0])
    assert pred.margin == 0.0
    assert pred.klass == BENIGN
    assert pred.probability == 0.5


def test_feature_thresholds(fix_a):
    assert feature_thresholds(fix_a, 0) == [5.0]
    assert feature_thresholds(fix_a, 1) == [2.0]
    assert feature_thresholds(fix_a, 2) == [0.0]


def test_feature_thresholds_unused_feature():
    doc = json.loads(json.dumps(SINGLE_LEAF_DOC))
    doc["feature_count"] = 2
    doc["feature_names"] = ["f0", "f1"]
    ens = parse_model(json.dumps(doc))
    assert feature_thresholds(ens, 1) == []
    with pytest.raises(DimensionError):
        feature_thresholds(ens, 5)


def test_round_trip_identity(fix_a):
    blob = serialize_model(fix_a)
    again = parse_model(blob)
    assert serialize_model(again) == blob
    assert again == fix_a


def test_round_trip_random():
    rng = np.random.default_rng(42)
    for _ in range(25):
        ens = random_ensemble(rng)
        blob = serialize_model(ens)
        again = parse_model(blob)
        assert again == ens
        assert serialize_model(again) == blob


def test_additivity_and_leaf_range():
    rng = np.random.default_rng(7)
    for _ in range(25):
        ens = random_ensemble(rng)
        x = random_sample(rng, ens)
        per_tree = []
        for root in ens.trees:
            node = root
            while isinstance(node, Internal):
                node = node.left if x[node.feature] < node.threshold else node.right
            per_tree.append(node.value)
            leaves = _leaf_values(root)
            assert min(leaves) <= node.value <= max(leaves)
        total = ens.base_margin
        for v in per_tree:
            total += v
        assert margin(ens, x) == total


def _leaf_values(root):
    if isinstance(root, Leaf):
        return [root.value]
    return _leaf_values(root.left) + _leaf_values(root.right)


def test_routing_determinism(fix_a):
    x = [3.0, 9.0, 1.0]
    results = {margin(fix_a, x) for _ in range(10)}
    assert results == {2.0}
