import csv
import io

import numpy as np
import pytest

from gbexplain.errors import ContractError, EmptySelectionError
from gbexplain.evaluation import (
    ClassStability,
    divergence,
    occurrence_matrix,
    runtime_report,
    select_alerts,
    shap_stability,
    sparsity_report,
    write_csv,
)
from gbexplain.logic import all_minimal
from gbexplain.model import BENIGN, MALICIOUS, Prediction


def _pred(malicious: bool) -> Prediction:
    m = 1.0 if malicious else -1.0
    return Prediction(margin=m, probability=0.7 if malicious else 0.3,
                      klass=MALICIOUS if malicious else BENIGN)


def _population(n_classes=8, per_class=40):
    """Predicted-malicious, truly malicious samples in n_classes classes."""
    predictions, labels, classes = [], [], []
    for c in range(n_classes):
        for _ in range(per_class):
            predictions.append(_pred(True))
            labels.append(MALICIOUS)
            classes.append("attack%d" % c)
    return predictions, labels, classes


def test_select_alerts_stratified_sizing():
    predictions, labels, classes = _population(n_classes=8, per_class=40)
    alerts = select_alerts(predictions, labels, classes, quota=11, seed=1)
    assert len(alerts.entries) == 88
    per_class = {}
    for e in alerts.entries:
        per_class[e.class_label] = per_class.get(e.class_label, 0) + 1
    assert set(per_class.values()) == {11}
    assert alerts.fallback_classes == {}
    # without replacement inside each class
    ids = [e.sample_id for e in alerts.entries]
    assert len(set(ids)) == len(ids)


def test_select_alerts_fallback_replacement():
    predictions, labels, classes = _population(n_classes=1, per_class=5)
    alerts = select_alerts(predictions, labels, classes, quota=8, seed=3)
    assert len(alerts.entries) == 8
    ids = [e.sample_id for e in alerts.entries]
    assert len(set(ids)) == 5  # whole pool plus 3 repeats
    assert alerts.fallback_classes == {"attack0": 3}


def test_select_alerts_deterministic():
    predictions, labels, classes = _population()
    a = select_alerts(predictions, labels, classes, quota=7, seed=42)
    b = select_alerts(predictions, labels, classes, quota=7, seed=42)
    assert [e.sample_id for e in a.entries] == [e.sample_id for e in b.entries]
    c = select_alerts(predictions, labels, classes, quota=7, seed=43)
    assert [e.sample_id for e in a.entries] != [e.sample_id for e in c.entries]


def test_select_alerts_kind_invariants():
    predictions = [_pred(True), _pred(True), _pred(False), _pred(True)]
    labels = [MALICIOUS, BENIGN, MALICIOUS, MALICIOUS]
    classes = ["a", "benign", "a", "b"]
    tp = select_alerts(predictions, labels, classes, quota=1, seed=0, kind="TP")
    assert all(labels[e.index] == MALICIOUS for e in tp.entries)
    assert all(predictions[e.index].klass == MALICIOUS for e in tp.entries)
    fp = select_alerts(predictions, labels, classes, quota=1, seed=0, kind="FP")
    assert [e.index for e in fp.entries] == [1]
    assert fp.entries[0].selection_kind == "FP"


def test_select_alerts_empty_selection():
    predictions = [_pred(False), _pred(False)]
    labels = [MALICIOUS, BENIGN]
    classes = ["a", "benign"]
    with pytest.raises(EmptySelectionError):
        select_alerts(predictions, labels, classes, quota=1, seed=0, kind="TP")
    fp = select_alerts(predictions, labels, classes, quota=1, seed=0, kind="FP")
    assert fp.entries == []


def test_select_alerts_rejects_bad_args():
    predictions, labels, classes = _population(1, 2)
    with pytest.raises(ContractError):
        select_alerts(predictions, labels, classes, quota=0, seed=0)
    with pytest.raises(ContractError):
        select_alerts(predictions, labels, classes, quota=1, seed=0, kind="FN")


def test_sparsity_report():
    rows, warnings = sparsity_report({
        "a": {"logic": [2, 3, 2], "statistical": [5, 6, 7]},
        "b": {"logic": [4], "statistical": []},
    })
    assert {"class": "a", "method": "logic",
            "size_min": 2, "size_mean": pytest.approx(7 / 3), "size_max": 3} in rows
    single = [r for r in rows if r["class"] == "b" and r["method"] == "logic"][0]
    assert single["size_min"] == single["size_max"] == 4
    assert single["size_mean"] == 4.0
    assert warnings == ["empty sparsity group: class=b method=statistical"]


def test_shap_stability_cells():
    report = shap_stability({
        "a": [np.array([0.2, 1.0]), np.array([0.4, 1.0])],
        "solo": [np.array([0.5, -0.1])],
    })
    st = report["a"]
    assert st.shap_min[0] == 0.2 and st.shap_max[0] == 0.4
    assert st.shap_mean[0] == pytest.approx(0.3)
    assert st.shap_min[1] == st.shap_mean[1] == st.shap_max[1] == 1.0
    solo = report["solo"]
    assert solo.shap_min[0] == solo.shap_mean[0] == solo.shap_max[0] == 0.5
    assert np.all(st.shap_min <= st.shap_mean) and np.all(st.shap_mean <= st.shap_max)


def test_shap_stability_top5_order():
    phis = [np.array([0.1, 0.9, 0.9, 0.0, 0.5, 0.4, 0.3])]
    report = shap_stability({"a": phis})
    assert report["a"].top5 == [1, 2, 4, 5, 6]  # ties broken by index


def test_occurrence_matrix_fix_a_example(fix_a, x_alert):
    result = all_minimal(fix_a, x_alert, timeout=60.0)
    sets = [e.features for e in result.explanations]
    occ, warnings = occurrence_matrix({"dos": [sets]}, 3)
    assert warnings == []
    assert occ["dos"][2] == pytest.approx(100.0)
    assert occ["dos"][0] == pytest.approx(50.0)
    assert occ["dos"][1] == pytest.approx(50.0)


def test_occurrence_matrix_extremes():
    everywhere = [[frozenset({0}), frozenset({0, 1})],
                  [frozenset({0})]]
    occ, _ = occurrence_matrix({"c": everywhere}, 3)
    assert occ["c"][0] == 100.0
    assert occ["c"][2] == 0.0
    assert np.all(occ["c"] >= 0.0) and np.all(occ["c"] <= 100.0)


def test_occurrence_matrix_per_sample_weighting():
    # sample 1 has two explanations (f0 in one), sample 2 has one (with f0):
    # per-sample fractions 0.5 and 1.0 average to 75%, not the pooled 2/3
    grouped = {"c": [[frozenset({0}), frozenset({1})], [frozenset({0})]]}
    occ, _ = occurrence_matrix(grouped, 2)
    assert occ["c"][0] == pytest.approx(75.0)


def test_occurrence_matrix_warns_on_empty_sample():
    occ, warnings = occurrence_matrix({"c": [[], [frozenset({0})]]}, 2)
    assert occ["c"][0] == 100.0
    assert len(warnings) == 1 and "no explanations" in warnings[0]


def test_divergence_flagging_mixed_cases():
    occurrence = {"slow": np.array([98.4, 92.7, 10.0, 0.0])}
    means = {"slow": np.array([0.0, 0.80, 2.5, 3.0])}
    report = divergence(occurrence, means, occurrence_threshold=80.0,
                        near_zero_epsilon=0.01, topk=2)
    entries = {e.feature: e for e in report.per_class["slow"]}
    assert set(entries) == {0, 1}
    assert entries[0].flagged          # 98.4% occurrence, zero attribution
    assert not entries[1].flagged      # 92.7% occurrence, mean 0.80
    # attribution top-2 is {3, 2}; feature 3 never occurs, feature 2 does
    assert report.containment_by_class["slow"] == pytest.approx(0.5)


def test_divergence_full_containment():
    occurrence = {"c": np.array([90.0, 50.0, 5.0])}
    means = {"c": np.array([1.0, 0.8, 0.6])}
    report = divergence(occurrence, means, topk=3)
    assert report.containment_by_class["c"] == 1.0
    assert report.shap_topk_containment == 1.0


def test_divergence_flag_reproducibility():
    occurrence = {"c": np.array([85.0, 85.0])}
    means = {"c": np.array([0.009, 0.011])}
    r1 = divergence(occurrence, means)
    r2 = divergence(occurrence, means)
    assert [e.flagged for e in r1.per_class["c"]] == \
        [e.flagged for e in r2.per_class["c"]] == [True, False]


def test_runtime_report_box_stats():
    stats = runtime_report({"m": [1.0, 2.0, 3.0, 4.0, 100.0]})["m"]
    assert stats.median == 3.0
    assert stats.p25 == 2.0 and stats.p75 == 4.0
    assert stats.outliers == [100.0]
    assert stats.min == 1.0 and stats.max == 100.0
    assert stats.min <= stats.p25 <= stats.median <= stats.p75 <= stats.max


def test_runtime_report_single_timing():
    stats = runtime_report({"m": [7.0]})["m"]
    assert stats.mean == stats.median == stats.p25 == stats.p75 == 7.0
    assert stats.outliers == []
    with pytest.raises(ContractError):
        runtime_report({"m": []})


def test_write_csv_rfc4180(tmp_path):
    path = tmp_path / "out.csv"
    write_csv(path, ["a", "b"], [{"a": 'comma,quote"x', "b": 1.5},
                                 {"a": "plain", "b": True}])
    raw = path.read_bytes()
    assert b"\r" not in raw
    rows = list(csv.reader(io.StringIO(raw.decode("utf-8"))))
    assert rows[0] == ["a", "b"]
    assert rows[1] == ['comma,quote"x', "1.5"]
    assert rows[2] == ["plain", "true"]
