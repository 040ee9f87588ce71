import csv
import hashlib
import json
import os

import numpy as np
import pytest

from conftest import FIX_A_DOC
from gbexplain.cli import main
from gbexplain.synth import make_workload, sample_alerts, write_dataset_csv


@pytest.fixture
def model_path(tmp_path):
    path = tmp_path / "model.json"
    path.write_text(json.dumps(FIX_A_DOC))
    return str(path)


def _write_csv(path, rows, header=("f0", "f1", "f2", "label", "attack_class")):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)
    return str(path)


@pytest.fixture
def data_path(tmp_path, model_path):
    return _write_csv(tmp_path / "data.csv", [
        [3.0, 9.0, 1.0, "malicious", "dos"],
        [7.0, 1.0, -1.0, "benign", "benign"],
        [3.0, 9.0, 2.0, "malicious", "dos"],
        [2.0, 1.0, 5.0, "malicious", "scan"],
    ])


def test_predict_fix_a(model_path, tmp_path, data_path, capsys):
    out = tmp_path / "pred.jsonl"
    rc = main(["predict", "--model", model_path, "--data", data_path,
               "--out", str(out)])
    assert rc == 0
    lines = [json.loads(l) for l in out.read_text().splitlines()]
    assert len(lines) == 4
    assert lines[0]["klass"] == "malicious" and lines[0]["margin"] == 2.0
    assert lines[1]["klass"] == "benign" and lines[1]["margin"] == -3.0
    assert [l["sample_id"] for l in lines] == ["s%06d" % i for i in range(4)]


def test_predict_empty_body(model_path, tmp_path):
    data = _write_csv(tmp_path / "empty.csv", [])
    out = tmp_path / "pred.jsonl"
    rc = main(["predict", "--model", model_path, "--data", data, "--out", str(out)])
    assert rc == 0
    assert out.read_text() == ""


def test_predict_missing_feature_column_exit_2(model_path, tmp_path, capsys):
    data = _write_csv(tmp_path / "bad.csv", [[1.0, 2.0]], header=("f0", "f1"))
    rc = main(["predict", "--model", model_path, "--data", data])
    assert rc == 2
    assert "f2" in capsys.readouterr().err


def test_predict_non_numeric_cell_exit_2(model_path, tmp_path, capsys):
    data = _write_csv(tmp_path / "bad.csv",
                      [[1.0, "oops", 3.0, "benign", "x"]])
    rc = main(["predict", "--model", model_path, "--data", data])
    assert rc == 2
    assert "oops" in capsys.readouterr().err


def test_explain_one_minimal(model_path, data_path, tmp_path):
    out = tmp_path / "out"
    rc = main(["explain", "--model", model_path, "--data", data_path,
               "--mode", "one-minimal", "--per-class", "1", "--seed", "5",
               "--out", str(out)])
    assert rc == 0
    records = sorted(os.listdir(out / "explanations"))
    assert records
    rec = json.loads((out / "explanations" / records[0]).read_text())
    assert rec["minimal"] is True
    assert rec["oracle_calls"] == 3
    named = {p["feature"]: p["value"] for p in rec["pairs"]}
    assert len(named) == 2  # fix-a alerts have size-2 minimal explanations


def test_explain_all_minimal_cap(model_path, data_path, tmp_path):
    out = tmp_path / "out"
    rc = main(["explain", "--model", model_path, "--data", data_path,
               "--mode", "all-minimal", "--per-class", "1", "--seed", "5",
               "--cap", "1", "--out", str(out)])
    assert rc == 0
    records = sorted(p for p in os.listdir(out / "explanations")
                     if p.endswith(".all.json"))
    rec = json.loads((out / "explanations" / records[0]).read_text())
    assert rec["complete"] is False
    assert rec["count"] == 1


def test_explain_shap_local_accuracy(model_path, data_path, tmp_path):
    out = tmp_path / "out"
    rc = main(["explain", "--model", model_path, "--data", data_path,
               "--mode", "shap", "--per-class", "1", "--seed", "5",
               "--out", str(out)])
    assert rc == 0
    for name in os.listdir(out / "attributions"):
        rec = json.loads((out / "attributions" / name).read_text())
        total = rec["base"] + sum(p["value"] for p in rec["phi"])
        margin = 2.0  # both eligible alerts in the fixture have margin 2.0
        assert abs(total - margin) < 1e-9


def test_explain_no_tps_exit_3(model_path, tmp_path, capsys):
    data = _write_csv(tmp_path / "benign.csv", [
        [7.0, 1.0, -1.0, "benign", "benign"],
        [3.0, 9.0, 1.0, "benign", "benign"],  # predicted malicious, FP
    ])
    rc = main(["explain", "--model", model_path, "--data", data,
               "--mode", "one-minimal", "--per-class", "1", "--seed", "0",
               "--out", str(tmp_path / "o")])
    assert rc == 3


def test_evaluate_bundle_complete_and_deterministic(model_path, data_path, tmp_path):
    outs = []
    for name, threads in (("b1", "1"), ("b2", "4"), ("b3", "1")):
        out = tmp_path / name
        rc = main(["evaluate", "--model", model_path, "--data", data_path,
                   "--per-class", "2", "--seed", "9", "--clock", "null",
                   "--threads", threads, "--out", str(out)])
        assert rc == 0
        outs.append(out)

    for req in ("alerts.json", "stability.csv", "divergence.csv",
                "runtime.csv", "sparsity.csv", "manifest.json"):
        assert (outs[0] / req).exists()

    def digest(root):
        h = hashlib.sha256()
        for dirpath, dirnames, filenames in sorted(os.walk(root)):
            dirnames.sort()
            for fn in sorted(filenames):
                p = os.path.join(dirpath, fn)
                h.update(os.path.relpath(p, root).encode())
                h.update(open(p, "rb").read())
        return h.hexdigest()

    assert digest(outs[0]) == digest(outs[1]) == digest(outs[2])

    manifest = json.loads((outs[0] / "manifest.json").read_text())
    assert manifest["seed"] == 9
    assert manifest["version"]
    assert "threads" not in manifest  # result-neutral knobs stay out


def test_evaluate_fallback_noted_in_manifest(model_path, data_path, tmp_path):
    out = tmp_path / "bundle"
    rc = main(["evaluate", "--model", model_path, "--data", data_path,
               "--per-class", "3", "--seed", "1", "--clock", "null",
               "--out", str(out)])
    assert rc == 0
    manifest = json.loads((out / "manifest.json").read_text())
    # dos has 2 eligible TPs, scan has 1; quota 3 forces replacement in both
    assert manifest["fallback_classes"] == {"dos": 1, "scan": 2}


def test_evaluate_on_synthetic_workload(tmp_path):
    w = make_workload(n_features=10, n_trees=6, max_depth=4, n_signal=3,
                      n_classes=3, seed=2)
    X, cls, lab = sample_alerts(w, 40, seed=4)
    from gbexplain.model import serialize_model

    model = tmp_path / "m.json"
    model.write_bytes(serialize_model(w.ensemble))
    data = tmp_path / "d.csv"
    write_dataset_csv(data, X, cls, lab, w.ensemble.feature_names)
    out = tmp_path / "bundle"
    rc = main(["evaluate", "--model", str(model), "--data", str(data),
               "--per-class", "3", "--seed", "0", "--clock", "null",
               "--out", str(out)])
    assert rc == 0
    rows = list(csv.DictReader(open(out / "sparsity.csv")))
    logic = {r["class"]: float(r["size_mean"]) for r in rows if r["method"] == "logic"}
    stat = {r["class"]: float(r["size_mean"]) for r in rows
            if r["method"] == "statistical"}
    assert set(logic) == set(stat)
    assert all(logic[c] <= stat[c] for c in logic)
