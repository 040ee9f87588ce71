"""Batch command-line front end: predict, explain, evaluate.

Exit codes: 0 success, 2 input/schema error, 3 empty alert selection,
4 internal invariant violation.  All randomness flows from --seed; the
only wall-clock dependence is duration measurement, which --clock null
replaces with zeros for byte-reproducible bundles.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import shutil
import sys
import time
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import __version__
from .attribution import positive_features, shapley_tree
from .errors import (
    ContractError,
    EmptySelectionError,
    GBExplainError,
    ModelFormatError,
    SchemaError,
)
from .evaluation import (
    DIVERGENCE_FIELDS,
    RUNTIME_FIELDS,
    SPARSITY_FIELDS,
    STABILITY_FIELDS,
    AlertSet,
    alerts_payload,
    divergence,
    divergence_rows,
    occurrence_matrix,
    runtime_report,
    runtime_rows,
    select_alerts,
    shap_stability,
    sparsity_report,
    stability_rows,
    write_csv,
    write_json,
)
from .kernels import IMPLEMENTATION
from .logic import _OracleStats, all_minimal, one_minimal
from .model import BENIGN, MALICIOUS, parse_model, predict
from .oracle import FeatureDomainSpec, kernel_for

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_EMPTY_SELECTION = 3
EXIT_INTERNAL = 4

_LABEL_ALIASES = {
    "benign": BENIGN, "malicious": MALICIOUS,
    "0": BENIGN, "1": MALICIOUS,
    "normal": BENIGN, "attack": MALICIOUS,
}


def _wall_clock() -> int:
    return time.perf_counter_ns()


def _null_clock() -> int:
    return 0


def load_model(path):
    with open(path, "rb") as fh:
        return parse_model(fh.read())


def read_dataset(path, feature_names, label_col=None, class_col=None):
    """CSV with a header naming every model feature; returns (X, labels, classes)."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise SchemaError("%s: empty file, header row required" % path)
        missing = [n for n in feature_names if n not in header]
        if missing:
            raise SchemaError(
                "%s: missing feature columns: %s" % (path, ", ".join(missing)))
        for col in (label_col, class_col):
            if col is not None and col not in header:
                raise SchemaError("%s: missing column %r" % (path, col))
        feat_idx = [header.index(n) for n in feature_names]
        label_idx = header.index(label_col) if label_col else None
        class_idx = header.index(class_col) if class_col else None

        rows, labels, classes = [], [], []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise SchemaError("%s line %d: expected %d cells, got %d"
                                  % (path, lineno, len(header), len(row)))
            try:
                rows.append([float(row[j]) for j in feat_idx])
            except ValueError:
                bad = next(j for j in feat_idx if not _is_float(row[j]))
                raise SchemaError(
                    "%s line %d: non-numeric value %r in feature column %r"
                    % (path, lineno, row[bad], header[bad])) from None
            if label_idx is not None:
                raw = row[label_idx].strip().lower()
                if raw not in _LABEL_ALIASES:
                    raise SchemaError(
                        "%s line %d: label %r is not benign/malicious"
                        % (path, lineno, row[label_idx]))
                labels.append(_LABEL_ALIASES[raw])
            if class_idx is not None:
                classes.append(row[class_idx])
    X = np.array(rows, dtype=np.float64).reshape(len(rows), len(feature_names))
    return X, (labels if label_idx is not None else None), \
        (classes if class_idx is not None else None)


def _is_float(cell: str) -> bool:
    try:
        float(cell)
        return True
    except ValueError:
        return False


def _load_domains(args, ensemble) -> FeatureDomainSpec:
    if args.domains:
        with open(args.domains, "rb") as fh:
            return FeatureDomainSpec.from_json(
                fh.read(), ensemble.feature_count, ensemble.feature_names)
    return FeatureDomainSpec.unbounded(ensemble.feature_count)


# -- per-sample explanation records -------------------------------------------


def _pairs_json(pairs, feature_names):
    return [{"feature": f, "name": feature_names[f], "value": v}
            for f, v in pairs]


def _explain_one_minimal(ensemble, domains, x, sid, cls, clock):
    stats = _OracleStats()
    t0 = clock()
    explanation = one_minimal(ensemble, x, domains, stats=stats)
    elapsed_us = (clock() - t0) // 1000
    record = {
        "sample_id": sid,
        "class_label": cls,
        "pairs": _pairs_json(explanation.pairs, ensemble.feature_names),
        "minimal": explanation.minimality == "proved",
        "elapsed_us": int(elapsed_us),
        "oracle_calls": stats.calls,
    }
    return record, explanation


def _explain_all_minimal(ensemble, domains, x, sid, cls, clock, timeout, cap):
    # under the null clock, elapsed stays 0 and the timeout never fires
    result = all_minimal(ensemble, x, domains, timeout=timeout, cap=cap,
                         clock=clock)
    record = {
        "sample_id": sid,
        "class_label": cls,
        "complete": result.complete,
        "count": len(result.explanations),
        "elapsed_us": result.elapsed_us,
        "oracle_calls": result.oracle_calls,
        "explanations": [
            {
                "pairs": _pairs_json(e.pairs, ensemble.feature_names),
                "minimal": e.minimality == "proved",
            }
            for e in result.explanations
        ],
    }
    return record, result


def _explain_shap(ensemble, x, sid, cls, clock):
    t0 = clock()
    attr = shapley_tree(ensemble, x)
    elapsed_us = (clock() - t0) // 1000
    positive = sorted(positive_features(attr))
    record = {
        "sample_id": sid,
        "class_label": cls,
        "base": attr.base,
        "phi": [{"feature": f, "name": ensemble.feature_names[f],
                 "value": float(attr.phi[f])}
                for f in range(ensemble.feature_count)],
        "positive": positive,
        "elapsed_us": int(elapsed_us),
    }
    return record, attr


# -- subcommands ---------------------------------------------------------------


def cmd_predict(args) -> int:
    ensemble = load_model(args.model)
    X, _, _ = read_dataset(args.data, ensemble.feature_names)
    kernel = kernel_for(ensemble)
    margins = kernel.margins(X) if X.shape[0] else np.empty(0)
    out = open(args.out, "w", encoding="utf-8") if args.out else sys.stdout
    try:
        for i in range(X.shape[0]):
            pred = predict(ensemble, X[i])
            if pred.margin != margins[i]:
                raise ContractError("kernel/reference margin mismatch at row %d" % i)
            json.dump({"sample_id": "s%06d" % i,
                       "margin": pred.margin,
                       "probability": pred.probability,
                       "klass": pred.klass}, out)
            out.write("\n")
    finally:
        if args.out:
            out.close()
    return EXIT_OK


def _select(args, ensemble, X, labels, classes) -> AlertSet:
    if labels is None or classes is None:
        raise SchemaError("explain/evaluate need --label-col and --class-col")
    kernel = kernel_for(ensemble)
    margins = kernel.margins(X) if X.shape[0] else np.empty(0)
    predictions = [predict(ensemble, X[i]) for i in range(X.shape[0])]
    for i, pred in enumerate(predictions):
        if pred.margin != margins[i]:
            raise ContractError("kernel/reference margin mismatch at row %d" % i)
    return select_alerts(predictions, labels, classes,
                         quota=args.per_class, seed=args.seed,
                         kind=args.select.upper())


def _clock_of(args):
    return _null_clock if args.clock == "null" else _wall_clock


def _unique_entries(alerts: AlertSet):
    seen = set()
    unique = []
    for e in alerts.entries:
        if e.sample_id not in seen:
            seen.add(e.sample_id)
            unique.append(e)
    return unique


def cmd_explain(args) -> int:
    ensemble = load_model(args.model)
    domains = _load_domains(args, ensemble)
    X, labels, classes = read_dataset(args.data, ensemble.feature_names,
                                      args.label_col, args.class_col)
    alerts = _select(args, ensemble, X, labels, classes)
    clock = _clock_of(args)
    os.makedirs(args.out, exist_ok=True)
    outdir = os.path.join(args.out, "explanations"
                          if args.mode != "shap" else "attributions")
    os.makedirs(outdir, exist_ok=True)

    unique = _unique_entries(alerts)

    def work(entry):
        x = X[entry.index]
        if args.mode == "one-minimal":
            record, _ = _explain_one_minimal(
                ensemble, domains, x, entry.sample_id, entry.class_label, clock)
            return entry.sample_id, "min", record
        if args.mode == "all-minimal":
            record, _ = _explain_all_minimal(
                ensemble, domains, x, entry.sample_id, entry.class_label,
                clock, args.timeout_secs, args.cap)
            return entry.sample_id, "all", record
        record, _ = _explain_shap(ensemble, x, entry.sample_id,
                                  entry.class_label, clock)
        return entry.sample_id, "shap", record

    with ThreadPoolExecutor(max_workers=args.threads) as pool:
        results = list(pool.map(work, unique))
    results.sort(key=lambda r: r[0])
    for sid, tag, record in results:
        suffix = {"min": ".min.json", "all": ".all.json", "shap": ".json"}[tag]
        write_json(os.path.join(outdir, sid + suffix), record)
    write_json(os.path.join(args.out, "alerts.json"), alerts_payload(alerts))
    return EXIT_OK


def cmd_evaluate(args) -> int:
    ensemble = load_model(args.model)
    domains = _load_domains(args, ensemble)
    X, labels, classes = read_dataset(args.data, ensemble.feature_names,
                                      args.label_col, args.class_col)
    alerts = _select(args, ensemble, X, labels, classes)
    clock = _clock_of(args)

    created = not os.path.isdir(args.out)
    os.makedirs(args.out, exist_ok=True)
    try:
        _evaluate_into(args, ensemble, domains, X, alerts, clock)
    except BaseException:
        # never leave a partial bundle behind
        if created:
            shutil.rmtree(args.out, ignore_errors=True)
        else:
            for name in ("alerts.json", "stability.csv", "divergence.csv",
                         "runtime.csv", "sparsity.csv", "manifest.json",
                         "explanations", "attributions"):
                p = os.path.join(args.out, name)
                if os.path.isdir(p):
                    shutil.rmtree(p, ignore_errors=True)
                elif os.path.exists(p):
                    os.remove(p)
        raise
    return EXIT_OK


def _evaluate_into(args, ensemble, domains, X, alerts, clock) -> None:
    exp_dir = os.path.join(args.out, "explanations")
    att_dir = os.path.join(args.out, "attributions")
    os.makedirs(exp_dir, exist_ok=True)
    os.makedirs(att_dir, exist_ok=True)

    unique = _unique_entries(alerts)

    def work(entry):
        x = X[entry.index]
        min_record, explanation = _explain_one_minimal(
            ensemble, domains, x, entry.sample_id, entry.class_label, clock)
        all_record, enumeration = _explain_all_minimal(
            ensemble, domains, x, entry.sample_id, entry.class_label,
            clock, args.timeout_secs, args.cap)
        shap_record, attr = _explain_shap(
            ensemble, x, entry.sample_id, entry.class_label, clock)
        return {
            "sample_id": entry.sample_id,
            "min_record": min_record,
            "all_record": all_record,
            "shap_record": shap_record,
            "logic_size": len(explanation),
            "stat_size": len(positive_features(attr)),
            "phi": attr.phi,
            "enum_sets": [e.features for e in enumeration.explanations],
            "timings": {
                "one_minimal": min_record["elapsed_us"],
                "all_minimal": all_record["elapsed_us"],
                "shap": shap_record["elapsed_us"],
            },
        }

    with ThreadPoolExecutor(max_workers=args.threads) as pool:
        computed = {r["sample_id"]: r for r in pool.map(work, unique)}

    for sid in sorted(computed):
        r = computed[sid]
        write_json(os.path.join(exp_dir, sid + ".min.json"), r["min_record"])
        write_json(os.path.join(exp_dir, sid + ".all.json"), r["all_record"])
        write_json(os.path.join(att_dir, sid + ".json"), r["shap_record"])

    # metric groupings follow the alert entries, so fallback repeats count
    sizes: dict[str, dict[str, list[int]]] = {}
    phis: dict[str, list[np.ndarray]] = {}
    enums: dict[str, list[list[frozenset]]] = {}
    for entry in alerts.entries:
        r = computed[entry.sample_id]
        cls = entry.class_label
        sizes.setdefault(cls, {}).setdefault("logic", []).append(r["logic_size"])
        sizes.setdefault(cls, {}).setdefault("statistical", []).append(r["stat_size"])
        phis.setdefault(cls, []).append(r["phi"])
        enums.setdefault(cls, []).append(r["enum_sets"])
    timings = {
        method: [computed[sid]["timings"][method] for sid in sorted(computed)]
        for method in ("one_minimal", "all_minimal", "shap")
    }

    sparsity_rows_, sparsity_warnings = sparsity_report(sizes)
    stability = shap_stability(phis)
    occurrence, occ_warnings = occurrence_matrix(enums, ensemble.feature_count)
    shap_means = {cls: stability[cls].shap_mean for cls in stability}
    div = divergence(occurrence, shap_means,
                     occurrence_threshold=args.occurrence_threshold,
                     near_zero_epsilon=args.near_zero_eps,
                     topk=args.topk)
    runtime = runtime_report(timings)

    write_json(os.path.join(args.out, "alerts.json"), alerts_payload(alerts))
    write_csv(os.path.join(args.out, "stability.csv"), STABILITY_FIELDS,
              stability_rows(stability, occurrence, ensemble.feature_names))
    write_csv(os.path.join(args.out, "divergence.csv"), DIVERGENCE_FIELDS,
              divergence_rows(div, ensemble.feature_names))
    write_csv(os.path.join(args.out, "runtime.csv"), RUNTIME_FIELDS,
              runtime_rows(runtime))
    write_csv(os.path.join(args.out, "sparsity.csv"), SPARSITY_FIELDS,
              sparsity_rows_)

    incomplete = sorted(
        sid for sid, r in computed.items() if not r["all_record"]["complete"])
    manifest = {
        "tool": "gbexplain",
        "version": __version__,
        "kernel": IMPLEMENTATION,
        "command": "evaluate",
        "model": args.model,
        "data": args.data,
        "label_col": args.label_col,
        "class_col": args.class_col,
        "select": args.select,
        "per_class": args.per_class,
        "seed": args.seed,
        "timeout_secs": args.timeout_secs,
        "cap": args.cap,
        "domains": args.domains,
        "occurrence_threshold": args.occurrence_threshold,
        "near_zero_eps": args.near_zero_eps,
        "topk": args.topk,
        "attribution_scale": "margin",
        "occurrence_weighting": "per-sample fraction, unweighted mean over samples",
        "fallback_classes": dict(sorted(alerts.fallback_classes.items())),
        "incomplete_enumerations": incomplete,
        "warnings": sparsity_warnings + occ_warnings,
    }
    write_json(os.path.join(args.out, "manifest.json"), manifest)


# -- argument parsing ------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gbexplain",
        description="Explain tree-ensemble intrusion alerts: provably minimal "
                    "feature sets and exact Shapley attributions.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, need_labels):
        p.add_argument("--model", required=True, help="canonical model JSON")
        p.add_argument("--data", required=True, help="input CSV (header row)")
        if need_labels:
            p.add_argument("--label-col", default="label")
            p.add_argument("--class-col", default="attack_class")
            p.add_argument("--per-class", type=int, default=11)
            p.add_argument("--seed", type=int, default=0)
            p.add_argument("--timeout-secs", type=float, default=3600.0)
            p.add_argument("--cap", type=int, default=10_000)
            p.add_argument("--domains", default=None,
                           help="JSON array of {feature, lo, hi}")
            p.add_argument("--select", choices=["tp", "fp"], default="tp")
            p.add_argument("--threads", type=int,
                           default=os.cpu_count() or 1)
            p.add_argument("--clock", choices=["wall", "null"], default="wall",
                           help="null records zero durations (reproducible bundles)")

    p_predict = sub.add_parser("predict", help="margin/probability/class per row")
    common(p_predict, need_labels=False)
    p_predict.add_argument("--out", default=None, help="JSONL output (default stdout)")
    p_predict.set_defaults(func=cmd_predict)

    p_explain = sub.add_parser("explain", help="explain selected alerts")
    common(p_explain, need_labels=True)
    p_explain.add_argument("--mode", required=True,
                           choices=["shap", "one-minimal", "all-minimal"])
    p_explain.add_argument("--out", required=True, help="output directory")
    p_explain.set_defaults(func=cmd_explain)

    p_eval = sub.add_parser("evaluate", help="run both methods and emit reports")
    common(p_eval, need_labels=True)
    p_eval.add_argument("--occurrence-threshold", type=float, default=80.0)
    p_eval.add_argument("--near-zero-eps", type=float, default=0.01)
    p_eval.add_argument("--topk", type=int, default=5)
    p_eval.add_argument("--out", required=True, help="output directory")
    p_eval.set_defaults(func=cmd_evaluate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except EmptySelectionError as exc:
        print("gbexplain: %s" % exc, file=sys.stderr)
        return EXIT_EMPTY_SELECTION
    except (ModelFormatError, SchemaError, FileNotFoundError) as exc:
        print("gbexplain: %s" % exc, file=sys.stderr)
        return EXIT_INPUT
    except GBExplainError as exc:
        print("gbexplain: internal error: %s" % exc, file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
