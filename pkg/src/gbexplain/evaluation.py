"""Alert selection, explanation-quality metrics, and report emission.

Implements the evaluation pipeline around the two explainers: stratified
TP/FP alert selection with fallback replacement, sparsity / stability /
divergence / runtime metrics, and the CSV/JSON report bundle.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .errors import ContractError, EmptySelectionError
from .model import BENIGN, MALICIOUS, Prediction

TP = "TP"
FP = "FP"


@dataclass(frozen=True)
class SelectedAlert:
    index: int           # row in the source dataset
    sample_id: str
    class_label: str
    selection_kind: str  # TP or FP


@dataclass
class AlertSet:
    entries: list[SelectedAlert]
    seed: int
    per_class_quota: int
    kind: str
    fallback_classes: dict[str, int]  # class -> entries drawn with replacement


def select_alerts(predictions: Sequence[Prediction],
                  binary_labels: Sequence[str],
                  class_labels: Sequence[str],
                  quota: int,
                  seed: int,
                  kind: str = TP,
                  sample_ids: Sequence[str] | None = None) -> AlertSet:
    """Stratified selection of predicted-malicious samples, ``quota`` per class.

    Draws without replacement from each class's eligible pool; a pool smaller
    than the quota is taken whole and topped up with replacement so every
    class contributes exactly ``quota`` entries.  Fully seed-deterministic.
    """
    if kind not in (TP, FP):
        raise ContractError("kind must be TP or FP")
    if quota < 1:
        raise ContractError("quota must be >= 1")
    if not (len(predictions) == len(binary_labels) == len(class_labels)):
        raise ContractError("predictions and labels must have equal length")
    wanted_label = MALICIOUS if kind == TP else BENIGN

    pools: dict[str, list[int]] = {}
    for i, pred in enumerate(predictions):
        if pred.klass == MALICIOUS and binary_labels[i] == wanted_label:
            pools.setdefault(class_labels[i], []).append(i)
    if not pools:
        if kind == TP:
            raise EmptySelectionError("no true-positive samples in any class")
        return AlertSet(entries=[], seed=seed, per_class_quota=quota,
                        kind=kind, fallback_classes={})

    def sid(i: int) -> str:
        return sample_ids[i] if sample_ids is not None else "s%06d" % i

    rng = np.random.default_rng(seed)
    entries: list[SelectedAlert] = []
    fallback: dict[str, int] = {}
    for cls in sorted(pools):
        pool = pools[cls]
        if len(pool) >= quota:
            picks = rng.choice(len(pool), size=quota, replace=False)
            chosen = sorted(pool[int(j)] for j in picks)
        else:
            extra = rng.choice(len(pool), size=quota - len(pool), replace=True)
            chosen = list(pool) + [pool[int(j)] for j in extra]
            fallback[cls] = quota - len(pool)
        entries.extend(
            SelectedAlert(index=i, sample_id=sid(i), class_label=cls,
                          selection_kind=kind)
            for i in chosen
        )
    return AlertSet(entries=entries, seed=seed, per_class_quota=quota,
                    kind=kind, fallback_classes=fallback)


# -- sparsity -----------------------------------------------------------------


def sparsity_report(sizes: Mapping[str, Mapping[str, Sequence[int]]]
                    ) -> tuple[list[dict], list[str]]:
    """Per (class, method) size extrema and mean; empty groups are dropped
    with a warning record instead of failing the whole report."""
    rows: list[dict] = []
    warnings: list[str] = []
    for cls in sorted(sizes):
        for method in sorted(sizes[cls]):
            group = list(sizes[cls][method])
            if not group:
                warnings.append("empty sparsity group: class=%s method=%s"
                                % (cls, method))
                continue
            rows.append({
                "class": cls,
                "method": method,
                "size_min": int(min(group)),
                "size_mean": float(np.mean(group)),
                "size_max": int(max(group)),
            })
    return rows, warnings


# -- stability ----------------------------------------------------------------


@dataclass
class ClassStability:
    shap_min: np.ndarray
    shap_mean: np.ndarray
    shap_max: np.ndarray
    top5: list[int]  # by mean attribution, ties broken by feature index


def shap_stability(phis_by_class: Mapping[str, Sequence[np.ndarray]]
                   ) -> dict[str, ClassStability]:
    out: dict[str, ClassStability] = {}
    for cls in sorted(phis_by_class):
        mat = np.vstack([np.asarray(p, dtype=np.float64)
                         for p in phis_by_class[cls]])
        means = mat.mean(axis=0)
        order = sorted(range(mat.shape[1]), key=lambda f: (-means[f], f))
        out[cls] = ClassStability(
            shap_min=mat.min(axis=0),
            shap_mean=means,
            shap_max=mat.max(axis=0),
            top5=order[:5],
        )
    return out


def occurrence_matrix(enums_by_class: Mapping[str, Sequence[Sequence[frozenset]]],
                      feature_count: int
                      ) -> tuple[dict[str, np.ndarray], list[str]]:
    """Per class, the mean over samples of each feature's fraction of that
    sample's minimal explanations, as a percentage in [0, 100].

    Per-sample fractions first, then an unweighted mean over samples, so an
    explanation-rich sample cannot dominate its class.  Samples contributing
    no explanation are excluded with a warning.
    """
    out: dict[str, np.ndarray] = {}
    warnings: list[str] = []
    for cls in sorted(enums_by_class):
        fractions = []
        for s, explanations in enumerate(enums_by_class[cls]):
            if not explanations:
                warnings.append(
                    "sample %d of class %s has no explanations; excluded" % (s, cls))
                continue
            frac = np.zeros(feature_count, dtype=np.float64)
            for features in explanations:
                for f in features:
                    frac[f] += 1.0
            frac /= len(explanations)
            fractions.append(frac)
        if fractions:
            out[cls] = np.mean(np.vstack(fractions), axis=0) * 100.0
    return out, warnings


# -- divergence -----------------------------------------------------------------


@dataclass
class DivergenceEntry:
    feature: int
    occurrence_pct: float
    mean_shap: float
    flagged: bool


@dataclass
class DivergenceReport:
    per_class: dict[str, list[DivergenceEntry]]
    containment_by_class: dict[str, float]
    shap_topk_containment: float  # mean of the per-class fractions


def divergence(occurrence: Mapping[str, np.ndarray],
               shap_means: Mapping[str, np.ndarray],
               occurrence_threshold: float = 80.0,
               near_zero_epsilon: float = 0.01,
               topk: int = 5) -> DivergenceReport:
    """High-occurrence logic features paired with their mean attribution;
    flags the divergent ones (near-zero attribution despite high occurrence)
    and measures how much of the attribution top-k the logic method covers."""
    per_class: dict[str, list[DivergenceEntry]] = {}
    containment: dict[str, float] = {}
    for cls in sorted(occurrence):
        if cls not in shap_means:
            raise ContractError("class %r missing from attribution means" % cls)
        occ = occurrence[cls]
        means = np.asarray(shap_means[cls], dtype=np.float64)
        if occ.shape != means.shape:
            raise ContractError("class %r matrices disagree on feature count" % cls)
        entries = [
            DivergenceEntry(
                feature=f,
                occurrence_pct=float(occ[f]),
                mean_shap=float(means[f]),
                flagged=bool(means[f] < near_zero_epsilon),
            )
            for f in sorted(range(occ.shape[0]),
                            key=lambda f: (-occ[f], f))
            if occ[f] > occurrence_threshold
        ]
        per_class[cls] = entries
        top = sorted(range(means.shape[0]), key=lambda f: (-means[f], f))[:topk]
        present = {f for f in range(occ.shape[0]) if occ[f] > 0.0}
        containment[cls] = len(present.intersection(top)) / topk
    overall = float(np.mean(list(containment.values()))) if containment else 0.0
    return DivergenceReport(per_class=per_class,
                            containment_by_class=containment,
                            shap_topk_containment=overall)


# -- runtime ---------------------------------------------------------------------


@dataclass
class RuntimeStats:
    mean: float
    median: float
    p25: float
    p75: float
    min: float
    max: float
    outliers: list[float]  # beyond 1.5 * IQR from the quartiles


def runtime_report(timings: Mapping[str, Sequence[float]]) -> dict[str, RuntimeStats]:
    out: dict[str, RuntimeStats] = {}
    for method in sorted(timings):
        vals = np.asarray(timings[method], dtype=np.float64)
        if vals.size == 0:
            raise ContractError("method %r has no timings" % method)
        p25, p75 = np.percentile(vals, [25.0, 75.0])
        iqr = p75 - p25
        lo_fence = p25 - 1.5 * iqr
        hi_fence = p75 + 1.5 * iqr
        outliers = sorted(float(v) for v in vals if v < lo_fence or v > hi_fence)
        out[method] = RuntimeStats(
            mean=float(vals.mean()),
            median=float(np.median(vals)),
            p25=float(p25),
            p75=float(p75),
            min=float(vals.min()),
            max=float(vals.max()),
            outliers=outliers,
        )
    return out


# -- report emission ---------------------------------------------------------------


def write_csv(path, fieldnames: Sequence[str], rows: Sequence[Mapping]) -> None:
    """RFC-4180 CSV: UTF-8, LF line endings, minimal quoting."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=fieldnames, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _cell(row[k]) for k in fieldnames})


def _cell(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return value


def stability_rows(stability: Mapping[str, ClassStability],
                   occurrence: Mapping[str, np.ndarray],
                   feature_names: Sequence[str]) -> list[dict]:
    rows = []
    for cls in sorted(stability):
        st = stability[cls]
        occ = occurrence.get(cls)
        for f, name in enumerate(feature_names):
            rows.append({
                "class": cls,
                "feature": name,
                "shap_min": float(st.shap_min[f]),
                "shap_mean": float(st.shap_mean[f]),
                "shap_max": float(st.shap_max[f]),
                "vote_occurrence_pct": float(occ[f]) if occ is not None else 0.0,
            })
    return rows


STABILITY_FIELDS = ["class", "feature", "shap_min", "shap_mean", "shap_max",
                    "vote_occurrence_pct"]


def divergence_rows(report: DivergenceReport,
                    feature_names: Sequence[str]) -> list[dict]:
    rows = []
    for cls in sorted(report.per_class):
        for e in report.per_class[cls]:
            rows.append({
                "class": cls,
                "feature": feature_names[e.feature],
                "occurrence_pct": e.occurrence_pct,
                "mean_shap": e.mean_shap,
                "flagged": e.flagged,
                "class_topk_containment": report.containment_by_class[cls],
            })
    return rows


DIVERGENCE_FIELDS = ["class", "feature", "occurrence_pct", "mean_shap",
                     "flagged", "class_topk_containment"]


def runtime_rows(stats: Mapping[str, RuntimeStats]) -> list[dict]:
    return [
        {
            "method": method,
            "mean_us": s.mean,
            "median_us": s.median,
            "p25_us": s.p25,
            "p75_us": s.p75,
            "min_us": s.min,
            "max_us": s.max,
            "outliers_us": ";".join(repr(v) for v in s.outliers),
        }
        for method, s in sorted(stats.items())
    ]


RUNTIME_FIELDS = ["method", "mean_us", "median_us", "p25_us", "p75_us",
                  "min_us", "max_us", "outliers_us"]

SPARSITY_FIELDS = ["class", "method", "size_min", "size_mean", "size_max"]


def alerts_payload(alerts: AlertSet) -> dict:
    return {
        "kind": alerts.kind,
        "seed": alerts.seed,
        "per_class_quota": alerts.per_class_quota,
        "fallback_classes": dict(sorted(alerts.fallback_classes.items())),
        "entries": [
            {
                "index": e.index,
                "sample_id": e.sample_id,
                "class_label": e.class_label,
                "selection_kind": e.selection_kind,
            }
            for e in alerts.entries
        ],
    }


def write_json(path, payload) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=False)
        fh.write("\n")
