"""Exact class-invariance oracle over per-feature interval boxes.

A box fixes some features to a sample's values (degenerate intervals) and
leaves the rest free over their domain.  The oracle decides whether every
point of the box yields the target class, refining the box along ensemble
thresholds until the interval abstraction is exact.
"""

from __future__ import annotations

import json
import math
import weakref
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from . import kernels
from .errors import ContractError, DimensionError, ModelFormatError
from .flat import flatten
from .model import BENIGN, MALICIOUS, Leaf, TreeEnsemble, TreeNode

INVARIANT = "invariant"
COUNTEREXAMPLE = "counterexample"
UNKNOWN = "unknown"

_CODE_TO_KIND = {
    kernels.INVARIANT: INVARIANT,
    kernels.COUNTEREXAMPLE: COUNTEREXAMPLE,
    kernels.UNKNOWN: UNKNOWN,
}


@dataclass(frozen=True)
class Box:
    """Per-feature closed intervals [lo, hi]; a fixed feature has lo == hi."""

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lo, dtype=np.float64)
        hi = np.asarray(self.hi, dtype=np.float64)
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)
        if lo.shape != hi.shape or lo.ndim != 1:
            raise DimensionError("box bounds must be 1-d arrays of equal length")
        if np.any(np.isnan(lo)) or np.any(np.isnan(hi)) or np.any(lo > hi):
            raise DimensionError("box requires lo <= hi per feature (no NaN)")

    @property
    def feature_count(self) -> int:
        return self.lo.shape[0]

    def contains(self, x) -> bool:
        x = np.asarray(x, dtype=np.float64)
        return bool(np.all(self.lo <= x) and np.all(x <= self.hi))


class FeatureDomainSpec:
    """Global per-feature bounds used when a feature is freed.

    Defaults to (-inf, +inf) everywhere: explanations proved against it hold
    for any input.  A domain file (JSON array of {feature, lo, hi}) narrows
    individual features, e.g. to observed train min/max.
    """

    def __init__(self, feature_count: int, lo=None, hi=None):
        self.feature_count = feature_count
        self.lo = np.full(feature_count, -math.inf) if lo is None \
            else np.asarray(lo, dtype=np.float64)
        self.hi = np.full(feature_count, math.inf) if hi is None \
            else np.asarray(hi, dtype=np.float64)
        if self.lo.shape != (feature_count,) or self.hi.shape != (feature_count,):
            raise DimensionError("domain bounds must have one entry per feature")
        if np.any(np.isnan(self.lo)) or np.any(np.isnan(self.hi)) \
                or np.any(self.lo > self.hi):
            raise DimensionError("domain requires lo <= hi per feature")

    @classmethod
    def unbounded(cls, feature_count: int) -> "FeatureDomainSpec":
        return cls(feature_count)

    @classmethod
    def from_json(cls, text: bytes | str, feature_count: int,
                  feature_names: Iterable[str] = ()) -> "FeatureDomainSpec":
        if isinstance(text, bytes):
            text = text.decode("utf-8")
        try:
            entries = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ModelFormatError(
                "malformed domain JSON at byte offset %d: %s" % (exc.pos, exc.msg)
            ) from exc
        if not isinstance(entries, list):
            raise ModelFormatError("domain file must be a JSON array")
        name_to_index = {n: i for i, n in enumerate(feature_names)}
        spec = cls(feature_count)
        for entry in entries:
            if not isinstance(entry, dict) or "feature" not in entry:
                raise ModelFormatError("domain entries must be objects with 'feature'")
            feat = entry["feature"]
            if isinstance(feat, str):
                if feat not in name_to_index:
                    raise ModelFormatError("unknown feature name %r in domain file" % feat)
                feat = name_to_index[feat]
            if not isinstance(feat, int) or not 0 <= feat < feature_count:
                raise ModelFormatError("domain feature index %r out of range" % feat)
            lo = entry.get("lo")
            hi = entry.get("hi")
            spec.lo[feat] = -math.inf if lo is None else float(lo)
            spec.hi[feat] = math.inf if hi is None else float(hi)
            if spec.lo[feat] > spec.hi[feat]:
                raise ModelFormatError("domain for feature %d is empty" % feat)
        return spec


def box_fixing(x, fixed: Iterable[int], domains: FeatureDomainSpec) -> Box:
    """Box with ``fixed`` features pinned to x's values, the rest freed."""
    lo = np.array(domains.lo, copy=True)
    hi = np.array(domains.hi, copy=True)
    x = np.asarray(x, dtype=np.float64)
    idx = list(fixed)
    lo[idx] = x[idx]
    hi[idx] = x[idx]
    return Box(lo=lo, hi=hi)


@dataclass(frozen=True)
class OracleVerdict:
    kind: str  # INVARIANT, COUNTEREXAMPLE, or UNKNOWN
    witness: np.ndarray | None = None
    witness_margin: float | None = None
    splits: int = 0

    @property
    def is_invariant(self) -> bool:
        return self.kind == INVARIANT


_kernel_cache: dict[int, tuple] = {}


def _evict(key: int, ref) -> None:
    entry = _kernel_cache.get(key)
    if entry is not None and entry[0] is ref:
        del _kernel_cache[key]


def kernel_for(ensemble: TreeEnsemble) -> kernels.Kernel:
    """Per-ensemble kernel, cached for the ensemble's lifetime."""
    key = id(ensemble)
    entry = _kernel_cache.get(key)
    if entry is not None and entry[0]() is ensemble:
        return entry[1]
    kernel = kernels.Kernel(flatten(ensemble))
    ref = weakref.ref(ensemble, lambda r, key=key: _evict(key, r))
    _kernel_cache[key] = (ref, kernel)
    return kernel


def reachable_interval(tree: TreeNode, box: Box) -> tuple[float, float]:
    """[min, max] over leaves reachable from the root under the box."""
    lo, hi = box.lo, box.hi
    mn, mx = math.inf, -math.inf
    stack = [tree]
    while stack:
        node = stack.pop()
        if isinstance(node, Leaf):
            if node.value < mn:
                mn = node.value
            if node.value > mx:
                mx = node.value
        else:
            t = node.threshold
            f = node.feature
            if hi[f] < t:
                stack.append(node.left)
            elif lo[f] >= t:
                stack.append(node.right)
            else:
                stack.append(node.left)
                stack.append(node.right)
    return mn, mx


def margin_interval(ensemble: TreeEnsemble, box: Box) -> tuple[float, float]:
    """Sound over-approximation of the margin range over the box."""
    _check_box(ensemble, box)
    return kernel_for(ensemble).margin_interval(box.lo, box.hi)


def decide_invariance(ensemble: TreeEnsemble, box: Box, target: str,
                      budget: int | None = None) -> OracleVerdict:
    """Exact decision: does every point of the box predict ``target``?

    Refines the box along straddled ensemble thresholds until each cell's
    margin interval is one-sided.  With a finite ``budget`` (count of
    refinement splits) the verdict may be UNKNOWN, which callers must treat
    as "not invariant".
    """
    if target not in (BENIGN, MALICIOUS):
        raise ContractError("target must be %r or %r" % (BENIGN, MALICIOUS))
    _check_box(ensemble, box)
    kernel = kernel_for(ensemble)
    code, witness, splits = kernel.decide(
        box.lo, box.hi, target == MALICIOUS, -1 if budget is None else int(budget)
    )
    kind = _CODE_TO_KIND[code]
    if kind == COUNTEREXAMPLE:
        wmargin = float(kernel.margin_one(witness))
        return OracleVerdict(kind=kind, witness=witness,
                             witness_margin=wmargin, splits=splits)
    return OracleVerdict(kind=kind, splits=splits)


def _check_box(ensemble: TreeEnsemble, box: Box) -> None:
    if box.feature_count != ensemble.feature_count:
        raise DimensionError(
            "box has %d features, model expects %d"
            % (box.feature_count, ensemble.feature_count)
        )
