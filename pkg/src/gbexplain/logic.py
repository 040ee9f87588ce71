"""Minimal logic-based explanations.

Validity of a feature subset is a monotone predicate (fixing more features
never breaks invariance), so one minimal explanation falls out of a linear
deletion filter, and all minimal explanations are enumerated by seed-shrink-
block search over a blocking map of explored subsets.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from . import kernels
from .errors import ContractError
from .model import MALICIOUS, TreeEnsemble, as_features, predict
from .oracle import (
    INVARIANT,
    UNKNOWN,
    FeatureDomainSpec,
    box_fixing,
    decide_invariance,
    kernel_for,
)

DEFAULT_CAP = 10_000


@dataclass
class CostVector:
    """Per-feature positive costs; the deletion filter frees cheap features first."""

    costs: np.ndarray

    def __post_init__(self):
        self.costs = np.asarray(self.costs, dtype=np.float64)
        if self.costs.ndim != 1 or np.any(self.costs <= 0) \
                or not np.all(np.isfinite(self.costs)):
            raise ContractError("costs must be strictly positive finite reals")

    @classmethod
    def ones(cls, feature_count: int) -> "CostVector":
        return cls(np.ones(feature_count))

    def deletion_order(self) -> list[int]:
        """Ascending cost, feature index breaking ties."""
        n = self.costs.shape[0]
        return sorted(range(n), key=lambda f: (self.costs[f], f))


@dataclass(frozen=True)
class Explanation:
    """Feature-value pairs whose fixation forces the target class."""

    pairs: tuple[tuple[int, float], ...]
    target: str
    validity: str = "proved"
    minimality: str = "proved"  # "unknown" when a budgeted oracle call bailed

    @property
    def features(self) -> frozenset:
        return frozenset(f for f, _ in self.pairs)

    def __len__(self) -> int:
        return len(self.pairs)


@dataclass
class EnumerationResult:
    explanations: list[Explanation]
    complete: bool
    elapsed_us: int
    oracle_calls: int


@dataclass
class _OracleStats:
    calls: int = 0
    unknowns: int = 0


class _TimeoutSignal(Exception):
    pass


def _resolve_domains(ensemble: TreeEnsemble,
                     domains: FeatureDomainSpec | None) -> FeatureDomainSpec:
    return domains if domains is not None \
        else FeatureDomainSpec.unbounded(ensemble.feature_count)


def _check_subset(subset: Iterable[int], feature_count: int) -> frozenset:
    s = frozenset(int(f) for f in subset)
    if any(f < 0 or f >= feature_count for f in s):
        raise ContractError("subset contains out-of-range feature indices")
    return s


def _subset_invariant(kernel, x: np.ndarray, subset, domains: FeatureDomainSpec,
                      target_malicious: bool, budget: int | None,
                      stats: _OracleStats) -> bool:
    """Hot path shared by the filter and the enumerator: one oracle call on
    the box fixing ``subset``, no per-call revalidation."""
    lo = domains.lo.copy()
    hi = domains.hi.copy()
    idx = sorted(subset)
    lo[idx] = x[idx]
    hi[idx] = x[idx]
    code, _, _ = kernel.decide(lo, hi, target_malicious,
                               -1 if budget is None else int(budget))
    stats.calls += 1
    if code == kernels.UNKNOWN:
        stats.unknowns += 1
    return code == kernels.INVARIANT


def is_valid(ensemble: TreeEnsemble, x, subset: Iterable[int],
             domains: FeatureDomainSpec | None = None,
             budget: int | None = None,
             stats: _OracleStats | None = None) -> bool:
    """True iff fixing ``subset`` to x's values forces x's predicted class."""
    x = as_features(x, ensemble.feature_count)
    subset = _check_subset(subset, ensemble.feature_count)
    domains = _resolve_domains(ensemble, domains)
    target = predict(ensemble, x).klass
    verdict = decide_invariance(
        ensemble, box_fixing(x, subset, domains), target, budget=budget
    )
    if stats is not None:
        stats.calls += 1
        if verdict.kind == UNKNOWN:
            stats.unknowns += 1
    return verdict.kind == INVARIANT


def is_minimal(ensemble: TreeEnsemble, x, subset: Iterable[int],
               domains: FeatureDomainSpec | None = None) -> bool:
    """True iff the (valid) subset stops being valid when any element is removed."""
    subset = _check_subset(subset, ensemble.feature_count)
    if not is_valid(ensemble, x, subset, domains):
        raise ContractError("is_minimal requires a valid subset")
    return all(
        not is_valid(ensemble, x, subset - {f}, domains) for f in sorted(subset)
    )


def _pairs_for(x: np.ndarray, features: Iterable[int],
               target: str, minimality: str) -> Explanation:
    pairs = tuple((f, float(x[f])) for f in sorted(features))
    return Explanation(pairs=pairs, target=target, minimality=minimality)


def one_minimal(ensemble: TreeEnsemble, x,
                domains: FeatureDomainSpec | None = None,
                order: Sequence[int] | None = None,
                costs: CostVector | None = None,
                budget: int | None = None,
                stats: _OracleStats | None = None) -> Explanation:
    """One minimal explanation via the deletion filter.

    Starts from all features fixed and frees them one at a time in ``order``
    (default: ascending cost, then feature index), keeping a feature only
    when freeing it breaks validity.  Monotonicity of validity makes the
    result minimal, not just locally irreducible.
    """
    x = as_features(x, ensemble.feature_count)
    domains = _resolve_domains(ensemble, domains)
    target = predict(ensemble, x).klass
    if order is None:
        order = (costs or CostVector.ones(ensemble.feature_count)).deletion_order()
    else:
        order = [int(f) for f in order]
        if sorted(order) != list(range(ensemble.feature_count)):
            raise ContractError("order must be a permutation of all feature indices")
    stats = stats if stats is not None else _OracleStats()
    kernel = kernel_for(ensemble)
    target_malicious = target == MALICIOUS

    # all features fixed; free one at a time, restoring on failure
    lo = x.copy()
    hi = x.copy()
    kept = set(range(ensemble.feature_count))
    for f in order:
        lo[f] = domains.lo[f]
        hi[f] = domains.hi[f]
        code, _, _ = kernel.decide(lo, hi, target_malicious,
                                   -1 if budget is None else int(budget))
        stats.calls += 1
        if code == kernels.UNKNOWN:
            stats.unknowns += 1
        if code == kernels.INVARIANT:
            kept.discard(f)
        else:
            lo[f] = x[f]
            hi[f] = x[f]
    minimality = "proved" if stats.unknowns == 0 else "unknown"
    return _pairs_for(x, kept, target, minimality)


def shap_magnitude_last_order(phi) -> list[int]:
    """Deletion order that frees small-|attribution| features first, so the
    features the statistical method leans on are retained preferentially."""
    phi = np.asarray(phi, dtype=np.float64)
    return sorted(range(phi.shape[0]), key=lambda f: (abs(phi[f]), f))


class _BlockingMap:
    """Explored-subset bookkeeping for seed-shrink-block enumeration.

    Seeds must not contain any recorded minimal valid set (blocked up) and
    must not be contained in any recorded maximal invalid set (blocked
    down).  ``next_seed`` returns a map-maximal unexplored subset.
    """

    def __init__(self, n: int, deadline=None):
        self.n = n
        self.up: list[frozenset] = []
        self.down: list[frozenset] = []
        self.unsat = False
        self.deadline = deadline  # callable raising on expiry, or None

    def block_up(self, minimal_valid: frozenset) -> None:
        if not minimal_valid:
            self.unsat = True
        self.up.append(minimal_valid)

    def block_down(self, maximal_invalid: frozenset) -> None:
        if len(maximal_invalid) == self.n:
            self.unsat = True
        self.down.append(maximal_invalid)

    def next_seed(self) -> frozenset | None:
        if self.unsat:
            return None
        n = self.n
        assign = [-1] * n  # -1 undecided, 1 in, 0 out
        up = [set(m) for m in self.up]
        down_lits = [set(range(n)) - c for c in self.down]

        # only features appearing in some clause need search; the rest are
        # always included (they cannot complete an up block and adding them
        # only helps down clauses)
        clause_vars = set().union(*up, *down_lits) if (up or down_lits) else set()
        freq: dict[int, int] = {f: 0 for f in clause_vars}
        for m in up:
            for f in m:
                freq[f] += 1
        # most-constrained-first fails early; index breaks ties for determinism
        constrained = sorted(clause_vars, key=lambda f: (-freq[f], f))
        free = [f for f in range(n) if f not in clause_vars]

        up_in = [0] * len(up)      # members currently assigned 1
        up_out = [0] * len(up)     # members currently assigned 0
        dn_sat = [0] * len(down_lits)   # literals assigned 1
        dn_out = [0] * len(down_lits)   # literals assigned 0

        by_up = [[] for _ in range(n)]
        for j, m in enumerate(up):
            for f in m:
                by_up[f].append(j)
        by_dn = [[] for _ in range(n)]
        for j, lits in enumerate(down_lits):
            for f in lits:
                by_dn[f].append(j)

        def set_value(f: int, v: int) -> bool:
            assign[f] = v
            ok = True
            if v == 1:
                for j in by_up[f]:
                    up_in[j] += 1
                    if up_in[j] == len(up[j]) and up_out[j] == 0:
                        ok = False
                for j in by_dn[f]:
                    dn_sat[j] += 1
            else:
                for j in by_up[f]:
                    up_out[j] += 1
                for j in by_dn[f]:
                    dn_out[j] += 1
                    if dn_out[j] == len(down_lits[j]) and dn_sat[j] == 0:
                        ok = False
            return ok

        def unset_value(f: int, v: int) -> None:
            assign[f] = -1
            if v == 1:
                for j in by_up[f]:
                    up_in[j] -= 1
                for j in by_dn[f]:
                    dn_sat[j] -= 1
            else:
                for j in by_up[f]:
                    up_out[j] -= 1
                for j in by_dn[f]:
                    dn_out[j] -= 1

        nodes = 0

        def search(pos: int) -> bool:
            nonlocal nodes
            nodes += 1
            if self.deadline is not None and nodes % 4096 == 0:
                self.deadline()
            if pos == len(constrained):
                return True
            f = constrained[pos]
            for v in (1, 0):
                if set_value(f, v):
                    if search(pos + 1):
                        return True
                unset_value(f, v)
            return False

        # a down block covering every feature is unsatisfiable from the start
        if any(not lits for lits in down_lits):
            return None
        if not search(0):
            return None
        for f in free:
            assign[f] = 1

        # grow to a map-maximal seed: add any feature whose inclusion does
        # not complete a blocked-up set (down clauses cannot break by adding)
        for f in constrained:
            if assign[f] != 0:
                continue
            if any(up_in[j] + 1 == len(up[j]) for j in by_up[f]):
                continue
            unset_value(f, 0)
            set_value(f, 1)
        return frozenset(f for f in range(n) if assign[f] == 1)


def all_minimal(ensemble: TreeEnsemble, x,
                domains: FeatureDomainSpec | None = None,
                timeout: float = 3600.0,
                cap: int = DEFAULT_CAP,
                costs: CostVector | None = None,
                budget: int | None = None,
                clock: Callable[[], int] = time.monotonic_ns) -> EnumerationResult:
    """Enumerate all minimal explanations, newest-first seeds, under a timeout.

    Each seed from the blocking map is map-maximal and unexplored.  A valid
    seed shrinks (deletion filter) to a minimal explanation whose supersets
    get blocked; an invalid map-maximal seed is itself a maximal invalid set
    (any proper superset contains a recorded minimal explanation and is
    therefore valid), so its subsets get blocked.  The map empties exactly
    when the whole power set is explored.
    """
    if timeout <= 0:
        raise ContractError("timeout must be positive")
    x = as_features(x, ensemble.feature_count)
    domains = _resolve_domains(ensemble, domains)
    target = predict(ensemble, x).klass
    n = ensemble.feature_count
    cost_order = (costs or CostVector.ones(n)).deletion_order()
    rank = {f: i for i, f in enumerate(cost_order)}

    stats = _OracleStats()
    start = clock()
    deadline_ns = int(timeout * 1e9)

    kernel = kernel_for(ensemble)
    target_malicious = target == MALICIOUS

    def check_clock() -> None:
        if clock() - start > deadline_ns:
            raise _TimeoutSignal()

    def valid(subset: frozenset) -> bool:
        check_clock()
        return _subset_invariant(kernel, x, subset, domains, target_malicious,
                                 budget, stats)

    def shrink(seed: frozenset) -> frozenset:
        current = set(seed)
        for f in sorted(seed, key=lambda f: rank[f]):
            trial = current - {f}
            if valid(frozenset(trial)):
                current = trial
        return frozenset(current)

    blocking = _BlockingMap(n, deadline=check_clock)
    found: list[frozenset] = []
    complete = True
    try:
        while True:
            check_clock()
            seed = blocking.next_seed()
            if seed is None:
                break
            if valid(seed):
                if len(found) >= cap:
                    complete = False
                    break
                minimal = shrink(seed)
                found.append(minimal)
                blocking.block_up(minimal)
            else:
                blocking.block_down(seed)
    except _TimeoutSignal:
        complete = False

    if stats.unknowns:
        # budgeted UNKNOWNs may hide valid subsets: shrinks can stop early
        # and down blocks can swallow real explanations
        complete = False
        found = [m for m in found if not any(o < m for o in found)]
    found.sort(key=lambda m: (len(m), tuple(sorted(m))))
    minimality = "proved" if stats.unknowns == 0 else "unknown"
    explanations = [_pairs_for(x, m, target, minimality) for m in found]
    elapsed_us = (clock() - start) // 1000
    return EnumerationResult(explanations=explanations, complete=complete,
                             elapsed_us=int(elapsed_us), oracle_calls=stats.calls)
