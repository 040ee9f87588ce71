"""Pure-Python kernel backend.

Mirrors the compiled extension in ``_core.pyx`` operation for operation;
results (including counterexample witnesses) must be identical bit for bit.
Used automatically when the extension is not built.
"""

from __future__ import annotations

import math

import numpy as np

INVARIANT = 0
COUNTEREXAMPLE = 1
UNKNOWN = 2

_INF = math.inf


class Kernel:
    """Hot-loop operations over a FlatEnsemble."""

    implementation = "pure"

    def __init__(self, flat):
        self.flat = flat
        self._feature = flat.feature
        self._threshold = flat.threshold
        self._left = flat.left
        self._right = flat.right
        self._value = flat.value
        self._cover = flat.cover
        self._roots = flat.roots
        self._base = flat.base_margin
        self._n_features = flat.n_features
        self._n_trees = flat.n_trees
        self._thr = [
            flat.thr_vals[flat.thr_off[f]:flat.thr_off[f + 1]].tolist()
            for f in range(flat.n_features)
        ]
        self._ftrees = [
            flat.ftree_vals[flat.ftree_off[f]:flat.ftree_off[f + 1]].tolist()
            for f in range(flat.n_features)
        ]

    # -- inference ---------------------------------------------------------

    def margin_one(self, x) -> float:
        feature, threshold = self._feature, self._threshold
        left, right, value = self._left, self._right, self._value
        total = self._base
        for root in self._roots:
            i = root
            f = feature[i]
            while f >= 0:
                i = left[i] if x[f] < threshold[i] else right[i]
                f = feature[i]
            total += value[i]
        return total

    def margins(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        out = np.empty(X.shape[0], dtype=np.float64)
        for r in range(X.shape[0]):
            out[r] = self.margin_one(X[r])
        return out

    # -- interval abstraction ----------------------------------------------

    def _reach(self, root: int, lo, hi) -> tuple[float, float]:
        feature, threshold = self._feature, self._threshold
        left, right, value = self._left, self._right, self._value
        mn, mx = _INF, -_INF
        stack = [root]
        while stack:
            i = stack.pop()
            f = feature[i]
            if f < 0:
                v = value[i]
                if v < mn:
                    mn = v
                if v > mx:
                    mx = v
            else:
                t = threshold[i]
                if hi[f] < t:
                    stack.append(left[i])
                elif lo[f] >= t:
                    stack.append(right[i])
                else:
                    stack.append(left[i])
                    stack.append(right[i])
        return mn, mx

    def reach_interval(self, tree_index: int, lo, hi) -> tuple[float, float]:
        return self._reach(int(self._roots[tree_index]), lo, hi)

    def margin_interval(self, lo, hi) -> tuple[float, float]:
        smin = smax = self._base
        for root in self._roots:
            mn, mx = self._reach(int(root), lo, hi)
            smin += mn
            smax += mx
        return smin, smax

    # -- invariance decision -----------------------------------------------

    def decide(self, lo, hi, target_malicious: bool, budget: int = -1):
        """Decide whether every point of the box predicts the target class.

        Returns (code, witness, splits): code is INVARIANT, COUNTEREXAMPLE
        (witness is a point of the box predicting the other class) or
        UNKNOWN (refinement budget exhausted).
        """
        lo = np.array(lo, dtype=np.float64, copy=True)
        hi = np.array(hi, dtype=np.float64, copy=True)
        n_trees = self._n_trees
        tmin = np.empty(n_trees, dtype=np.float64)
        tmax = np.empty(n_trees, dtype=np.float64)
        for t in range(n_trees):
            tmin[t], tmax[t] = self._reach(int(self._roots[t]), lo, hi)
        state = _DecideState(self, lo, hi, tmin, tmax, bool(target_malicious),
                             budget if budget >= 0 else -1)
        code = state.run()
        witness = state.witness if code == COUNTEREXAMPLE else None
        return code, witness, state.splits

    # -- exact Shapley attribution (path-dependent) --------------------------

    def shap(self, x) -> np.ndarray:
        """Per-feature attributions on the margin scale for one sample."""
        x = np.asarray(x, dtype=np.float64)
        phi = np.zeros(self._n_features, dtype=np.float64)
        for root in self._roots:
            _shap_recurse(self, int(root), x, phi, [], 1.0, 1.0, -1)
        return phi


class _DecideState:
    def __init__(self, kernel: Kernel, lo, hi, tmin, tmax, target_malicious, budget):
        self.k = kernel
        self.lo = lo
        self.hi = hi
        self.tmin = tmin
        self.tmax = tmax
        self.smin = kernel._base + float(tmin.sum())
        self.smax = kernel._base + float(tmax.sum())
        self.target_malicious = target_malicious
        self.budget = budget
        self.splits = 0
        self.witness = None

    def run(self) -> int:
        lo, hi = self.lo, self.hi
        if self.target_malicious:
            if self.smin > 0.0:
                return INVARIANT
            if self.smax <= 0.0:
                self.witness = _box_point(lo, hi)
                return COUNTEREXAMPLE
        else:
            if self.smax <= 0.0:
                return INVARIANT
            if self.smin > 0.0:
                self.witness = _box_point(lo, hi)
                return COUNTEREXAMPLE

        # split where it can narrow the margin interval: take the tree with
        # the widest reachable value range and its first straddled reachable
        # node in pre-order (trees put informative splits near the root)
        widest, width = -1, -_INF
        for t in range(self.k._n_trees):
            w = self.tmax[t] - self.tmin[t]
            if w > width:
                widest, width = t, w
        best_f, thr = self._first_straddled(int(self.k._roots[widest]))
        if best_f < 0:
            # a box with no straddled reachable split has an exact point
            # interval, so one of the branches above must have fired
            raise AssertionError("unrefinable undecided box")

        if self.budget >= 0 and self.splits >= self.budget:
            return UNKNOWN
        self.splits += 1

        lo, hi = self.lo, self.hi

        old = hi[best_f]
        hi[best_f] = math.nextafter(thr, -_INF)
        saved = self._recompute(best_f)
        code = self.run()
        hi[best_f] = old
        self._restore(best_f, saved)
        if code != INVARIANT:
            return code

        old = lo[best_f]
        lo[best_f] = thr
        saved = self._recompute(best_f)
        code = self.run()
        lo[best_f] = old
        self._restore(best_f, saved)
        return code

    def _first_straddled(self, root: int) -> tuple[int, float]:
        """First straddled split on the box's forced path from the root."""
        k = self.k
        feature, threshold = k._feature, k._threshold
        left, right = k._left, k._right
        lo, hi = self.lo, self.hi
        i = root
        while True:
            f = feature[i]
            if f < 0:
                return -1, 0.0
            t = threshold[i]
            if hi[f] < t:
                i = left[i]
            elif lo[f] >= t:
                i = right[i]
            else:
                return int(f), float(t)

    def _recompute(self, f: int):
        """Refresh intervals of trees splitting on ``f``; return undo info."""
        saved = []
        for t in self.k._ftrees[f]:
            old_mn, old_mx = self.tmin[t], self.tmax[t]
            mn, mx = self.k._reach(int(self.k._roots[t]), self.lo, self.hi)
            self.smin += mn - old_mn
            self.smax += mx - old_mx
            self.tmin[t], self.tmax[t] = mn, mx
            saved.append((t, old_mn, old_mx))
        return saved

    def _restore(self, f: int, saved):
        for t, old_mn, old_mx in saved:
            self.smin += old_mn - self.tmin[t]
            self.smax += old_mx - self.tmax[t]
            self.tmin[t] = old_mn
            self.tmax[t] = old_mx


def _box_point(lo, hi) -> np.ndarray:
    """Deterministic representative point of a box."""
    out = np.empty(lo.shape[0], dtype=np.float64)
    for f in range(lo.shape[0]):
        a, b = lo[f], hi[f]
        fa, fb = math.isfinite(a), math.isfinite(b)
        if fa and fb:
            out[f] = 0.5 * a + 0.5 * b
        elif fa:
            out[f] = a
        elif fb:
            out[f] = b
        else:
            out[f] = 0.0
    return out


# -- Shapley path algebra helpers ---------------------------------------------


def _extend(m, pz, po, pd):
    length = len(m)
    out = [e.copy() for e in m]
    out.append([pd, pz, po, 1.0 if length == 0 else 0.0])
    for i in range(length - 1, -1, -1):
        out[i + 1][3] += po * out[i][3] * (i + 1) / (length + 1)
        out[i][3] = pz * out[i][3] * (length - i) / (length + 1)
    return out


def _unwind(m, idx):
    out = [e.copy() for e in m]
    last = len(out) - 1
    z, o = out[idx][1], out[idx][2]
    n = out[last][3]
    for j in range(last - 1, -1, -1):
        if o != 0.0:
            tmp = out[j][3]
            out[j][3] = n * (last + 1) / ((j + 1) * o)
            n = tmp - out[j][3] * z * (last - j) / (last + 1)
        else:
            out[j][3] = out[j][3] * (last + 1) / (z * (last - j))
    for j in range(idx, last):
        out[j][0], out[j][1], out[j][2] = out[j + 1][0], out[j + 1][1], out[j + 1][2]
    out.pop()
    return out


def _unwound_sum(m, idx):
    last = len(m) - 1
    z, o = m[idx][1], m[idx][2]
    total = 0.0
    if o != 0.0:
        n = m[last][3]
        for j in range(last - 1, -1, -1):
            tmp = n * (last + 1) / ((j + 1) * o)
            total += tmp
            n = m[j][3] - tmp * z * (last - j) / (last + 1)
    else:
        for j in range(last - 1, -1, -1):
            total += m[j][3] * (last + 1) / (z * (last - j))
    return total


def _shap_recurse(k: Kernel, j: int, x, phi, m, pz, po, pd):
    m = _extend(m, pz, po, pd)
    f = k._feature[j]
    if f < 0:
        v = k._value[j]
        for i in range(1, len(m)):
            w = _unwound_sum(m, i)
            phi[m[i][0]] += w * (m[i][2] - m[i][1]) * v
        return
    t = k._threshold[j]
    if x[f] < t:
        hot, cold = k._left[j], k._right[j]
    else:
        hot, cold = k._right[j], k._left[j]
    iz = io = 1.0
    for i in range(1, len(m)):
        if m[i][0] == f:
            iz, io = m[i][1], m[i][2]
            m = _unwind(m, i)
            break
    rj = k._cover[j]
    _shap_recurse(k, int(hot), x, phi, m, k._cover[hot] / rj * iz, io, f)
    _shap_recurse(k, int(cold), x, phi, m, k._cover[cold] / rj * iz, 0.0, f)
