# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernel backend.

Same contract as ``pure.py``; every operation must produce bit-identical
results so the two backends are interchangeable.  All state is per call,
so one Kernel may serve any number of threads concurrently.
"""

from libc.math cimport INFINITY, nextafter
from libc.stdlib cimport free, malloc

import numpy as np

INVARIANT = 0
COUNTEREXAMPLE = 1
UNKNOWN = 2

cdef int _INVARIANT = 0
cdef int _COUNTEREXAMPLE = 1
cdef int _UNKNOWN = 2

cdef enum:
    MAX_TREE_DEPTH = 120


cdef struct PathEntry:
    int d
    double z
    double o
    double w


cdef struct DecideCtx:
    double* lo
    double* hi
    double* tmin
    double* tmax
    double smin
    double smax
    bint target_malicious
    long budget
    long splits
    double* witness


cdef class Kernel:
    """Hot-loop operations over a FlatEnsemble."""

    cdef public object flat
    cdef int n_features, n_trees, n_nodes, max_depth
    cdef double base
    cdef int[::1] feature, left, right, roots
    cdef double[::1] threshold, value, cover
    cdef double[::1] thr_vals
    cdef int[::1] thr_off
    cdef int[::1] ftree_vals
    cdef int[::1] ftree_off

    @property
    def implementation(self):
        return "compiled"

    def __init__(self, flat):
        self.flat = flat
        self.n_features = flat.n_features
        self.n_trees = flat.n_trees
        self.base = flat.base_margin
        self.max_depth = flat.max_depth
        if self.max_depth > MAX_TREE_DEPTH:
            raise ValueError("tree depth %d exceeds compiled kernel limit %d"
                             % (self.max_depth, MAX_TREE_DEPTH))
        self.feature = np.ascontiguousarray(flat.feature, dtype=np.int32)
        self.threshold = np.ascontiguousarray(flat.threshold, dtype=np.float64)
        self.left = np.ascontiguousarray(flat.left, dtype=np.int32)
        self.right = np.ascontiguousarray(flat.right, dtype=np.int32)
        self.value = np.ascontiguousarray(flat.value, dtype=np.float64)
        self.cover = np.ascontiguousarray(flat.cover, dtype=np.float64)
        self.roots = np.ascontiguousarray(flat.roots, dtype=np.int32)
        self.n_nodes = self.feature.shape[0]
        self.thr_vals = np.ascontiguousarray(flat.thr_vals, dtype=np.float64)
        self.thr_off = np.ascontiguousarray(flat.thr_off, dtype=np.int32)
        self.ftree_vals = np.ascontiguousarray(flat.ftree_vals, dtype=np.int32)
        self.ftree_off = np.ascontiguousarray(flat.ftree_off, dtype=np.int32)

    # -- inference -----------------------------------------------------------

    cdef double _margin_one(self, const double* x) nogil:
        cdef double total = self.base
        cdef int ti, i, f
        for ti in range(self.n_trees):
            i = self.roots[ti]
            f = self.feature[i]
            while f >= 0:
                if x[f] < self.threshold[i]:
                    i = self.left[i]
                else:
                    i = self.right[i]
                f = self.feature[i]
            total += self.value[i]
        return total

    def margin_one(self, x):
        cdef const double[::1] xv = np.ascontiguousarray(x, dtype=np.float64)
        return self._margin_one(&xv[0])

    def margins(self, X):
        X = np.ascontiguousarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise ValueError("expected a (n, %d) array" % self.n_features)
        cdef const double[:, ::1] Xv = X
        out = np.empty(X.shape[0], dtype=np.float64)
        cdef double[::1] ov = out
        cdef Py_ssize_t r, n = Xv.shape[0]
        with nogil:
            for r in range(n):
                ov[r] = self._margin_one(&Xv[r, 0])
        return out

    # -- interval abstraction --------------------------------------------------

    cdef void _reach(self, int root, const double* lo, const double* hi,
                     double* out_mn, double* out_mx) nogil:
        cdef double mn = INFINITY
        cdef double mx = -INFINITY
        cdef int stack[MAX_TREE_DEPTH + 4]
        cdef int sp = 1
        cdef int i, f
        cdef double t, v
        stack[0] = root
        while sp > 0:
            sp -= 1
            i = stack[sp]
            f = self.feature[i]
            if f < 0:
                v = self.value[i]
                if v < mn:
                    mn = v
                if v > mx:
                    mx = v
            else:
                t = self.threshold[i]
                if hi[f] < t:
                    stack[sp] = self.left[i]
                    sp += 1
                elif lo[f] >= t:
                    stack[sp] = self.right[i]
                    sp += 1
                else:
                    stack[sp] = self.left[i]
                    sp += 1
                    stack[sp] = self.right[i]
                    sp += 1
        out_mn[0] = mn
        out_mx[0] = mx

    def reach_interval(self, tree_index, lo, hi):
        cdef const double[::1] lov = np.ascontiguousarray(lo, dtype=np.float64)
        cdef const double[::1] hiv = np.ascontiguousarray(hi, dtype=np.float64)
        cdef double mn, mx
        self._reach(self.roots[tree_index], &lov[0], &hiv[0], &mn, &mx)
        return mn, mx

    def margin_interval(self, lo, hi):
        cdef const double[::1] lov = np.ascontiguousarray(lo, dtype=np.float64)
        cdef const double[::1] hiv = np.ascontiguousarray(hi, dtype=np.float64)
        cdef double smin = self.base
        cdef double smax = self.base
        cdef double mn, mx
        cdef int t
        with nogil:
            for t in range(self.n_trees):
                self._reach(self.roots[t], &lov[0], &hiv[0], &mn, &mx)
                smin += mn
                smax += mx
        return smin, smax

    # -- invariance decision ---------------------------------------------------

    def decide(self, lo, hi, target_malicious, budget=-1):
        """Decide whether every point of the box predicts the target class.

        Returns (code, witness, splits): code is INVARIANT, COUNTEREXAMPLE
        (witness is a point of the box predicting the other class) or
        UNKNOWN (refinement budget exhausted).
        """
        lo_arr = np.array(lo, dtype=np.float64, copy=True)
        hi_arr = np.array(hi, dtype=np.float64, copy=True)
        tmin_arr = np.empty(self.n_trees, dtype=np.float64)
        tmax_arr = np.empty(self.n_trees, dtype=np.float64)
        wit_arr = np.empty(self.n_features, dtype=np.float64)
        cdef double[::1] lov = lo_arr
        cdef double[::1] hiv = hi_arr
        cdef double[::1] tminv = tmin_arr
        cdef double[::1] tmaxv = tmax_arr
        cdef double[::1] witv = wit_arr

        cdef DecideCtx ctx
        ctx.lo = &lov[0]
        ctx.hi = &hiv[0]
        ctx.tmin = &tminv[0]
        ctx.tmax = &tmaxv[0]
        ctx.smin = self.base
        ctx.smax = self.base
        ctx.target_malicious = bool(target_malicious)
        ctx.budget = budget
        ctx.splits = 0
        ctx.witness = &witv[0]

        cdef int t
        cdef double mn, mx
        cdef int code
        with nogil:
            for t in range(self.n_trees):
                self._reach(self.roots[t], ctx.lo, ctx.hi, &mn, &mx)
                ctx.tmin[t] = mn
                ctx.tmax[t] = mx
                ctx.smin += mn
                ctx.smax += mx
            code = self._decide_rec(&ctx)
        witness = wit_arr if code == _COUNTEREXAMPLE else None
        return code, witness, ctx.splits

    cdef void _box_point(self, DecideCtx* ctx) nogil:
        cdef int f
        cdef double a, b
        for f in range(self.n_features):
            a = ctx.lo[f]
            b = ctx.hi[f]
            if a > -INFINITY and b < INFINITY:
                ctx.witness[f] = 0.5 * a + 0.5 * b
            elif a > -INFINITY:
                ctx.witness[f] = a
            elif b < INFINITY:
                ctx.witness[f] = b
            else:
                ctx.witness[f] = 0.0

    cdef void _refresh(self, DecideCtx* ctx, int f) nogil:
        """Recompute reachable intervals of trees that split on feature f."""
        cdef int k, t
        cdef double mn, mx
        for k in range(self.ftree_off[f], self.ftree_off[f + 1]):
            t = self.ftree_vals[k]
            self._reach(self.roots[t], ctx.lo, ctx.hi, &mn, &mx)
            ctx.smin += mn - ctx.tmin[t]
            ctx.smax += mx - ctx.tmax[t]
            ctx.tmin[t] = mn
            ctx.tmax[t] = mx

    cdef int _decide_rec(self, DecideCtx* ctx) nogil:
        if ctx.target_malicious:
            if ctx.smin > 0.0:
                return _INVARIANT
            if ctx.smax <= 0.0:
                self._box_point(ctx)
                return _COUNTEREXAMPLE
        else:
            if ctx.smax <= 0.0:
                return _INVARIANT
            if ctx.smin > 0.0:
                self._box_point(ctx)
                return _COUNTEREXAMPLE

        # split where it can narrow the margin interval: take the tree with
        # the widest reachable value range and its first straddled reachable
        # node in pre-order (trees put informative splits near the root)
        cdef int widest = -1
        cdef double width = -INFINITY
        cdef double w
        cdef int t
        for t in range(self.n_trees):
            w = ctx.tmax[t] - ctx.tmin[t]
            if w > width:
                widest = t
                width = w
        cdef int best_f = -1
        cdef double thr = 0.0
        cdef int i = self.roots[widest]
        cdef int f
        while True:
            f = self.feature[i]
            if f < 0:
                break
            thr = self.threshold[i]
            if ctx.hi[f] < thr:
                i = self.left[i]
            elif ctx.lo[f] >= thr:
                i = self.right[i]
            else:
                best_f = f
                break
        if best_f < 0:
            # unreachable: a box with no straddled reachable split has an
            # exact point interval, so one of the branches above fired
            return _UNKNOWN

        if ctx.budget >= 0 and ctx.splits >= ctx.budget:
            return _UNKNOWN
        ctx.splits += 1

        cdef double old
        cdef int code

        old = ctx.hi[best_f]
        ctx.hi[best_f] = nextafter(thr, -INFINITY)
        self._refresh(ctx, best_f)
        code = self._decide_rec(ctx)
        ctx.hi[best_f] = old
        self._refresh(ctx, best_f)
        if code != _INVARIANT:
            return code

        old = ctx.lo[best_f]
        ctx.lo[best_f] = thr
        self._refresh(ctx, best_f)
        code = self._decide_rec(ctx)
        ctx.lo[best_f] = old
        self._refresh(ctx, best_f)
        return code

    # -- exact Shapley attribution (path-dependent) ----------------------------

    def shap(self, x):
        """Per-feature attributions on the margin scale for one sample."""
        cdef const double[::1] xv = np.ascontiguousarray(x, dtype=np.float64)
        phi = np.zeros(self.n_features, dtype=np.float64)
        cdef double[::1] phiv = phi
        cdef int levels = self.max_depth + 2
        cdef int bufsize = (levels + 1) * (levels + 2) // 2
        cdef PathEntry* path = <PathEntry*> malloc(bufsize * sizeof(PathEntry))
        if path == NULL:
            raise MemoryError()
        cdef int t
        try:
            with nogil:
                for t in range(self.n_trees):
                    self._shap_recurse(self.roots[t], &xv[0], &phiv[0],
                                       path, -1, 1.0, 1.0, -1)
        finally:
            free(path)
        return phi

    cdef void _shap_recurse(self, int j, const double* x, double* phi,
                            PathEntry* parent_path, int parent_last,
                            double pz, double po, int pd) nogil:
        # copy the parent's unique path, then extend with (pd, pz, po)
        cdef PathEntry* path = parent_path + parent_last + 1
        cdef int i
        for i in range(parent_last + 1):
            path[i] = parent_path[i]
        _extend(path, parent_last + 1, pz, po, pd)
        cdef int last = parent_last + 1  # index of the newest entry

        cdef int f = self.feature[j]
        cdef double v, w
        cdef int hot, cold, k
        cdef double iz, io, rj
        if f < 0:
            v = self.value[j]
            for i in range(1, last + 1):
                w = _unwound_sum(path, last, i)
                phi[path[i].d] += w * (path[i].o - path[i].z) * v
            return
        if x[f] < self.threshold[j]:
            hot = self.left[j]
            cold = self.right[j]
        else:
            hot = self.right[j]
            cold = self.left[j]
        iz = 1.0
        io = 1.0
        for k in range(1, last + 1):
            if path[k].d == f:
                iz = path[k].z
                io = path[k].o
                _unwind(path, last, k)
                last -= 1
                break
        rj = self.cover[j]
        self._shap_recurse(hot, x, phi, path, last,
                           self.cover[hot] / rj * iz, io, f)
        self._shap_recurse(cold, x, phi, path, last,
                           self.cover[cold] / rj * iz, 0.0, f)


cdef void _extend(PathEntry* m, int length, double pz, double po, int pd) nogil:
    """Append (pd, pz, po) to a path of ``length`` entries, updating weights."""
    cdef int i
    m[length].d = pd
    m[length].z = pz
    m[length].o = po
    m[length].w = 1.0 if length == 0 else 0.0
    for i in range(length - 1, -1, -1):
        m[i + 1].w += po * m[i].w * (i + 1) / (length + 1)
        m[i].w = pz * m[i].w * (length - i) / (length + 1)


cdef void _unwind(PathEntry* m, int last, int idx) nogil:
    """Remove entry ``idx`` from a path whose last index is ``last``."""
    cdef double z = m[idx].z
    cdef double o = m[idx].o
    cdef double n = m[last].w
    cdef double tmp
    cdef int j
    for j in range(last - 1, -1, -1):
        if o != 0.0:
            tmp = m[j].w
            m[j].w = n * (last + 1) / ((j + 1) * o)
            n = tmp - m[j].w * z * (last - j) / (last + 1)
        else:
            m[j].w = m[j].w * (last + 1) / (z * (last - j))
    for j in range(idx, last):
        m[j].d = m[j + 1].d
        m[j].z = m[j + 1].z
        m[j].o = m[j + 1].o


cdef double _unwound_sum(PathEntry* m, int last, int idx) nogil:
    """Total weight of the path with entry ``idx`` unwound, without mutating."""
    cdef double z = m[idx].z
    cdef double o = m[idx].o
    cdef double total = 0.0
    cdef double n, tmp
    cdef int j
    if o != 0.0:
        n = m[last].w
        for j in range(last - 1, -1, -1):
            tmp = n * (last + 1) / ((j + 1) * o)
            total += tmp
            n = m[j].w - tmp * z * (last - j) / (last + 1)
    else:
        for j in range(last - 1, -1, -1):
            total += m[j].w * (last + 1) / (z * (last - j))
    return total
