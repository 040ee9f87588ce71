#!/usr/bin/env python3
"""Compare the compiled and pure-Python kernel backends on the hot paths.

Usage:
    python3 benchmarks/bench_kernels.py [--features N] [--trees N]
            [--depth N] [--samples N]

Builds one synthetic workload, runs batch inference, the interval oracle
(via the deletion filter, its dominant consumer), and exact Shapley on both
backends, and prints per-sample latencies with the speedup.  Results are
also cross-checked: both backends must agree bit for bit.
"""

import argparse
import time

import numpy as np

from gbexplain.flat import flatten
from gbexplain.kernels import pure
from gbexplain.synth import make_workload, sample_alerts

try:
    from gbexplain.kernels import _core
except ImportError:
    _core = None


def _filter_once(kernel, x, n_features):
    lo = x.copy()
    hi = x.copy()
    kept = 0
    for f in range(n_features):
        old_lo, old_hi = lo[f], hi[f]
        lo[f], hi[f] = -np.inf, np.inf
        code, _, _ = kernel.decide(lo, hi, True, -1)
        if code != 0:
            lo[f], hi[f] = old_lo, old_hi
            kept += 1
    return kept


def bench(label, fn, repeats):
    best = min(fn() for _ in range(repeats))
    return best


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--features", type=int, default=92)
    parser.add_argument("--trees", type=int, default=100)
    parser.add_argument("--depth", type=int, default=10)
    parser.add_argument("--samples", type=int, default=20)
    args = parser.parse_args()

    workload = make_workload(n_features=args.features, n_trees=args.trees,
                             max_depth=args.depth, seed=7)
    ens = workload.ensemble
    flat = flatten(ens)
    X, _, _ = sample_alerts(workload, args.samples * 4, seed=11)

    backends = {"pure": pure.Kernel(flat)}
    if _core is not None:
        backends["compiled"] = _core.Kernel(flat)
    else:
        print("extension not built; benchmarking the pure backend only")

    picks = [x for x in X if backends["pure"].margin_one(x) > 0][:args.samples]
    if not picks:
        raise SystemExit("workload produced no positive samples")
    print("model: %d features, %d trees, depth <= %d; %d samples"
          % (args.features, args.trees, args.depth, len(picks)))

    results = {}
    for name, kernel in backends.items():
        t0 = time.perf_counter()
        margins = kernel.margins(np.asarray(picks))
        t_margin = (time.perf_counter() - t0) / len(picks)

        t0 = time.perf_counter()
        for x in picks:
            _filter_once(kernel, x, args.features)
        t_filter = (time.perf_counter() - t0) / len(picks)

        t0 = time.perf_counter()
        phis = [kernel.shap(x) for x in picks]
        t_shap = (time.perf_counter() - t0) / len(picks)

        results[name] = (t_margin, t_filter, t_shap, margins, phis)

    if len(results) == 2:
        for a, b in zip(results["pure"][3], results["compiled"][3]):
            assert a == b, "backend margin mismatch"
        for a, b in zip(results["pure"][4], results["compiled"][4]):
            assert np.array_equal(a, b), "backend attribution mismatch"

    header = "%-10s %14s %18s %14s" % ("backend", "margins/row",
                                       "deletion filter", "shapley")
    print(header)
    print("-" * len(header))
    for name, (tm, tf, ts, _, _) in results.items():
        print("%-10s %11.3f us %15.3f ms %11.3f ms"
              % (name, tm * 1e6, tf * 1e3, ts * 1e3))
    if len(results) == 2:
        pm, pf, ps, _, _ = results["pure"]
        cm, cf, cs, _, _ = results["compiled"]
        print("%-10s %13.1fx %16.1fx %12.1fx"
              % ("speedup", pm / cm, pf / cf, ps / cs))


if __name__ == "__main__":
    main()
