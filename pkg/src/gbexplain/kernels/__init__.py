"""Kernel backend selection: compiled extension if built, else pure Python.

Both backends expose the same ``Kernel`` class over a FlatEnsemble and must
produce identical results; ``benchmarks/bench_kernels.py`` compares their
speed.
"""

INVARIANT = 0
COUNTEREXAMPLE = 1
UNKNOWN = 2

try:
    from ._core import Kernel  # type: ignore[attr-defined]

    IMPLEMENTATION = "compiled"
except ImportError:  # extension not built; fall back
    from .pure import Kernel

    IMPLEMENTATION = "pure"

__all__ = ["Kernel", "IMPLEMENTATION", "INVARIANT", "COUNTEREXAMPLE", "UNKNOWN"]
