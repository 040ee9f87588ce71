import os

from setuptools import Extension, setup

ext_modules = []
if not os.environ.get("GBEXPLAIN_PURE_PYTHON"):
    try:
        from Cython.Build import cythonize

        ext_modules = cythonize(
            [
                Extension(
                    "gbexplain.kernels._core",
                    ["src/gbexplain/kernels/_core.pyx"],
                    # keep IEEE semantics so the compiled kernel is
                    # bit-identical to the pure-Python backend
                    extra_compile_args=["-ffp-contract=off"],
                )
            ],
            compiler_directives={
                "language_level": "3",
                "boundscheck": False,
                "wraparound": False,
                "cdivision": True,
                "initializedcheck": False,
            },
        )
    except ImportError:
        # Pure-Python kernels are selected at import time when the
        # extension is unavailable.
        ext_modules = []

setup(ext_modules=ext_modules)
