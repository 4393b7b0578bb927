"""Build script for the optional compiled kernels.

The package is pure Python plus one Cython extension (hat._kernels._core).
If Cython or a C compiler is unavailable the install still succeeds and the
package falls back to hat._kernels._pure at import time.

Build in place for development:

    python setup.py build_ext --inplace
"""

from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:
    cythonize = None

ext_modules = []
if cythonize is not None:
    ext_modules = cythonize(
        [
            Extension(
                "hat._kernels._core",
                ["src/hat/_kernels/_core.pyx"],
                # No -ffast-math and no -march flags: the compiled kernels
                # must be bit-compatible with the pure-Python fallback, which
                # rules out FP contraction and reassociation.
                extra_compile_args=["-O2"],
            )
        ],
        compiler_directives={
            "language_level": 3,
            "boundscheck": False,
            "wraparound": False,
            "cdivision": True,
            "initializedcheck": False,
        },
    )

setup(ext_modules=ext_modules)
