"""Kernel backend selection.

Prefers the compiled extension (hat._kernels._core) and falls back to the
pure-Python reference (hat._kernels._pure). The two are bit-compatible, so
the choice affects speed only. Override with the HAT_KERNELS environment
variable: "python"/"pure" forces the fallback, "cython" requires the
extension and raises if it is missing.
"""

import os

from hat._kernels import _pure

_choice = os.environ.get("HAT_KERNELS", "auto").strip().lower()

if _choice in ("python", "pure"):
    _impl = _pure
    BACKEND = "python"
elif _choice in ("auto", "", "cython", "c"):
    try:
        from hat._kernels import _core as _impl
        BACKEND = "cython"
    except ImportError:
        if _choice in ("cython", "c"):
            raise
        _impl = _pure
        BACKEND = "python"
else:
    raise ValueError(f"unrecognized HAT_KERNELS value: {_choice!r}")

hat_gibbs_sweep = _impl.hat_gibbs_sweep
link_terms = _impl.link_terms
lda_sweep = _impl.lda_sweep
tlda_sweep = _impl.tlda_sweep

__all__ = [
    "BACKEND",
    "hat_gibbs_sweep",
    "link_terms",
    "lda_sweep",
    "tlda_sweep",
]
