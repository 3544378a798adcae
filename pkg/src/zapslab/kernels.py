"""Kernel dispatch: compiled extension when available, numpy otherwise.

Set ``ZAPSLAB_PURE_PYTHON=1`` before import to force the fallback.
"""

import os

from . import _kernels_py

BACKEND = "python"

if os.environ.get("ZAPSLAB_PURE_PYTHON") != "1":
    try:
        from . import _kernels as _impl
    except ImportError:
        _impl = _kernels_py
    else:
        BACKEND = "cython"
else:
    _impl = _kernels_py



def analysis_periodic(x, lo, hi):
    """Rows of ``x`` (B, n) -> (approx, detail), each (B, n/2)."""
    if x.ndim != 2 or x.shape[1] % 2:
        raise ValueError(f"need a (B, even n) array, got shape {x.shape}")
    return _impl.analysis_periodic(x, lo, hi)


def synthesis_periodic(a, d, lo, hi):
    """Adjoint of :func:`analysis_periodic`."""
    if a.shape != d.shape or a.ndim != 2:
        raise ValueError(f"approx {a.shape} and detail {d.shape} must be matching 2-D arrays")
    return _impl.synthesis_periodic(a, d, lo, hi)

__all__ = ["BACKEND", "analysis_periodic", "synthesis_periodic"]
