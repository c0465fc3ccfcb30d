"""Kernel dispatch: compiled extension when built, pure Python otherwise.

Both implementations are bit-identical by construction; `BACKEND` reports
which one is active and `get_impl` lets benchmarks compare them directly.
"""

from __future__ import annotations

from . import _pykernels

try:
    from . import _ckernels as _impl

    BACKEND = "compiled"
except ImportError:  # extension not built on this install
    _impl = _pykernels
    BACKEND = "python"

bm25_scores = _impl.bm25_scores
dots_and_norms = _impl.dots_and_norms


def get_impl(name: str):
    """Return a kernel module by name ('compiled' or 'python')."""
    if name == "python":
        return _pykernels
    if name == "compiled":
        if BACKEND != "compiled":
            raise ImportError("compiled kernels are not available in this install")
        return _impl
    raise ValueError(f"unknown kernel backend {name!r}")
