"""Kernel backend selection: compiled extension when available, numpy otherwise.

The two backends expose identical functions and produce bit-identical integer
results (and float results within rounding-order noise). Selection order:

1. explicit ``name=`` argument,
2. the ``CRACKEDGE_KERNELS`` environment variable (``cython`` / ``numpy``),
3. ``auto``: the compiled extension if it imported, else numpy.
"""

from __future__ import annotations

import logging
import os

from . import kernels_numpy

log = logging.getLogger(__name__)

try:
    from . import _kernels as _cython_kernels
except ImportError:  # extension not built; pure-python install still works
    _cython_kernels = None
    log.debug("compiled kernels unavailable, falling back to numpy")

_ENV_VAR = "CRACKEDGE_KERNELS"


def available_backends() -> list[str]:
    names = ["numpy"]
    if _cython_kernels is not None:
        names.insert(0, "cython")
    return names


def get_kernels(name: str | None = None):
    """Resolve a kernels module by name ('auto' | 'cython' | 'numpy')."""
    if name is None:
        name = os.environ.get(_ENV_VAR, "auto")
    if name == "auto":
        return _cython_kernels if _cython_kernels is not None else kernels_numpy
    if name == "cython":
        if _cython_kernels is None:
            raise ImportError(
                "compiled kernels requested but the extension is not built"
            )
        return _cython_kernels
    if name == "numpy":
        return kernels_numpy
    raise ValueError(f"unknown kernel backend {name!r}")
