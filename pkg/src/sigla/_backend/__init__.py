"""Kernel backend selection.

The numeric inner loops (dense forward/backward passes, polynomial Gram
matrices) exist twice: jitted with numba and as plain numpy. The active
backend is chosen once at import time from the ``SIGLA_BACKEND``
environment variable:

* ``auto`` (default) -- numba if it imports, numpy otherwise
* ``numba``          -- require numba, fail loudly if unavailable
* ``numpy``          -- force the pure-numpy path

``benchmarks/bench_kernels.py`` compares both via :func:`get_backend`.
"""

import os
import warnings

from . import numpy_impl

_KERNELS = (
    "affine",
    "relu",
    "softmax_rows",
    "relu_backward",
    "affine_backward",
    "sgd_step",
    "poly_gram",
    "center_gram",
    "gram_dot",
)

_requested = os.environ.get("SIGLA_BACKEND", "auto").lower()
if _requested not in ("auto", "numba", "numpy"):
    warnings.warn(
        f"SIGLA_BACKEND={_requested!r} not recognised; falling back to 'auto'"
    )
    _requested = "auto"

if _requested == "numpy":
    _impl = numpy_impl
else:
    try:
        from . import numba_impl as _impl
    except ImportError as exc:
        if _requested == "numba":
            raise ImportError(
                "SIGLA_BACKEND=numba but numba is not importable"
            ) from exc
        warnings.warn("numba unavailable; using the slower numpy backend")
        _impl = numpy_impl

BACKEND = _impl.NAME


def get_backend(name):
    """Return the kernel module for an explicit backend name."""
    if name == "numpy":
        return numpy_impl
    if name == "numba":
        from . import numba_impl

        return numba_impl
    raise ValueError(f"unknown backend {name!r}")


affine = _impl.affine
relu = _impl.relu
softmax_rows = _impl.softmax_rows
relu_backward = _impl.relu_backward
affine_backward = _impl.affine_backward
sgd_step = _impl.sgd_step
poly_gram = _impl.poly_gram
center_gram = _impl.center_gram
gram_dot = _impl.gram_dot

__all__ = ["BACKEND", "get_backend", *_KERNELS]
