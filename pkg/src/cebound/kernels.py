"""Backend selection for the O(N^2) estimator kernels.

The compiled extension is used when it imports; otherwise, or when
``CEBOUND_PURE_PYTHON=1`` is set, the numpy fallback is used.  Both expose
``ratio_sums``, ``ratio_sums_grad`` and ``gauss_row_sums``.
"""

import os

import numpy as np

from . import _kernels_py

_compiled = None
if os.environ.get("CEBOUND_PURE_PYTHON") != "1":
    try:
        from . import _kernels as _compiled
    except ImportError:
        _compiled = None

BACKEND = "cython" if _compiled is not None else "python"
_impl = _compiled if _compiled is not None else _kernels_py


def get_backend(name=None):
    """Return the kernel module called ``name`` (default: the active one)."""
    if name is None:
        return _impl
    if name == "python":
        return _kernels_py
    if name == "cython":
        if _compiled is None:
            raise ImportError("compiled kernels are not built")
        return _compiled
    raise ValueError(f"unknown backend {name!r}")


def _c(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def ratio_sums(Xh, X, Yh, Y, ax, ay, exclude_self=False, backend=None):
    return get_backend(backend).ratio_sums(
        _c(Xh), _c(X), _c(Yh), _c(Y), float(ax), float(ay), bool(exclude_self)
    )


def ratio_sums_grad(Xh, X, Yh, Y, ax, ay, cx, cy, g_xy, g_y, exclude_self=False, backend=None):
    return get_backend(backend).ratio_sums_grad(
        _c(Xh), _c(X), _c(Yh), _c(Y), float(ax), float(ay),
        _c(cx), _c(cy), _c(g_xy), _c(g_y), bool(exclude_self),
    )


def gauss_row_sums(A, B, a, backend=None):
    return get_backend(backend).gauss_row_sums(_c(A), _c(B), float(a))
