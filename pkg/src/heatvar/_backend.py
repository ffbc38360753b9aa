"""Selects the compiled kernels when available, the numpy ones otherwise."""

import numpy as np

from . import _pykernels

try:
    from . import _ckernels
except ImportError:  # extension not built
    _ckernels = None

_impl = _ckernels if _ckernels is not None else _pykernels


def available():
    """Names of the backends that can be selected in this build."""
    return ["compiled", "python"] if _ckernels is not None else ["python"]


def current():
    return "compiled" if _impl is _ckernels else "python"


def use(name):
    """Switch backend; returns the previously active name."""
    global _impl
    previous = current()
    if name == "compiled":
        if _ckernels is None:
            raise ImportError("compiled kernels are not built")
        _impl = _ckernels
    elif name == "python":
        _impl = _pykernels
    else:
        raise ValueError(f"unknown backend {name!r}")
    return previous


def lower_apply(L, z):
    """Rows of ``z`` mapped through the lower-triangular factor ``L``."""
    L = np.ascontiguousarray(L, dtype=np.float64)
    z = np.ascontiguousarray(z, dtype=np.float64)
    out = np.empty_like(z)
    _impl.lower_apply(L, z, out)
    return out


def compensated_cumsum(terms):
    """Row-wise compensated running sums of a 2-D array."""
    terms = np.ascontiguousarray(terms, dtype=np.float64)
    out = np.empty_like(terms)
    _impl.compensated_cumsum(terms, out)
    return out
