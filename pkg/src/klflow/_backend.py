"""Pick the pairwise-sum implementation at import time.

The compiled extension is used when it imports cleanly. Setting
``KLFLOW_PURE_PYTHON=1`` forces the NumPy fallback, which is also used
whenever the extension was not built.
"""

import os

import numpy as np

from klflow import _pykernels

BACKEND = "python"
_impl = _pykernels

if os.environ.get("KLFLOW_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from klflow import _ckernels
    except ImportError:  # extension not built
        pass
    else:
        _impl = _ckernels
        BACKEND = "cython"


def implementation(name=None):
    """Return the module backing a named backend (default: the active one)."""
    if name is None:
        return _impl
    if name == "python":
        return _pykernels
    if name == "cython":
        from klflow import _ckernels
        return _ckernels
    raise ValueError(f"unknown backend {name!r}")


def _c(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def gram(x, y, family, p1, p2, impl=None):
    return (impl or _impl).gram(_c(x), _c(y), family, p1, p2)


def grad2_sum(src, w, dst, family, p1, p2, impl=None):
    return (impl or _impl).grad2_sum(_c(src), _c(w), _c(dst), family, p1, p2)


def stein_gram(x, sx, y, sy, family, p1, p2, impl=None):
    return (impl or _impl).stein_gram(_c(x), _c(sx), _c(y), _c(sy), family, p1, p2)


def stein_grad2_sum(x, w, s, jac, family, p1, p2, impl=None):
    return (impl or _impl).stein_grad2_sum(_c(x), _c(w), _c(s), _c(jac), family, p1, p2)
