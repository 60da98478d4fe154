"""Kernel backend selection.

The compiled extension is used when it imports; otherwise the numpy
fallback. ``use_backend`` switches temporarily (tests, benchmarks).
"""

import contextlib
import logging

from . import _fallback

_log = logging.getLogger(__name__)

try:
    from . import _kernels as _compiled
except ImportError:  # extension not built
    _compiled = None
    _log.debug("compiled kernels unavailable, using numpy fallback")

_IMPLS = {"python": _fallback}
if _compiled is not None:
    _IMPLS["compiled"] = _compiled

_active = "compiled" if _compiled is not None else "python"


def available():
    return sorted(_IMPLS)


def active():
    return _active


def set_backend(name):
    global _active
    if name not in _IMPLS:
        raise ValueError(f"unknown or unavailable backend {name!r}; have {available()}")
    _active = name


@contextlib.contextmanager
def use_backend(name):
    prev = _active
    set_backend(name)
    try:
        yield
    finally:
        set_backend(prev)


def jacobi_columns(g, v, tol, max_sweeps):
    return _IMPLS[_active].jacobi_columns(g, v, tol, max_sweeps)


def csr_matmat(indptr, indices, data, x):
    return _IMPLS[_active].csr_matmat(indptr, indices, data, x)


def csr_rmatmat(indptr, indices, data, x, ncols):
    return _IMPLS[_active].csr_rmatmat(indptr, indices, data, x, ncols)
