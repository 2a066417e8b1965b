"""Numba switch for the hot kernels.

Set ``HIQARL_DISABLE_NUMBA=1`` to run every kernel through its pure-numpy
path. The flag is read once at import time.
"""
import os

try:
    import numba
except ImportError:  # pragma: no cover
    numba = None

USE_NUMBA = numba is not None and os.environ.get("HIQARL_DISABLE_NUMBA", "0") not in ("1", "true", "yes")


def njit(fn):
    """Compile ``fn`` with numba in nopython mode when enabled, else return it untouched."""
    if USE_NUMBA:
        return numba.njit(cache=True, fastmath=False)(fn)
    return fn


def pick(nb_impl, np_impl):
    return nb_impl if USE_NUMBA else np_impl
