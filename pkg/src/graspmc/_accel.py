"""Numba switch.

Hot loops are written once in plain Python/numpy style and compiled with
``numba.njit`` unless ``GRASPMC_DISABLE_NUMBA`` is set to a truthy value
(or numba is not importable), in which case the vectorised numpy versions
in :mod:`graspmc._kernels` are used instead.
"""
import os

_FALSY = ("", "0", "false", "no", "off")

DISABLE_NUMBA = os.environ.get("GRASPMC_DISABLE_NUMBA", "").strip().lower() not in _FALSY
CACHE_NUMBA = os.environ.get("GRASPMC_NUMBA_CACHE", "1").strip().lower() not in _FALSY

try:
    import numba
except ImportError:  # pragma: no cover - numba is a hard dependency in practice
    numba = None

HAVE_NUMBA = numba is not None
USE_NUMBA = HAVE_NUMBA and not DISABLE_NUMBA


def njit(func):
    """Compile ``func`` in nopython mode when numba is available."""
    if HAVE_NUMBA:
        return numba.njit(cache=CACHE_NUMBA)(func)
    return func
