"""Numba switch.

Set ``DIFFCLS_NUMBA=0`` before import to force the pure-numpy kernels.
Both paths are exercised by the test suite and compared in
``benchmarks/bench_kernels.py``.
"""
import os

_flag = os.environ.get("DIFFCLS_NUMBA", "1").strip().lower()

try:
    import numba  # noqa: F401
    HAS_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAS_NUMBA = False

USE_NUMBA = HAS_NUMBA and _flag not in ("0", "false", "no", "off")


def njit(fn):
    """``numba.njit(cache=True)`` when available, identity otherwise."""
    if not HAS_NUMBA:
        return fn
    from numba import njit as _njit
    return _njit(cache=True)(fn)


def pick(jitted, fallback):
    """Select the kernel implementation according to the env flag."""
    return jitted if USE_NUMBA else fallback
