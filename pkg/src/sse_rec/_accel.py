"""Optional numba acceleration.

Set ``SSE_REC_NUMBA=0`` to run every kernel as plain Python/numpy. The
kernels are written so that both paths produce bit-identical results.
"""

import os

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

USE_NUMBA = numba is not None and os.environ.get("SSE_REC_NUMBA", "1") != "0"


def jit(fn):
    """``numba.njit`` when acceleration is on, identity otherwise.

    The undecorated function stays reachable as ``.py_func`` either way, which
    is what the benchmark uses to time the fallback path in-process.
    """
    if USE_NUMBA:
        return numba.njit(cache=True)(fn)
    fn.py_func = fn
    return fn
