"""JIT toggling for the hot numerical kernels.

Kernels are written in numba-compatible numpy and compiled with ``@njit``
unless the environment variable ``PERFTRAJ_NUMBA`` is set to ``0`` (or
numba is missing), in which case the identical code runs as plain
numpy/Python.  ``python -m perftraj.benchmark`` compares the two modes.
"""

import os

NUMBA_ENABLED = os.environ.get("PERFTRAJ_NUMBA", "1") != "0"

if NUMBA_ENABLED:
    try:
        from numba import njit as _njit
    except ImportError:
        NUMBA_ENABLED = False

if NUMBA_ENABLED:
    def maybe_jit(func):
        return _njit(cache=True)(func)
else:
    def maybe_jit(func):
        return func
