"""Numba acceleration switch.

Set ``INVOP_DISABLE_NUMBA=1`` to force the pure-numpy kernels even when numba
is importable. The choice is made once, at import time.
"""

import functools
import os

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

NUMBA_AVAILABLE = numba is not None
USE_NUMBA = NUMBA_AVAILABLE and os.environ.get("INVOP_DISABLE_NUMBA", "0").lower() not in ("1", "true", "yes")

if NUMBA_AVAILABLE:
    jit = functools.partial(numba.njit, cache=True, fastmath=False)
else:  # pragma: no cover
    def jit(func=None, **kwargs):
        if func is None:
            return lambda f: f
        return func


def pick(fast, slow):
    """Return ``fast`` when numba is enabled, else ``slow``."""
    return fast if USE_NUMBA else slow
