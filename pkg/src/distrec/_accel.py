"""JIT selection.

Set ``DISTREC_DISABLE_JIT=1`` to force the pure-numpy kernels even when
numba is importable.  The flag is read once, at import time.
"""

import os

DISABLE_JIT = os.environ.get("DISTREC_DISABLE_JIT", "").strip().lower() not in ("", "0", "false", "no")

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

HAVE_NUMBA = numba is not None
USE_NUMBA = HAVE_NUMBA and not DISABLE_JIT


def njit(func):
    """``numba.njit(cache=True)`` when numba is installed, identity otherwise."""
    if numba is None:  # pragma: no cover
        return func
    return numba.njit(cache=True)(func)
