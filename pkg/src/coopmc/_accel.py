"""Backend switch for the hot kernels.

Every kernel in this package exists twice: a numba ``@njit`` loop and a
vectorised numpy fallback.  ``COOPMC_BACKEND=numpy`` forces the fallback;
otherwise numba is used whenever it imports.
"""

import os

BACKEND_ENV = "COOPMC_BACKEND"

try:
    import numba

    NUMBA_AVAILABLE = True
except ImportError:  # pragma: no cover - numba is a hard dependency in practice
    numba = None
    NUMBA_AVAILABLE = False

USE_NUMBA = NUMBA_AVAILABLE and os.environ.get(BACKEND_ENV, "numba").lower() != "numpy"


def njit(*args, **kwargs):
    """``numba.njit`` with caching on, or a no-op decorator without numba."""
    kwargs.setdefault("cache", True)
    if not NUMBA_AVAILABLE:
        if args and callable(args[0]):
            return args[0]
        return lambda fn: fn
    return numba.njit(*args, **kwargs)


def backend_name():
    return "numba" if USE_NUMBA else "numpy"
