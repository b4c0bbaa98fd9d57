"""Backend selection for the compiled kernels.

Set ``COLONYSCAN_DISABLE_NUMBA=1`` to force the pure-numpy code paths. Numba
is also skipped silently when it cannot be imported.
"""

import os

_FLAG = "COLONYSCAN_DISABLE_NUMBA"


def _env_disabled():
    return os.environ.get(_FLAG, "").strip().lower() in ("1", "true", "yes", "on")


try:
    if _env_disabled():
        raise ImportError("numba disabled by " + _FLAG)
    from numba import njit as _njit

    NUMBA_AVAILABLE = True
except ImportError:
    _njit = None
    NUMBA_AVAILABLE = False

BACKEND = "numba" if NUMBA_AVAILABLE else "numpy"


def njit(*args, **kwargs):
    """``numba.njit`` when available, otherwise a pass-through decorator."""
    if NUMBA_AVAILABLE:
        kwargs.setdefault("cache", True)
        return _njit(*args, **kwargs)
    if args and callable(args[0]):
        return args[0]
    return lambda fn: fn
