"""Optional numba acceleration.

Set ``RLVR_LAB_DISABLE_NUMBA=1`` to run every kernel through its pure-numpy
implementation instead. The flag is read once at import time.
"""

import os

try:
    from numba import njit as _njit

    NUMBA_INSTALLED = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    NUMBA_INSTALLED = False

_FLAG = os.environ.get("RLVR_LAB_DISABLE_NUMBA", "").strip().lower()
NUMBA_DISABLED = _FLAG not in ("", "0", "false", "no")

USE_NUMBA = NUMBA_INSTALLED and not NUMBA_DISABLED


def optional_njit(*args, **kwargs):
    """``numba.njit`` when acceleration is active, identity otherwise."""

    def decorator(func):
        if USE_NUMBA:
            return _njit(*args, **kwargs)(func)
        return func

    return decorator


def backend_name() -> str:
    return "numba" if USE_NUMBA else "numpy"
