"""Numba switch.

Set ``GSRKIT_DISABLE_NUMBA=1`` to run every kernel through its numpy /
interpreted twin. The flag is read once, at import time.
"""
import os

_FLAG = os.environ.get("GSRKIT_DISABLE_NUMBA", "").strip().lower()

try:
    from numba import njit as _njit
except ImportError:  # pragma: no cover - numba is a declared dependency
    _njit = None

USE_NUMBA = _njit is not None and _FLAG not in ("1", "true", "yes", "on")


def njit(*args, **kwargs):
    """``numba.njit`` when available, otherwise a no-op decorator."""
    if _njit is not None:
        return _njit(*args, **kwargs)

    def wrapper(func):
        return func

    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]
    return wrapper
