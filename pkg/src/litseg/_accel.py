"""Numba switch.

Set ``LITSEG_NO_NUMBA=1`` to force the pure numpy fallbacks (useful for
debugging and for platforms without llvmlite).
"""
import os

USE_NUMBA = os.environ.get("LITSEG_NO_NUMBA", "0").lower() in ("", "0", "false", "no")

try:
    import numba
except ImportError:  # pragma: no cover
    numba = None
    USE_NUMBA = False

HAVE_NUMBA = numba is not None


def njit(*args, **kwargs):
    """``numba.njit(cache=True)`` when numba is importable, identity otherwise."""
    kwargs.setdefault("cache", True)
    if numba is None:  # pragma: no cover
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]
        return lambda f: f
    return numba.njit(*args, **kwargs)
