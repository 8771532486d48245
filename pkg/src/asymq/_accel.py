"""Backend selection for the hot kernels.

Set ``ASYMQ_DISABLE_NUMBA=1`` to force the pure-numpy path. When numba is not
importable the numpy path is used regardless.
"""

from __future__ import annotations

import os

_FLAG = os.environ.get("ASYMQ_DISABLE_NUMBA", "").strip().lower()

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and _FLAG not in ("1", "true", "yes", "on")


def njit(*args, **kwargs):
    """``numba.njit`` when available, otherwise an identity decorator."""
    if HAVE_NUMBA:
        return numba.njit(*args, **kwargs)
    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]
    return lambda fn: fn
