"""Optional numba acceleration.

Set ``QUARTET_DISABLE_NUMBA=1`` to force the pure-numpy kernels even when
numba is importable.
"""

from __future__ import annotations

import os

_DISABLED = os.environ.get("QUARTET_DISABLE_NUMBA", "").strip().lower() in {"1", "true", "yes", "on"}

try:
    import numba as _numba
except ImportError:  # pragma: no cover - depends on the environment
    _numba = None

HAVE_NUMBA = _numba is not None
USE_NUMBA = HAVE_NUMBA and not _DISABLED


def njit(*args, **kwargs):
    """``numba.njit`` when numba is installed, otherwise a no-op decorator.

    The decorated function is always compiled when numba exists so that the
    benchmark can compare both paths; whether callers *dispatch* to it is
    controlled by :data:`USE_NUMBA`.
    """
    if HAVE_NUMBA:
        return _numba.njit(*args, **kwargs)
    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]

    def decorator(func):
        return func

    return decorator
