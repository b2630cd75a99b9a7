"""Optional numba acceleration.

Hot kernels come in two flavours: an explicit-loop version compiled with
``numba.njit`` and a vectorised pure-numpy version.  :data:`USE_NUMBA`
selects between them at import time.  Set ``SCANTEX_DISABLE_NUMBA=1`` to
force the numpy path (or when numba is not installed).
"""

import os

_DISABLED = os.environ.get("SCANTEX_DISABLE_NUMBA", "").strip().lower() in ("1", "true", "yes", "on")

try:
    if _DISABLED:
        raise ImportError("disabled by SCANTEX_DISABLE_NUMBA")
    import numba as _numba

    USE_NUMBA = True
except ImportError:
    _numba = None
    USE_NUMBA = False


def njit(*args, **kwargs):
    """``numba.njit(cache=True)`` or a no-op decorator when numba is off.

    The wrapped loop function is still importable and callable without numba,
    which keeps it usable as a slow reference in tests.
    """
    kwargs.setdefault("cache", True)

    def wrap(func):
        if USE_NUMBA:
            return _numba.njit(**kwargs)(func)
        return func

    if len(args) == 1 and callable(args[0]):
        return wrap(args[0])
    return wrap


def backend():
    return "numba" if USE_NUMBA else "numpy"
