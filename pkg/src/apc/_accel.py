"""Numba switch.

Set ``APC_DISABLE_NUMBA=1`` to run every kernel through its numpy fallback.
The flag is read once, at import time.
"""

from __future__ import annotations

import os


def _noop_jit(*args, **kwargs):
    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]

    def wrap(f):
        return f

    return wrap


def _env_disabled() -> bool:
    return os.environ.get("APC_DISABLE_NUMBA", "").strip().lower() in {"1", "true", "yes", "on"}


try:
    import numba as _numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a hard dependency in practice
    _numba = None
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and not _env_disabled()

if HAVE_NUMBA:
    njit = _numba.njit
else:  # pragma: no cover
    njit = _noop_jit


def pick(fast, slow):
    """Return the jitted kernel when numba is enabled, else the numpy path."""
    return fast if USE_NUMBA else slow
