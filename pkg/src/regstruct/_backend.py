"""Backend selection for the hot numerical kernels.

Every hot loop in the package has two implementations: a numba ``@njit``
version and a vectorised pure-numpy version.  The environment variable
``RS_BACKEND`` selects between them (``numba``, the default, or ``numpy``).
When numba is not importable the numpy path is used automatically.
"""

from __future__ import annotations

import os

_REQUESTED = os.environ.get("RS_BACKEND", "numba").strip().lower()

try:  # pragma: no cover - exercised implicitly
    import numba as _numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    _numba = None
    HAVE_NUMBA = False

JIT_ENABLED = HAVE_NUMBA and _REQUESTED != "numpy"


def njit(func=None, **kwargs):
    """Compile with ``numba.njit`` when available, otherwise return ``func`` unchanged."""
    if HAVE_NUMBA:
        opts = {"cache": True}
        opts.update(kwargs)
        if func is not None:
            return _numba.njit(**opts)(func)
        return _numba.njit(**opts)
    if func is not None:
        return func

    def wrapper(f):
        return f

    return wrapper


def backend() -> str:
    """Name of the active backend, ``"numba"`` or ``"numpy"``."""
    return "numba" if JIT_ENABLED else "numpy"


def select(numba_impl, numpy_impl, name: str | None = None):
    """Pick an implementation according to ``name`` or the global flag."""
    choice = name if name is not None else backend()
    if choice == "numba":
        if not HAVE_NUMBA:
            raise RuntimeError("numba backend requested but numba is not installed")
        return numba_impl
    if choice == "numpy":
        return numpy_impl
    raise ValueError(f"unknown backend {choice!r}")


def thread_cap() -> int | None:
    """Parallelism cap from ``RS_THREADS`` (``None`` when unset)."""
    raw = os.environ.get("RS_THREADS")
    if not raw:
        return None
    value = int(raw)
    if value < 1:
        raise ValueError("RS_THREADS must be a positive integer")
    return value
