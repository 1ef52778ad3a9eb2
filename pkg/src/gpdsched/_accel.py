"""Optional numba acceleration.

Kernels in :mod:`gpdsched.kernels` come in two flavours: an ``@njit`` loop
and a pure-numpy path.  The numba path is used when numba imports cleanly
and ``GPDSCHED_DISABLE_NUMBA`` is unset (or ``0``).
"""
import os

try:
    import numba
    from numba import njit
    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    numba = None
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]
        return lambda f: f


def numba_enabled():
    flag = os.environ.get("GPDSCHED_DISABLE_NUMBA", "0").strip().lower()
    return HAVE_NUMBA and flag in ("", "0", "false", "no")


def resolve_backend(backend=None):
    """Map ``None``/``"auto"``/``"numba"``/``"numpy"`` to a concrete backend name."""
    if backend in (None, "auto"):
        return "numba" if numba_enabled() else "numpy"
    if backend == "numba" and not HAVE_NUMBA:
        raise RuntimeError("numba backend requested but numba is not importable")
    if backend not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {backend!r}")
    return backend
