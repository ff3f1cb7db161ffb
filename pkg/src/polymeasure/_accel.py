"""JIT switch for the hot kernels.

Set ``POLYMEASURE_DISABLE_JIT=1`` to force the pure-numpy code paths. The
numba kernels are compiled lazily on first use.
"""
import os

_FLAG = os.environ.get("POLYMEASURE_DISABLE_JIT", "").strip().lower()
JIT_DISABLED = _FLAG in ("1", "true", "yes", "on")

try:
    if JIT_DISABLED:
        raise ImportError
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - depends on environment
    numba = None
    HAVE_NUMBA = False


def njit(*args, **kwargs):
    """``numba.njit`` when available, otherwise an identity decorator."""
    if HAVE_NUMBA:
        return numba.njit(*args, **kwargs)
    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]
    return lambda fn: fn


def resolve_backend(backend="auto"):
    """Map ``"auto"`` to ``"numba"`` or ``"numpy"`` and check availability."""
    if backend == "auto":
        return "numba" if HAVE_NUMBA else "numpy"
    if backend not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {backend!r}")
    if backend == "numba" and not HAVE_NUMBA:
        raise RuntimeError("numba backend requested but JIT is disabled or unavailable")
    return backend
