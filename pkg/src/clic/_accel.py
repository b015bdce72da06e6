"""Backend selection for the compiled kernels.

Hot loops are written twice: once as numba ``@njit`` functions and once as
plain numpy.  The numba path is used when numba imports cleanly and the
environment variable ``CLIC_DISABLE_NUMBA`` is unset (or ``0``).  Tests and
the benchmark flip the backend at runtime with :func:`set_backend`.
"""

import os

try:
    import numba

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a hard dependency
    numba = None
    _HAVE_NUMBA = False


def _env_disabled():
    return os.environ.get("CLIC_DISABLE_NUMBA", "").strip().lower() not in ("", "0", "false", "no")


_backend = "numba" if (_HAVE_NUMBA and not _env_disabled()) else "numpy"


def njit(*args, **kwargs):
    """``numba.njit`` with ``cache=True``; identity decorator without numba."""
    kwargs.setdefault("cache", True)
    if not _HAVE_NUMBA:
        if args and callable(args[0]):
            return args[0]
        return lambda f: f
    return numba.njit(*args, **kwargs)


def get_backend():
    return _backend


def set_backend(name):
    """Select ``"numba"`` or ``"numpy"``; returns the previous backend."""
    global _backend
    if name not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {name!r}")
    if name == "numba" and not _HAVE_NUMBA:
        raise RuntimeError("numba is not installed")
    prev, _backend = _backend, name
    return prev


def have_numba():
    return _HAVE_NUMBA
