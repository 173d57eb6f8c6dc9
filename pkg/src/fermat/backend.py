"""Kernel backend selection: numba-jitted hot loops with a pure-numpy fallback.

The active backend is chosen once at import time from the ``FERMAT_BACKEND``
environment variable (``numba``, ``numpy``, or ``auto``, the default) and can
be switched at runtime with :func:`use`, which is what the benchmark harness
does to compare both paths in one process.

Jitted and fallback variants share the same source: :func:`jit` compiles a
kernel when numba is importable and returns ``None`` otherwise, and callers
dispatch through :func:`pick` at call time.
"""

from __future__ import annotations

import os
import warnings

_ENV_VAR = "FERMAT_BACKEND"

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only on numba-less installs
    numba = None
    HAVE_NUMBA = False


def _initial_choice() -> str:
    raw = os.environ.get(_ENV_VAR, "auto").strip().lower()
    if raw in ("numba", "jit"):
        if not HAVE_NUMBA:
            warnings.warn(
                f"{_ENV_VAR}=numba requested but numba is not importable; "
                "falling back to numpy",
                RuntimeWarning,
            )
            return "numpy"
        return "numba"
    if raw in ("numpy", "python", "nojit"):
        return "numpy"
    if raw not in ("auto", ""):
        warnings.warn(f"unrecognized {_ENV_VAR}={raw!r}; using auto", RuntimeWarning)
    return "numba" if HAVE_NUMBA else "numpy"


_active = _initial_choice()


def active() -> str:
    """Name of the backend currently in use: ``"numba"`` or ``"numpy"``."""
    return _active


def use(name: str) -> None:
    """Switch the active backend at runtime.

    Raises if ``name`` is not a known backend or numba is requested but not
    installed.
    """
    global _active
    if name not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {name!r}; expected 'numba' or 'numpy'")
    if name == "numba" and not HAVE_NUMBA:
        raise RuntimeError("numba backend requested but numba is not importable")
    _active = name


def jit(func):
    """Compile ``func`` with ``numba.njit(cache=True, nogil=True)`` if possible.

    Returns ``None`` when numba is unavailable so callers can keep a single
    dispatch site. ``nogil`` lets experiment workers run kernels concurrently.
    """
    if not HAVE_NUMBA:
        return None
    return numba.njit(cache=True, nogil=True)(func)


def pick(jitted, fallback):
    """Select the jitted kernel or its fallback per the active backend."""
    if _active == "numba" and jitted is not None:
        return jitted
    return fallback
