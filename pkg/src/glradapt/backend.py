"""Backend selection for the Monte Carlo kernels.

GLR_ADAPT_BACKEND = auto | numba | numpy   (default auto: numba if importable)
GLR_ADAPT_THREADS = positive int           (caps worker threads in grid sweeps)
"""

from __future__ import annotations

import os
from types import ModuleType

_cached: ModuleType | None = None
_cached_name: str | None = None


def backend_name() -> str:
    choice = os.environ.get("GLR_ADAPT_BACKEND", "auto").strip().lower()
    if choice not in ("auto", "numba", "numpy"):
        raise ValueError(f"GLR_ADAPT_BACKEND must be auto|numba|numpy, got {choice!r}")
    if choice == "auto":
        try:
            import numba  # noqa: F401
            return "numba"
        except ImportError:
            return "numpy"
    return choice


def kernels() -> ModuleType:
    """Return the kernel module for the selected backend (cached per choice)."""
    global _cached, _cached_name
    name = backend_name()
    if _cached is not None and _cached_name == name:
        return _cached
    if name == "numba":
        from . import _kernels_numba as mod
    else:
        from . import _kernels_numpy as mod
    _cached, _cached_name = mod, name
    return mod


def thread_count() -> int:
    raw = os.environ.get("GLR_ADAPT_THREADS", "")
    if not raw:
        return max(1, (os.cpu_count() or 1) // 2)
    n = int(raw)
    if n < 1:
        raise ValueError("GLR_ADAPT_THREADS must be >= 1")
    return n
