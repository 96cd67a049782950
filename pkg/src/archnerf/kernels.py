"""Backend selection for the ray-march kernels.

The compiled extension is used when it imports; otherwise the numpy
fallback. ``ARCHNERF_BACKEND=python`` forces the fallback and
``ARCHNERF_BACKEND=cython`` makes a missing extension an error.
"""

from __future__ import annotations

import os

from . import _kernels_py

_choice = os.environ.get("ARCHNERF_BACKEND", "auto").lower()
if _choice not in ("auto", "python", "cython"):
    raise ImportError(f"ARCHNERF_BACKEND must be auto, python or cython, not {_choice!r}")

_compiled = None
if _choice != "python":
    try:
        from . import _kernels as _compiled
    except ImportError:
        if _choice == "cython":
            raise

BACKEND = "cython" if _compiled is not None else "python"
_impl = _compiled if _compiled is not None else _kernels_py


def get_backend(name: str | None = None):
    """Kernel module by name; ``None`` gives the active one."""
    if name is None:
        return _impl
    if name == "python":
        return _kernels_py
    if name == "cython":
        if _compiled is None:
            raise ImportError("compiled kernels are not available")
        return _compiled
    raise ValueError(f"unknown backend {name!r}")


def available_backends() -> list[str]:
    return ["cython", "python"] if _compiled is not None else ["python"]
