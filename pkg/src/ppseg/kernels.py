"""Hot-kernel backend selection.

The compiled Cython module is used when it imports; otherwise the numpy
implementations in :mod:`ppseg._pykernels` take over. Set
``PPSEG_BACKEND=python`` to force the fallback.
"""
from __future__ import annotations

import logging
import os

from . import _pykernels

logger = logging.getLogger(__name__)

KERNEL_NAMES = (
    "fps",
    "ball_query",
    "sample_grid",
    "window_index",
    "localize",
    "nearest_coarse",
    "knn_refine",
)

python_backend = _pykernels
compiled_backend = None

if os.environ.get("PPSEG_BACKEND", "").lower() != "python":
    try:
        from . import _ckernels as compiled_backend  # type: ignore[no-redef]
    except ImportError:  # extension not built
        logger.debug("compiled kernels unavailable, using numpy fallback")

BACKEND = "cython" if compiled_backend is not None else "python"
_active = compiled_backend if compiled_backend is not None else python_backend


def backends() -> dict:
    """Available backends by name."""
    out = {"python": python_backend}
    if compiled_backend is not None:
        out["cython"] = compiled_backend
    return out


def get(name: str | None = None):
    """Kernel module for ``name`` (default: the active backend)."""
    if name is None:
        return _active
    try:
        return backends()[name]
    except KeyError:
        raise ValueError(f"kernel backend {name!r} is not available") from None


def __getattr__(attr):
    if attr in KERNEL_NAMES:
        return getattr(_active, attr)
    raise AttributeError(attr)
