"""Kernel selection.

The compiled kernel is used when it imports; ``MLREACT_PURE_PYTHON=1`` forces
the numpy fallback.  ``use_backend`` switches at runtime (benchmarks, parity
tests).
"""

import os

from . import _tree_py

try:
    from . import _tree_kernel as _compiled
except ImportError:  # pragma: no cover - depends on build
    _compiled = None

_KERNELS = {"python": _tree_py}
if _compiled is not None:
    _KERNELS["cython"] = _compiled

if os.environ.get("MLREACT_PURE_PYTHON") == "1" or _compiled is None:
    _active = "python"
else:
    _active = "cython"


def available_backends():
    return sorted(_KERNELS)


def current_backend():
    return _active


def use_backend(name):
    """Select ``"cython"`` or ``"python"``; returns the previous name."""
    global _active
    if name not in _KERNELS:
        raise ValueError(f"backend {name!r} not available (have {available_backends()})")
    prev, _active = _active, name
    return prev


def kernel():
    return _KERNELS[_active]
