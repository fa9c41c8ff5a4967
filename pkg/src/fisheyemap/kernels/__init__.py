"""Hot-loop kernels with a compiled core and a pure-NumPy fallback.

The compiled extension is preferred when importable; set the environment
variable ``FISHEYEMAP_PURE_PYTHON=1`` to force the NumPy backend. Both
backends implement the same functions with the same semantics; outputs are
bit-identical across backends and across thread counts (the expression
trees are pinned and no fused-multiply-add contraction is allowed).
"""

from __future__ import annotations

import os

from . import numpy_backend

_force_pure = os.environ.get("FISHEYEMAP_PURE_PYTHON", "").lower() in ("1", "true", "yes")

if _force_pure:
    _impl = numpy_backend
    BACKEND = "numpy"
else:
    try:
        from . import _native as _impl  # type: ignore[no-redef]

        BACKEND = "native"
    except ImportError:
        _impl = numpy_backend
        BACKEND = "numpy"

plane_view_cost = _impl.plane_view_cost
wta = _impl.wta
integrate_blocks = _impl.integrate_blocks
raycast_depth = _impl.raycast_depth

__all__ = [
    "BACKEND",
    "numpy_backend",
    "plane_view_cost",
    "wta",
    "integrate_blocks",
    "raycast_depth",
]
