"""Hot-loop kernels, compiled when available.

The Cython build (``_ckernels``) is preferred; the numpy/pure-Python module is
used when the extension is missing or ``LVFUSION_PURE_PYTHON=1``.
"""

import os

from . import _pykernels

BACKEND = "python"
if os.environ.get("LVFUSION_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as _impl

        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _pykernels
else:
    _impl = _pykernels

grow_clusters = _impl.grow_clusters
iou_matrix = _impl.iou_matrix
polyline_distance = _impl.polyline_distance

__all__ = ["BACKEND", "grow_clusters", "iou_matrix", "polyline_distance"]
