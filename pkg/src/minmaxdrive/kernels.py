"""Backend selection for the geometry hot loops.

The compiled extension is preferred; set ``MINMAXDRIVE_PURE=1`` to force the
numpy implementation (the benchmark and the backend-agreement tests do this).
"""
import os

from . import _kernels_py

if os.environ.get("MINMAXDRIVE_PURE", "") not in ("", "0"):
    _impl = _kernels_py
else:
    try:
        from . import _kernels as _impl  # type: ignore[attr-defined]
    except ImportError:  # extension not built
        _impl = _kernels_py

BACKEND = _impl.BACKEND
sat_overlap_pairs = _impl.sat_overlap_pairs
sat_overlap_one_many = _impl.sat_overlap_one_many
first_overlap = _impl.first_overlap
ray_cast_boxes = _impl.ray_cast_boxes
frenet_project_points = _impl.frenet_project_points


def available_backends():
    out = {"python": _kernels_py}
    try:
        from . import _kernels  # type: ignore[attr-defined]

        out["cython"] = _kernels
    except ImportError:
        pass
    return out
