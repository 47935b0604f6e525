"""Hot-loop dispatch: compiled Cython kernels when built, numpy otherwise.

Set ``PETALSEARCH_PURE_PYTHON=1`` to force the numpy path. ``BACKEND``
names the implementation chosen at import.
"""
import os

import numpy as np

from . import _kernels_py

if os.environ.get("PETALSEARCH_PURE_PYTHON", "") not in ("", "0"):
    _impl = _kernels_py
    BACKEND = "python"
else:
    try:
        from . import _ckernels as _impl
        BACKEND = "cython"
    except ImportError:
        _impl = _kernels_py
        BACKEND = "python"

IMPLEMENTATIONS = {"python": _kernels_py}
if BACKEND == "cython":
    IMPLEMENTATIONS["cython"] = _impl


def pool_anchors(fmap_hwc, anchors, dy, dx, seg_start, seg_len, backend=None):
    impl = IMPLEMENTATIONS[backend] if backend else _impl
    return impl.pool_anchors(
        np.ascontiguousarray(fmap_hwc, dtype=np.float64),
        np.ascontiguousarray(anchors, dtype=np.int64),
        np.ascontiguousarray(dy, dtype=np.int32),
        np.ascontiguousarray(dx, dtype=np.int32),
        np.ascontiguousarray(seg_start, dtype=np.int64),
        np.ascontiguousarray(seg_len, dtype=np.int64),
    )


def correlate_direct(street, sats, backend=None):
    impl = IMPLEMENTATIONS[backend] if backend else _impl
    return impl.correlate_direct(
        np.ascontiguousarray(street, dtype=np.float64),
        np.ascontiguousarray(sats, dtype=np.float64),
    )
