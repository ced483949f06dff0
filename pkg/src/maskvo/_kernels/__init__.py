"""Kernel backend selection.

The compiled extension (`maskvo._kernels._native`, built from Cython) is
preferred when present; otherwise the pure-numpy backend is used. Set
MASKVO_KERNELS=numpy or MASKVO_KERNELS=native to force one.
"""

from __future__ import annotations

import os

from . import numpy_backend

_requested = os.environ.get("MASKVO_KERNELS", "").strip().lower()

_native = None
if _requested != "numpy":
    try:
        from . import _native  # type: ignore
    except ImportError:
        _native = None
        if _requested == "native":
            raise ImportError(
                "MASKVO_KERNELS=native but the compiled extension is not built; "
                "run `pip install -e . --no-build-isolation`"
            )

_backend = _native if _native is not None else numpy_backend


def active_backend() -> str:
    return "native" if _backend is not numpy_backend else "numpy"


def photometric_system(*args, **kwargs):
    return _backend.photometric_system(*args, **kwargs)


def search_depth_map(*args, **kwargs):
    return _backend.search_depth_map(*args, **kwargs)


# raster-level introspection is always served by the numpy implementation
photometric_rasters = numpy_backend.photometric_rasters
bilinear_many = numpy_backend.bilinear_many
