"""Tile-based software rasterizer for 2D Gaussian surfels with segmentation channels."""

import os

# numba reads these at import time; allow more workers than cores so
# determinism across worker counts can be exercised on small machines.
os.environ.setdefault("NUMBA_THREADING_LAYER", "omp")
os.environ.setdefault("NUMBA_NUM_THREADS", str(max(8, os.cpu_count() or 1)))

from .scene import (  # noqa: E402
    Camera,
    FormatError,
    InstanceQuery,
    Scene,
    SemanticDecoder,
    Surfel,
    ValidationError,
    load_scene,
    load_trajectory,
    save_scene,
    save_trajectory,
    validate_scene,
)
from .raster import FrameBundle, RenderConfig, RenderStats, render  # noqa: E402

__all__ = [
    "Camera",
    "FormatError",
    "FrameBundle",
    "InstanceQuery",
    "RenderConfig",
    "RenderStats",
    "Scene",
    "SemanticDecoder",
    "Surfel",
    "ValidationError",
    "load_scene",
    "load_trajectory",
    "render",
    "save_scene",
    "save_trajectory",
    "validate_scene",
]
