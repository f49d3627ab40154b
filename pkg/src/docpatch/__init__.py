"""Patch-based document image rectification in the gradient domain."""

import os

# the TBB layer shipped on many systems is too old for numba; avoid the warning
os.environ.setdefault("NUMBA_THREADING_LAYER", "workqueue")

__version__ = "0.1.0"

from .imagecore import FlowField, GradientField, RasterImage  # noqa: E402
from .pipeline import PipelineConfig, rectify  # noqa: E402

__all__ = ["FlowField", "GradientField", "RasterImage", "PipelineConfig", "rectify", "__version__"]
