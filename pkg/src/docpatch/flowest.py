"""Per-patch flow providers.

The learned estimator is replaced by providers that either crop a known
ground-truth flow (optionally corrupted) or read precomputed patch flows
from disk, so any external model can be plugged in through files.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DimensionMismatch, EmptyMaskError, MissingExternalFile, MissingGroundTruth
from .imagecore import FlowField, RasterImage, load_flow
from .patching import PatchGrid, PatchSpec, nearest_valid_center, rereference_flow

KINDS = ("oracle", "noisy-oracle", "external")


@dataclass(frozen=True)
class EstimatorConfig:
    kind: str = "oracle"
    noise_sigma: float = 0.0
    offset_sigma: float = 0.0
    seed: int = 0
    external_dir: str | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"estimator kind must be one of {KINDS}, got {self.kind!r}")
        if self.noise_sigma < 0 or self.offset_sigma < 0:
            raise ValueError("noise_sigma and offset_sigma must be non-negative")


@dataclass(frozen=True)
class PatchFlowEstimate:
    spec: PatchSpec
    flow: FlowField
    # patch-local pixel pinned to zero displacement; None when the patch is fully masked
    center: tuple | None = None


def external_name(spec: PatchSpec) -> str:
    return f"patch_{spec.row}_{spec.col}.dfl"


def _reref(spec, flow):
    c = nearest_valid_center(flow.mask)
    if c is None:
        return PatchFlowEstimate(spec, flow, None)
    return PatchFlowEstimate(spec, rereference_flow(flow, c), c)


def estimate_patches(img: RasterImage | None, grid: PatchGrid, cfg: EstimatorConfig,
                     gt: FlowField | None = None) -> list:
    """Produce one center-referenced flow per grid patch, in grid order."""
    if cfg.kind == "external":
        return _external(grid, cfg)
    if gt is None:
        raise MissingGroundTruth(f"estimator {cfg.kind!r} needs a ground-truth flow")
    if (gt.width, gt.height) != (grid.image_width, grid.image_height):
        raise DimensionMismatch(
            f"ground truth is {gt.width}x{gt.height}, grid expects "
            f"{grid.image_width}x{grid.image_height}")
    rng = np.random.default_rng(cfg.seed) if cfg.kind == "noisy-oracle" else None
    out = []
    for spec in grid:
        crop = gt.crop(spec.origin_x, spec.origin_y, spec.size, spec.size)
        if rng is None:
            out.append(_reref(spec, crop))
            continue
        noise = rng.normal(0.0, 1.0, size=(2, spec.size, spec.size)) * cfg.noise_sigma
        offset = rng.normal(0.0, 1.0, size=2) * cfg.offset_sigma
        du = noise[0] + offset[0]
        dv = noise[1] + offset[1]
        # re-referencing is linear: re-reference the clean crop and the
        # corruption separately so a pure offset cancels to exactly zero
        est = _reref(spec, crop)
        if est.center is not None:
            cx, cy = est.center
            du = du - du[cy, cx]
            dv = dv - dv[cy, cx]
        out.append(PatchFlowEstimate(spec, FlowField(est.flow.u + du, est.flow.v + dv, crop.mask),
                                     est.center))
    return out


def _external(grid, cfg):
    if not cfg.external_dir:
        raise MissingExternalFile("external estimator needs external_dir")
    root = Path(cfg.external_dir)
    out = []
    for spec in grid:
        path = root / external_name(spec)
        if not path.exists():
            raise MissingExternalFile(f"missing patch flow {path}")
        flow = load_flow(path)
        if flow.shape != (spec.size, spec.size):
            raise DimensionMismatch(f"{path}: expected {spec.size}x{spec.size}, got {flow.width}x{flow.height}")
        out.append(_reref(spec, flow))
    return out


def epe(a: FlowField, b: FlowField) -> float:
    """Mean endpoint error over pixels valid in both flows."""
    if a.shape != b.shape:
        raise DimensionMismatch(f"flow shapes differ: {a.shape} vs {b.shape}")
    m = a.mask & b.mask
    if not m.any():
        raise EmptyMaskError("flows share no valid pixel")
    du = a.u[m].astype(np.float64) - b.u[m]
    dv = a.v[m].astype(np.float64) - b.v[m]
    return float(np.mean(np.sqrt(du * du + dv * dv)))
