"""End-to-end rectification: resize, partition, estimate, stitch, integrate, resample."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import illum
from .errors import SizeError
from .flowest import EstimatorConfig, estimate_patches
from .imagecore import FlowField, RasterImage
from .patching import GLOBAL_RESOLUTION, build_grid, resize_bilinear
from .poisson import DEFAULT_LAMBDA, ScreenedPoissonProblem, SolverOptions, _solve_full, upsample_flow
from .resample import ResampleOptions, rectify_image
from .stitch import Layout, assemble_gradient, difference_validity, optimize_indices, patch_gradients

log = logging.getLogger(__name__)

# weight of differences that touch a masked-out sample; keeps the system
# definite without letting the zero-filled values pull on valid regions
INVALID_DIFFERENCE_WEIGHT = 1e-3


@dataclass(frozen=True)
class PipelineConfig:
    processing_width: int = 1200
    patch_size: int = 96
    estimator: EstimatorConfig = field(default_factory=EstimatorConfig)
    solver: SolverOptions = field(default_factory=lambda: SolverOptions(downsample_factor=4))
    resample: ResampleOptions = field(default_factory=ResampleOptions)
    illum_mode: str = "none"
    illum_dir: str | None = None
    lam: float = DEFAULT_LAMBDA
    upscale_output: bool = False
    global_resolution: int = GLOBAL_RESOLUTION

    def __post_init__(self):
        if self.illum_mode not in illum.MODES:
            raise ValueError(f"illum_mode must be one of {illum.MODES}, got {self.illum_mode!r}")
        if self.processing_width < self.patch_size:
            raise ValueError("processing_width must be at least patch_size")
        if self.lam <= 0:
            raise ValueError("lam must be positive")

    _NESTED = {"estimator": EstimatorConfig, "solver": SolverOptions, "resample": ResampleOptions}

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        kw = dict(d)
        for key, typ in cls._NESTED.items():
            if key in kw and isinstance(kw[key], dict):
                sub = dict(kw[key])
                if key == "resample" and "fill" in sub:
                    sub["fill"] = tuple(sub["fill"])
                kw[key] = typ(**sub)
        return cls(**kw)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, path) -> "PipelineConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def replace(self, **changes) -> "PipelineConfig":
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d.update(changes)
        return PipelineConfig(**d)


def processing_size(width, height, processing_width):
    return processing_width, max(1, int(round(height * processing_width / width)))


def resize_image(img: RasterImage, width, height) -> RasterImage:
    if (img.width, img.height) == (width, height):
        return img
    return RasterImage(resize_bilinear(img.data, height, width))


def resize_flow(flow: FlowField, width, height) -> FlowField:
    """Resample a flow onto a new grid and rescale its values per axis."""
    if (flow.width, flow.height) == (width, height):
        return flow
    sx, sy = width / flow.width, height / flow.height
    u = resize_bilinear(flow.u, height, width) * sx
    v = resize_bilinear(flow.v, height, width) * sy
    m = resize_bilinear(flow.mask.astype(np.float32), height, width) > 0.5
    return FlowField(u, v, m)


def coarse_patch_flow(flow: FlowField, origin, rect, factor):
    """Block-average a patch flow onto its rectangle in the coarse layout.

    Values stay in fine-pixel units. Samples beyond the patch replicate its
    edge; the coarse mask keeps blocks whose valid fraction is at least 1/2.
    """
    ox, oy = origin
    x0, y0, w, h = rect
    f = factor
    lx = np.clip(np.arange(f * x0, f * (x0 + w)) - ox, 0, flow.width - 1)
    ly = np.clip(np.arange(f * y0, f * (y0 + h)) - oy, 0, flow.height - 1)
    m = flow.mask[ly][:, lx].astype(np.float64)
    out = []
    for a in (flow.u, flow.v):
        s = (a[ly][:, lx] * m).reshape(h, f, w, f).sum(axis=(1, 3))
        n = m.reshape(h, f, w, f).sum(axis=(1, 3))
        out.append(np.divide(s, n, out=np.zeros_like(s), where=n > 0).astype(np.float32))
    frac = m.reshape(h, f, w, f).mean(axis=(1, 3))
    return FlowField(out[0], out[1], frac >= 0.5)


def _coverage_mask(grid, estimates):
    mask = np.zeros((grid.image_height, grid.image_width), bool)
    for e in estimates:
        s = e.spec
        mask[s.origin_y:s.origin_y + s.size, s.origin_x:s.origin_x + s.size] |= e.flow.mask
    return mask


def reconstruct_flow(grid, estimates, cfg: PipelineConfig, diagnostics=None):
    """Stitch patch gradients and integrate them into one full-image flow."""
    diag = diagnostics if diagnostics is not None else {}
    f = cfg.solver.downsample_factor
    t0 = time.perf_counter()
    if f == 1:
        layout = Layout.from_grid(grid)
        flows = [e.flow for e in estimates]
    else:
        layout = Layout.downsampled(grid, f)
        flows = [coarse_patch_flow(e.flow, (e.spec.origin_x, e.spec.origin_y), layout.rect(k), f)
                 for k, e in enumerate(estimates)]
    grads = patch_gradients(flows)
    idx = optimize_indices(layout, grads)
    target = assemble_gradient(layout, grads, idx)
    t1 = time.perf_counter()

    candidates = [k for k, e in enumerate(estimates) if e.center is not None and flows[k].mask.any()]
    if not candidates:
        raise SizeError("no patch carries a valid flow sample")
    ref = grid.center_most(candidates)
    x0, y0, w, h = layout.rect(ref)
    H, W = layout.height, layout.width
    ref_u = np.zeros((H, W), np.float32)
    ref_v = np.zeros((H, W), np.float32)
    ref_m = np.zeros((H, W), bool)
    ref_u[y0:y0 + h, x0:x0 + w] = flows[ref].u
    ref_v[y0:y0 + h, x0:x0 + w] = flows[ref].v
    ref_m[y0:y0 + h, x0:x0 + w] = flows[ref].mask
    vx, vy = difference_validity(layout, flows, idx)
    gw = tuple(np.where(v, 1.0, INVALID_DIFFERENCE_WEIGHT) for v in (vx, vy))
    problem = ScreenedPoissonProblem(target, FlowField(ref_u, ref_v), ref_m, cfg.lam, gw)
    opts = SolverOptions(cfg.solver.tolerance, cfg.solver.max_iterations, 1, cfg.solver.preconditioner)
    flow, info = _solve_full(problem, opts)
    if f > 1:
        flow = upsample_flow(flow, f, grid.image_height, grid.image_width)
    flow = FlowField(flow.u, flow.v, _coverage_mask(grid, estimates))
    t2 = time.perf_counter()

    diag["time_stitch"] = t1 - t0
    diag["time_reconstruct"] = t2 - t1
    diag["energy_initial"] = float(idx.initial_energy)
    diag["energy_final"] = float(idx.energy)
    diag["expansion_cycles"] = int(idx.cycles)
    diag["cg_iterations"] = [int(i) for i in info.iterations]
    diag["cg_residuals"] = [float(r) for r in info.residuals]
    diag["reference_patch"] = [int(grid[ref].row), int(grid[ref].col)]
    return flow, idx


def apply_illumination(img: RasterImage, grid, cfg: PipelineConfig) -> RasterImage:
    mode = cfg.illum_mode
    if mode == "none":
        return img
    if mode == "binarize":
        return illum.sauvola_binarize(img)
    if mode == "deshade":
        return illum.remove_shading(img)
    return illum.blend_patches(grid, illum.load_external_patches(grid, cfg.illum_dir))


def rectify(image: RasterImage, cfg: PipelineConfig | None = None, gt: FlowField | None = None):
    """Run the full pipeline; returns ``(rectified, flow, diagnostics)``.

    The rectified image and flow are at processing resolution. The flow is
    defined up to one global offset, fixed by the center-most patch.
    """
    cfg = cfg or PipelineConfig()
    diag = {}
    t0 = time.perf_counter()
    W, H = processing_size(image.width, image.height, cfg.processing_width)
    if min(W, H) < cfg.patch_size:
        raise SizeError(f"processing size {W}x{H} is smaller than patch size {cfg.patch_size}")
    img = resize_image(image, W, H)
    gt_p = resize_flow(gt, W, H) if gt is not None else None
    grid = build_grid(W, H, cfg.patch_size)
    t1 = time.perf_counter()
    estimates = estimate_patches(img, grid, cfg.estimator, gt_p)
    t2 = time.perf_counter()
    flow, _ = reconstruct_flow(grid, estimates, cfg, diag)
    t3 = time.perf_counter()
    out, inv = rectify_image(img, flow, cfg.resample, return_map=True)
    t4 = time.perf_counter()
    out = apply_illumination(out, grid, cfg)
    if cfg.upscale_output:
        out = resize_image(out, image.width, image.height)
    t5 = time.perf_counter()

    diag.update({
        "input_size": [image.width, image.height],
        "processing_size": [W, H],
        "patches": len(grid),
        "time_resize": t1 - t0,
        "time_estimate": t2 - t1,
        "time_resample": t4 - t3,
        "time_illumination": t5 - t4,
        "time_total": t5 - t0,
        "diverged_pixels": inv.diverged,
    })
    log.info("rectified %dx%d in %.2fs", W, H, diag["time_total"])
    return out, flow, diag
