"""Overlapping local/global patch grid and per-patch flow re-referencing."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import CenterInvalidError, SizeError
from .imagecore import FlowField, RasterImage

OVERLAP = 0.25
MIN_PATCH = 8
GLOBAL_RESOLUTION = 256


@dataclass(frozen=True)
class PatchSpec:
    origin_x: int
    origin_y: int
    size: int
    global_origin_x: int
    global_origin_y: int
    global_width: int
    global_height: int
    row: int = 0
    col: int = 0

    @property
    def global_size(self) -> int:
        """Side of the context window before border clamping."""
        return 2 * self.size

    @property
    def center(self):
        """Image coordinates of the patch reference pixel."""
        return self.origin_x + self.size // 2, self.origin_y + self.size // 2

    def contains(self, x, y) -> bool:
        return (self.origin_x <= x < self.origin_x + self.size
                and self.origin_y <= y < self.origin_y + self.size)


@dataclass(frozen=True)
class PatchGrid:
    image_width: int
    image_height: int
    patch_size: int
    stride: int
    patches: tuple = field(default_factory=tuple)
    n_rows: int = 0
    n_cols: int = 0

    def __len__(self):
        return len(self.patches)

    def __iter__(self):
        return iter(self.patches)

    def __getitem__(self, i) -> PatchSpec:
        return self.patches[i]

    def coverage(self) -> np.ndarray:
        """Number of patches covering each pixel."""
        cov = np.zeros((self.image_height, self.image_width), np.int32)
        for p in self.patches:
            cov[p.origin_y:p.origin_y + p.size, p.origin_x:p.origin_x + p.size] += 1
        return cov

    def center_most(self, candidates=None) -> int:
        """Index of the patch whose center is nearest the image center.

        Ties resolve to the earliest patch in row-major order.
        """
        cx, cy = (self.image_width - 1) / 2.0, (self.image_height - 1) / 2.0
        best, best_d = None, np.inf
        idx = range(len(self.patches)) if candidates is None else candidates
        for i in idx:
            px, py = self.patches[i].center
            d = (px - cx) ** 2 + (py - cy) ** 2
            if d < best_d:
                best, best_d = i, d
        return best


def patch_origins(length, size, stride):
    """1-D origins: a regular run, then one patch snapped flush to the edge.

    When the snapped patch would overlap the last-but-one regular patch
    (three patches over one coordinate), it replaces the last regular patch.
    """
    origins = list(range(0, length - size + 1, stride))
    last = length - size
    if origins[-1] != last:
        if len(origins) >= 2 and last < origins[-2] + size:
            origins[-1] = last
        else:
            origins.append(last)
    return origins


def build_grid(width, height, patch_size=96) -> PatchGrid:
    if patch_size < MIN_PATCH:
        raise SizeError(f"patch size must be at least {MIN_PATCH}, got {patch_size}")
    if patch_size > min(width, height):
        raise SizeError(f"patch size {patch_size} exceeds image {width}x{height}")
    stride = int(round((1.0 - OVERLAP) * patch_size))
    xs = patch_origins(width, patch_size, stride)
    ys = patch_origins(height, patch_size, stride)
    patches = []
    for r, oy in enumerate(ys):
        for c, ox in enumerate(xs):
            patches.append(_make_spec(ox, oy, patch_size, width, height, r, c))
    return PatchGrid(width, height, patch_size, stride, tuple(patches), len(ys), len(xs))


def _make_spec(ox, oy, size, width, height, row, col):
    half = size // 2
    gx0, gy0 = max(ox - half, 0), max(oy - half, 0)
    gx1, gy1 = min(ox + size + half, width), min(oy + size + half, height)
    return PatchSpec(ox, oy, size, gx0, gy0, gx1 - gx0, gy1 - gy0, row, col)


def resize_bilinear(arr, out_h, out_w):
    """Resample an (H, W[, C]) array with pixel-center aligned bilinear weights."""
    h, w = arr.shape[:2]
    ys = (np.arange(out_h) + 0.5) * (h / out_h) - 0.5
    xs = (np.arange(out_w) + 0.5) * (w / out_w) - 0.5
    ys = np.clip(ys, 0, h - 1)
    xs = np.clip(xs, 0, w - 1)
    y0 = np.minimum(np.floor(ys).astype(int), max(h - 2, 0))
    x0 = np.minimum(np.floor(xs).astype(int), max(w - 2, 0))
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    ty = (ys - y0).astype(np.float32)
    tx = (xs - x0).astype(np.float32)
    if arr.ndim == 3:
        ty = ty[:, None, None]
        tx = tx[None, :, None]
    else:
        ty = ty[:, None]
        tx = tx[None, :]
    a = arr[y0][:, x0]
    b = arr[y0][:, x1]
    c = arr[y1][:, x0]
    d = arr[y1][:, x1]
    top = a + (b - a) * tx
    bot = c + (d - c) * tx
    return (top + (bot - top) * ty).astype(np.float32)


def extract_patch(img: RasterImage, spec: PatchSpec, global_resolution=GLOBAL_RESOLUTION):
    """Return the local crop and the resampled concentric context crop."""
    s = spec
    local = img.data[s.origin_y:s.origin_y + s.size, s.origin_x:s.origin_x + s.size]
    ctx = img.data[s.global_origin_y:s.global_origin_y + s.global_height,
                   s.global_origin_x:s.global_origin_x + s.global_width]
    ctx = resize_bilinear(ctx, global_resolution, global_resolution)
    return RasterImage(local), RasterImage(ctx)


def rereference_flow(flow_patch: FlowField, center=None) -> FlowField:
    """Subtract the flow at the patch center so the center stays fixed."""
    if flow_patch.width < 1 or flow_patch.height < 1:
        raise SizeError("empty flow patch")
    cx, cy = center if center is not None else (flow_patch.width // 2, flow_patch.height // 2)
    if not flow_patch.mask[cy, cx]:
        raise CenterInvalidError(f"patch center ({cx}, {cy}) is masked out")
    u = flow_patch.u - flow_patch.u[cy, cx]
    v = flow_patch.v - flow_patch.v[cy, cx]
    return FlowField(u, v, flow_patch.mask)


def nearest_valid_center(mask):
    """Masked-in pixel closest to the patch center, or None if the patch is empty."""
    h, w = mask.shape
    cx, cy = w // 2, h // 2
    if mask[cy, cx]:
        return cx, cy
    ys, xs = np.nonzero(mask)
    if len(xs) == 0:
        return None
    k = np.argmin((xs - cx) ** 2 + (ys - cy) ** 2)
    return int(xs[k]), int(ys[k])
