"""Photometric cleanup after geometric rectification.

Provides linear blending of per-patch outputs, Sauvola binarization and a
divide-by-background deshading baseline.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import BadWindow, CountMismatch, MissingExternalFile
from .imagecore import RasterImage, load_image
from .patching import PatchGrid

MODES = ("none", "binarize", "deshade", "external")


def _ramp_1d(starts, size, length):
    """Per-patch 1-D weights: complementary linear ramps over each overlap."""
    out = []
    n = len(starts)
    for i, s in enumerate(starts):
        w = np.ones(size)
        c = np.arange(s, s + size)
        if i > 0:
            e = starts[i - 1] + size
            if e > s:
                t = _ramp(c, s, e)
                sel = c < e
                w[sel] = t[sel]
        if i < n - 1:
            s2 = starts[i + 1]
            e = s + size
            if e > s2:
                t = _ramp(c, s2, e)
                sel = c >= s2
                w[sel] = 1.0 - t[sel]
        out.append(w)
    return out


def _ramp(c, start, end):
    """0 at ``start``, 1 at ``end - 1``."""
    span = end - start - 1
    if span <= 0:
        return np.full(c.shape, 0.5)
    return (c - start) / span


def blend_weights(grid: PatchGrid) -> list:
    """Separable weight plane for each patch; the planes sum to one per pixel."""
    xs = sorted({p.origin_x for p in grid})
    ys = sorted({p.origin_y for p in grid})
    wx = dict(zip(xs, _ramp_1d(xs, grid.patch_size, grid.image_width)))
    wy = dict(zip(ys, _ramp_1d(ys, grid.patch_size, grid.image_height)))
    return [np.outer(wy[p.origin_y], wx[p.origin_x]) for p in grid]


def blend_patches(grid: PatchGrid, patches) -> RasterImage:
    """Linearly blend aligned per-patch images into one full image."""
    if len(patches) != len(grid):
        raise CountMismatch(f"{len(patches)} patches for a grid of {len(grid)}")
    channels = patches[0].channels
    acc = np.zeros((grid.image_height, grid.image_width, channels), np.float64)
    for spec, img, w in zip(grid, patches, blend_weights(grid)):
        s = spec.size
        if (img.height, img.width) != (s, s):
            raise CountMismatch(f"patch ({spec.row}, {spec.col}) is {img.width}x{img.height}, expected {s}x{s}")
        acc[spec.origin_y:spec.origin_y + s, spec.origin_x:spec.origin_x + s] += w[:, :, None] * img.data
    return RasterImage(acc.astype(np.float32))


def load_external_patches(grid: PatchGrid, directory) -> list:
    root = Path(directory)
    out = []
    for spec in grid:
        path = root / f"patch_{spec.row}_{spec.col}.png"
        if not path.exists():
            raise MissingExternalFile(f"missing illumination patch {path}")
        out.append(load_image(path))
    return out


def _box_sum(ii, r, H, W):
    """Window sums from a zero-padded integral image, windows clipped to the image."""
    y0 = np.clip(np.arange(H) - r, 0, H)
    y1 = np.clip(np.arange(H) + r + 1, 0, H)
    x0 = np.clip(np.arange(W) - r, 0, W)
    x1 = np.clip(np.arange(W) + r + 1, 0, W)
    return (ii[y1][:, x1] - ii[y0][:, x1] - ii[y1][:, x0] + ii[y0][:, x0])


def _integral(a):
    ii = np.zeros((a.shape[0] + 1, a.shape[1] + 1))
    ii[1:, 1:] = a.cumsum(0).cumsum(1)
    return ii


def sauvola_binarize(img: RasterImage, window=31, k=0.2, R=0.5) -> RasterImage:
    """Sauvola threshold ``m * (1 + k * (s / R - 1))`` over a square window.

    Returns a single-channel image with ink at 0 and background at 1.
    """
    if window < 3 or window % 2 == 0:
        raise BadWindow(f"window must be odd and >= 3, got {window}")
    lum = img.luminance().astype(np.float64)
    H, W = lum.shape
    r = window // 2
    n = _box_sum(_integral(np.ones_like(lum)), r, H, W)
    m = _box_sum(_integral(lum), r, H, W) / n
    var = _box_sum(_integral(lum * lum), r, H, W) / n - m * m
    s = np.sqrt(np.maximum(var, 0.0))
    thresh = m * (1.0 + k * (s / R - 1.0))
    return RasterImage((lum >= thresh).astype(np.float32))


def estimate_background(lum, blur_radius):
    size = 2 * int(blur_radius) + 1
    closed = ndimage.grey_closing(lum, size=(size, size), mode="nearest")
    return ndimage.uniform_filter(closed, size=size, mode="nearest")


def _deshade_once(data, blur_radius, eps):
    img = RasterImage(data)
    lum = img.luminance().astype(np.float64)
    bg = estimate_background(lum, blur_radius)
    target = np.clip(lum / np.maximum(bg, eps), 0.0, 1.0)
    gain = np.divide(target, lum, out=np.ones_like(lum), where=lum > 0)
    peak = data.max(axis=2).astype(np.float64)
    cap = np.divide(1.0, peak, out=np.full_like(peak, np.inf), where=peak > 0)
    gain = np.minimum(gain, cap)
    return np.clip(data * gain[:, :, None], 0.0, 1.0).astype(np.float32)


def remove_shading(img: RasterImage, blur_radius=15, eps=1e-3, max_passes=4, tol=1 / 255) -> RasterImage:
    """Divide luminance by a smooth background estimate.

    RGB is rescaled per pixel so hue and saturation are kept; the gain is
    capped where it would push a channel past 1. The division is repeated
    until a pass changes no sample by more than ``tol`` (at most
    ``max_passes`` times), since one pass leaves residual shading where the
    box blur lags the closing.
    """
    if blur_radius < 8:
        raise ValueError(f"blur_radius must be at least 8, got {blur_radius}")
    data = img.data
    for _ in range(max_passes):
        new = _deshade_once(data, blur_radius, eps)
        change = float(np.abs(new - data).max())
        data = new
        if change <= tol:
            break
    return RasterImage(data)
