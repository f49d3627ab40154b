"""Backward mapping of a forward flow and rectified-image resampling.

For an output pixel ``q`` the source location ``p`` with ``p + F(p) = q`` is
found by the fixed-point iteration ``p <- q - F(p)`` starting at ``p = q``.
Every pixel is processed independently.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit, prange
from scipy import ndimage

from .errors import DimensionMismatch
from .imagecore import FlowField, RasterImage

OK, DIVERGED, OUT_OF_BOUNDS, MASKED = 0, 1, 2, 3


@dataclass(frozen=True)
class ResampleOptions:
    max_iterations: int = 32
    tolerance: float = 0.05
    fill: tuple = (1.0, 1.0, 1.0)

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if not self.tolerance > 0:
            raise ValueError("tolerance must be positive")


@dataclass(frozen=True, eq=False)
class InverseMap:
    """Source coordinates for every output pixel plus a per-pixel status code."""

    x: np.ndarray
    y: np.ndarray
    status: np.ndarray
    iterations: np.ndarray

    @property
    def diverged(self) -> int:
        return int((self.status == DIVERGED).sum())

    @property
    def valid(self) -> np.ndarray:
        return self.status == OK


@njit(cache=True, inline="always")
def _bilinear(a, x, y):
    H, W = a.shape
    if x < 0.0:
        x = 0.0
    elif x > W - 1:
        x = W - 1.0
    if y < 0.0:
        y = 0.0
    elif y > H - 1:
        y = H - 1.0
    x0 = int(np.floor(x))
    y0 = int(np.floor(y))
    if x0 > W - 2:
        x0 = max(W - 2, 0)
    if y0 > H - 2:
        y0 = max(H - 2, 0)
    x1 = min(x0 + 1, W - 1)
    y1 = min(y0 + 1, H - 1)
    tx = x - x0
    ty = y - y0
    return ((a[y0, x0] * (1.0 - tx) + a[y0, x1] * tx) * (1.0 - ty)
            + (a[y1, x0] * (1.0 - tx) + a[y1, x1] * tx) * ty)


@njit(cache=True)
def _invert_point(u, v, qx, qy, max_it, tol):
    px = qx
    py = qy
    for it in range(max_it):
        nx = qx - _bilinear(u, px, py)
        ny = qy - _bilinear(v, px, py)
        d = np.sqrt((nx - px) ** 2 + (ny - py) ** 2)
        px = nx
        py = ny
        if d <= tol:
            return px, py, it + 1, True
    return px, py, max_it, False


@njit(cache=True, parallel=True)
def _invert_field(u, v, mask, max_it, tol):
    H, W = u.shape
    xs = np.empty((H, W), np.float64)
    ys = np.empty((H, W), np.float64)
    status = np.empty((H, W), np.int8)
    iters = np.empty((H, W), np.int32)
    for qy in prange(H):
        for qx in range(W):
            px, py, it, ok = _invert_point(u, v, float(qx), float(qy), max_it, tol)
            xs[qy, qx] = px
            ys[qy, qx] = py
            iters[qy, qx] = it
            if not ok:
                status[qy, qx] = DIVERGED
            elif px < 0.0 or py < 0.0 or px > W - 1 or py > H - 1:
                status[qy, qx] = OUT_OF_BOUNDS
            elif not mask[int(np.floor(py + 0.5)), int(np.floor(px + 0.5))]:
                status[qy, qx] = MASKED
            else:
                status[qy, qx] = OK
    return xs, ys, status, iters


@njit(cache=True, parallel=True)
def _gather(src, xs, ys, status, fill):
    H, W = xs.shape
    C = src.shape[2]
    out = np.empty((H, W, C), np.float32)
    for qy in prange(H):
        for qx in range(W):
            if status[qy, qx] != 0:
                for c in range(C):
                    out[qy, qx, c] = fill[c]
            else:
                for c in range(C):
                    out[qy, qx, c] = _bilinear(src[:, :, c], xs[qy, qx], ys[qy, qx])
    return out


def backward_map(flow: FlowField, q, opts: ResampleOptions | None = None):
    """Source point of ``q``; returns ``((x, y), converged, iterations)``."""
    opts = opts or ResampleOptions()
    px, py, it, ok = _invert_point(flow.u.astype(np.float64), flow.v.astype(np.float64),
                                   float(q[0]), float(q[1]), opts.max_iterations, opts.tolerance)
    return (px, py), bool(ok), int(it)


def _filled(flow):
    """Flow with masked-out pixels copied from their nearest masked-in pixel."""
    u = flow.u.astype(np.float64)
    v = flow.v.astype(np.float64)
    if flow.mask.all() or not flow.mask.any():
        return u, v
    _, (iy, ix) = ndimage.distance_transform_edt(~flow.mask, return_indices=True)
    return u[iy, ix], v[iy, ix]


def inverse_map(flow: FlowField, opts: ResampleOptions | None = None) -> InverseMap:
    """Invert ``flow`` at every pixel.

    The search runs on a copy of the flow whose masked-out samples are filled
    from the nearest valid sample, so the iteration stays smooth near the
    mask boundary; landing on a masked-out pixel is still reported.
    """
    opts = opts or ResampleOptions()
    u, v = _filled(flow)
    xs, ys, status, iters = _invert_field(u, v,
                                          np.ascontiguousarray(flow.mask), opts.max_iterations,
                                          float(opts.tolerance))
    return InverseMap(xs, ys, status, iters)


def sample(src: RasterImage, xs, ys, status=None, fill=(1.0, 1.0, 1.0)) -> RasterImage:
    """Bilinear lookup of ``src`` at arbitrary coordinates."""
    xs = np.asarray(xs, np.float64)
    ys = np.asarray(ys, np.float64)
    if status is None:
        status = np.zeros(xs.shape, np.int8)
    fill = np.resize(np.asarray(fill, np.float32), src.channels)
    data = np.ascontiguousarray(src.data)
    return RasterImage(_gather(data, xs, ys, np.asarray(status, np.int8), fill))


def rectify_image(src: RasterImage, flow: FlowField, opts: ResampleOptions | None = None,
                  return_map=False):
    """Resample ``src`` into the rectified frame defined by ``flow``.

    Pixels whose search diverges, leaves the source, or lands on a masked-out
    flow sample receive ``opts.fill``.
    """
    opts = opts or ResampleOptions()
    if (src.width, src.height) != (flow.width, flow.height):
        raise DimensionMismatch(
            f"image is {src.width}x{src.height} but flow is {flow.width}x{flow.height}")
    inv = inverse_map(flow, opts)
    out = sample(src, inv.x, inv.y, inv.status, opts.fill)
    return (out, inv) if return_map else out
