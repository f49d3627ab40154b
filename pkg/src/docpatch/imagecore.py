"""Raster, flow and gradient containers plus their file formats.

All arrays are stored row-major as ``(height, width[, channels])`` and held as
32-bit floats. Eight-bit samples only appear at the PNG boundary.

Flow sign convention: a flow ``F`` attached to a distorted image maps the
source pixel ``p`` to its rectified position ``p + F(p)``.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import FormatError, SizeError

FLOW_MAGIC = b"DFL1"


def _frozen(arr, dtype):
    arr = np.ascontiguousarray(arr, dtype=dtype)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class RasterImage:
    """Multi-channel image with float samples in [0, 1]."""

    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim == 2:
            data = data[:, :, None]
        if data.ndim != 3 or data.shape[2] not in (1, 3, 4):
            raise FormatError(f"expected (H, W, C) with C in 1/3/4, got {data.shape}")
        if data.shape[0] < 1 or data.shape[1] < 1:
            raise SizeError("image must be at least 1x1")
        object.__setattr__(self, "data", _frozen(data, np.float32))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    def luminance(self) -> np.ndarray:
        """Rec. 601 luma as an (H, W) array."""
        if self.channels == 1:
            return self.data[:, :, 0].copy()
        r, g, b = self.data[:, :, 0], self.data[:, :, 1], self.data[:, :, 2]
        return (0.299 * r + 0.587 * g + 0.114 * b).astype(np.float32)

    def to_rgb(self) -> "RasterImage":
        if self.channels == 3:
            return self
        if self.channels == 1:
            return RasterImage(np.repeat(self.data, 3, axis=2))
        return RasterImage(self.data[:, :, :3])


@dataclass(frozen=True, eq=False)
class FlowField:
    """Per-pixel displacement ``(u, v)`` with a validity mask.

    Masked-out pixels always carry ``u = v = 0``.
    """

    u: np.ndarray
    v: np.ndarray
    mask: np.ndarray | None = None

    def __post_init__(self):
        u = np.asarray(self.u, dtype=np.float32)
        v = np.asarray(self.v, dtype=np.float32)
        if u.ndim != 2 or u.shape != v.shape:
            raise FormatError(f"u and v must be equal 2-D arrays, got {u.shape} and {v.shape}")
        mask = np.ones(u.shape, bool) if self.mask is None else np.asarray(self.mask, bool)
        if mask.shape != u.shape:
            raise FormatError("mask shape differs from flow shape")
        if not mask.all():
            u = np.where(mask, u, 0.0)
            v = np.where(mask, v, 0.0)
        object.__setattr__(self, "u", _frozen(u, np.float32))
        object.__setattr__(self, "v", _frozen(v, np.float32))
        object.__setattr__(self, "mask", _frozen(mask, bool))

    @property
    def height(self) -> int:
        return self.u.shape[0]

    @property
    def width(self) -> int:
        return self.u.shape[1]

    @property
    def shape(self):
        return self.u.shape

    @classmethod
    def zeros(cls, width, height):
        return cls(np.zeros((height, width), np.float32), np.zeros((height, width), np.float32))

    def stacked(self) -> np.ndarray:
        """Return a writable ``(2, H, W)`` copy of ``(u, v)``."""
        return np.stack([self.u, self.v])

    def shifted(self, du, dv) -> "FlowField":
        """Add a constant displacement on the masked-in pixels."""
        return FlowField(self.u + np.float32(du), self.v + np.float32(dv), self.mask)

    def crop(self, x0, y0, w, h) -> "FlowField":
        sl = np.s_[y0:y0 + h, x0:x0 + w]
        return FlowField(self.u[sl], self.v[sl], self.mask[sl])


@dataclass(frozen=True, eq=False)
class GradientField:
    """Forward-difference partial derivatives of a flow's two components."""

    gx_u: np.ndarray
    gy_u: np.ndarray
    gx_v: np.ndarray
    gy_v: np.ndarray

    def __post_init__(self):
        planes = [np.asarray(getattr(self, n), dtype=np.float32)
                  for n in ("gx_u", "gy_u", "gx_v", "gy_v")]
        if planes[0].ndim != 2 or any(p.shape != planes[0].shape for p in planes):
            raise FormatError("gradient planes must share one 2-D shape")
        for name, p in zip(("gx_u", "gy_u", "gx_v", "gy_v"), planes):
            object.__setattr__(self, name, _frozen(p, np.float32))

    @property
    def height(self) -> int:
        return self.gx_u.shape[0]

    @property
    def width(self) -> int:
        return self.gx_u.shape[1]

    @property
    def shape(self):
        return self.gx_u.shape

    def stacked(self) -> np.ndarray:
        """``(H, W, 4)`` array in (Ux, Uy, Vx, Vy) order."""
        return np.stack([self.gx_u, self.gy_u, self.gx_v, self.gy_v], axis=-1)

    @classmethod
    def from_stacked(cls, arr):
        return cls(arr[..., 0], arr[..., 1], arr[..., 2], arr[..., 3])


# --------------------------------------------------------------------------
# gradient


def _forward_diff(a, mask, axis):
    d = np.zeros_like(a)
    if axis == 1:
        d[:, :-1] = a[:, 1:] - a[:, :-1]
        ok = mask[:, 1:] & mask[:, :-1]
        d[:, :-1][~ok] = 0.0
    else:
        d[:-1] = a[1:] - a[:-1]
        ok = mask[1:] & mask[:-1]
        d[:-1][~ok] = 0.0
    return d


def gradient(flow: FlowField) -> GradientField:
    """Forward differences of ``u`` and ``v``.

    The last column (for x-derivatives) and last row (for y-derivatives) are
    zero, i.e. the field is edge-replicated. A difference touching a
    masked-out pixel is also zero, so constant offsets applied to the
    masked-in part never leak into the gradient.
    """
    if flow.width < 2 or flow.height < 2:
        raise SizeError(f"gradient needs at least 2x2 pixels, got {flow.width}x{flow.height}")
    m = flow.mask
    return GradientField(
        _forward_diff(flow.u, m, 1),
        _forward_diff(flow.u, m, 0),
        _forward_diff(flow.v, m, 1),
        _forward_diff(flow.v, m, 0),
    )


# --------------------------------------------------------------------------
# PNG I/O


def load_image(path) -> RasterImage:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"image not found: {path}")
    try:
        with Image.open(path) as im:
            im.load()
            if im.mode in ("I;16", "I;16B", "I"):
                arr = np.asarray(im, dtype=np.float32) / 65535.0
                return RasterImage(np.clip(arr, 0, 1))
            if im.mode not in ("L", "RGB", "RGBA"):
                im = im.convert("RGBA" if "A" in im.mode or "transparency" in im.info else "RGB")
            arr = np.asarray(im, dtype=np.float32) / 255.0
    except (UnidentifiedImageError, OSError, SyntaxError) as exc:
        raise FormatError(f"cannot decode {path}: {exc}") from exc
    return RasterImage(arr)


def to_uint8(data) -> np.ndarray:
    return np.clip(np.rint(np.asarray(data) * 255.0), 0, 255).astype(np.uint8)


def save_image(img: RasterImage, path) -> None:
    arr = to_uint8(img.data)
    if arr.shape[2] == 1:
        arr = arr[:, :, 0]
    Image.fromarray(arr).save(Path(path), format="PNG")


# --------------------------------------------------------------------------
# texture-coordinate encoding


def flow_to_rgb(flow: FlowField, ref_width=None, ref_height=None) -> RasterImage:
    """Encode a flow as normalized rectified coordinates.

    R and G hold ``(x + u) / ref_width`` and ``(y + v) / ref_height`` clamped
    to [0, 1]; B is the mask.
    """
    ref_width = ref_width or flow.width
    ref_height = ref_height or flow.height
    ys, xs = np.mgrid[0:flow.height, 0:flow.width].astype(np.float32)
    r = np.clip((xs + flow.u) / np.float32(ref_width), 0, 1)
    g = np.clip((ys + flow.v) / np.float32(ref_height), 0, 1)
    b = flow.mask.astype(np.float32)
    return RasterImage(np.stack([r, g, b], axis=-1))


def rgb_to_flow(img: RasterImage, ref_width=None, ref_height=None) -> FlowField:
    if img.channels < 3:
        raise FormatError(f"flow encoding needs 3 channels, got {img.channels}")
    ref_width = ref_width or img.width
    ref_height = ref_height or img.height
    ys, xs = np.mgrid[0:img.height, 0:img.width].astype(np.float32)
    mask = img.data[:, :, 2] >= 0.5
    u = img.data[:, :, 0] * np.float32(ref_width) - xs
    v = img.data[:, :, 1] * np.float32(ref_height) - ys
    return FlowField(u, v, mask)


# --------------------------------------------------------------------------
# binary flow format


def save_flow(flow: FlowField, path) -> None:
    """Write ``DFL1`` | u32 width | u32 height | (u, v) float32 pairs | mask bytes."""
    if flow.width < 1 or flow.height < 1:
        raise FormatError("cannot save an empty flow")
    uv = np.empty((flow.height, flow.width, 2), dtype="<f4")
    uv[..., 0] = flow.u
    uv[..., 1] = flow.v
    with open(path, "wb") as fh:
        fh.write(FLOW_MAGIC)
        fh.write(struct.pack("<II", flow.width, flow.height))
        fh.write(uv.tobytes())
        fh.write(flow.mask.astype(np.uint8).tobytes())


def load_flow(path) -> FlowField:
    raw = Path(path).read_bytes()
    if len(raw) < 12 or raw[:4] != FLOW_MAGIC:
        raise FormatError(f"{path}: bad magic, not a DFL1 flow file")
    w, h = struct.unpack("<II", raw[4:12])
    if w < 1 or h < 1:
        raise FormatError(f"{path}: empty flow")
    n = w * h
    if len(raw) != 12 + 8 * n + n:
        raise FormatError(f"{path}: expected {12 + 9 * n} bytes, found {len(raw)}")
    uv = np.frombuffer(raw, dtype="<f4", count=2 * n, offset=12).reshape(h, w, 2)
    mask = np.frombuffer(raw, dtype=np.uint8, count=n, offset=12 + 8 * n).reshape(h, w)
    if mask.max(initial=0) > 1:
        raise FormatError(f"{path}: mask bytes must be 0 or 1")
    return FlowField(uv[..., 0].astype(np.float32), uv[..., 1].astype(np.float32), mask.astype(bool))
