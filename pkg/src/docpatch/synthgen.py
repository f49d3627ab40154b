"""Synthetic distorted documents with exact ground-truth flows.

Each distortion is an analytic map ``W`` from distorted pixels to flat-page
coordinates, so the ground-truth flow is simply ``W(p) - p`` and the
distorted image is ``flat(W(p))``. Three families are provided: a
homography (perspective), low-frequency sinusoidal bending (curved) and a
sum of hinge functions along random crease lines (folded).
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import SizeError
from .imagecore import FlowField, RasterImage, flow_to_rgb, save_flow, save_image
from .resample import sample

KINDS = ("perspective", "curved", "folded")
MIN_SIDE = 256


@dataclass(frozen=True)
class DistortionSpec:
    kind: str = "curved"
    seed: int = 0
    magnitude: float = 0.4
    creases: int = 1

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}, got {self.kind!r}")
        if not 0.0 <= self.magnitude <= 1.0:
            raise ValueError("magnitude must lie in [0, 1]")
        if not 1 <= self.creases <= 4:
            raise ValueError("creases must lie in [1, 4]")


@dataclass(frozen=True, eq=False)
class SyntheticSample:
    flat: RasterImage
    distorted: RasterImage
    gt_flow: FlowField
    spec: DistortionSpec


# --------------------------------------------------------------------------
# test pages


def render_page(width=1200, height=1600, seed=0, color_block=True) -> RasterImage:
    """A text-like page: rows of dark word boxes, optional colour figure."""
    rng = np.random.default_rng(seed)
    page = np.ones((height, width, 3), np.float32)
    margin = int(0.08 * width)
    line_h = max(6, int(rng.uniform(0.012, 0.02) * height))
    gap = int(line_h * rng.uniform(0.7, 1.1))
    ink = np.array([0.08, 0.08, 0.1], np.float32)
    fig = None
    if color_block:
        fw, fh = int(width * rng.uniform(0.25, 0.4)), int(height * rng.uniform(0.12, 0.2))
        fx = int(rng.uniform(margin, width - margin - fw))
        fy = int(rng.uniform(0.3, 0.6) * height)
        fig = (fx, fy, fw, fh)
    y = margin
    while y + line_h < height - margin:
        x = margin + (int(2.5 * line_h) if rng.random() < 0.15 else 0)
        end = width - margin - (int(rng.uniform(0.1, 0.5) * width) if rng.random() < 0.12 else 0)
        while x < end:
            wlen = int(line_h * rng.uniform(0.8, 4.5))
            x1 = min(x + wlen, end)
            top = y + int(0.15 * line_h * rng.random())
            bottom = y + line_h - int(0.25 * line_h * rng.random())
            page[top:bottom, x:x1] = ink
            x = x1 + int(line_h * rng.uniform(0.4, 0.8))
        y += line_h + gap
        if fig is not None and fig[1] - line_h - gap < y < fig[1] + fig[3]:
            y = fig[1] + fig[3] + gap
    if fig is not None:
        fx, fy, fw, fh = fig
        yy, xx = np.mgrid[0:fh, 0:fw] / np.array([fh, fw], np.float32)[:, None, None]
        c0, c1 = rng.uniform(0.1, 0.9, 3), rng.uniform(0.1, 0.9, 3)
        t = (0.5 * (xx + yy))[..., None]
        page[fy:fy + fh, fx:fx + fw] = (1 - t) * c0 + t * c1
    page = ndimage.gaussian_filter(page, sigma=(1.2, 1.2, 0))
    return RasterImage(np.clip(page, 0, 1))


def builtin_pages(width=1200, height=1600):
    return [render_page(width, height, seed=s) for s in range(5)]


# --------------------------------------------------------------------------
# warps: each returns the flat-page coordinates of every distorted pixel


def homography_from_points(src, dst) -> np.ndarray:
    """3x3 matrix mapping four ``src`` points onto ``dst``."""
    A, b = [], []
    for (x, y), (X, Y) in zip(src, dst):
        A.append([x, y, 1, 0, 0, 0, -X * x, -X * y])
        A.append([0, 0, 0, x, y, 1, -Y * x, -Y * y])
        b += [X, Y]
    h = np.linalg.solve(np.asarray(A, np.float64), np.asarray(b, np.float64))
    return np.append(h, 1.0).reshape(3, 3)


def _perspective(xs, ys, w, h, mag, rng):
    corners = np.array([[0, 0], [w - 1, 0], [w - 1, h - 1], [0, h - 1]], np.float64)
    r = mag * 0.15 * w * np.sqrt(rng.random(4))
    ang = rng.uniform(0, 2 * np.pi, 4)
    disp = np.stack([r * np.cos(ang), r * np.sin(ang)], axis=1)
    Hm = homography_from_points(corners, corners + disp)
    den = Hm[2, 0] * xs + Hm[2, 1] * ys + Hm[2, 2]
    X = (Hm[0, 0] * xs + Hm[0, 1] * ys + Hm[0, 2]) / den
    Y = (Hm[1, 0] * xs + Hm[1, 1] * ys + Hm[1, 2]) / den
    return X, Y


def _curved(xs, ys, w, h, mag, rng):
    dy = np.zeros_like(xs)
    for _ in range(rng.integers(2, 5)):
        amp = mag * 0.015 * max(w, h) * rng.uniform(0.5, 1.0) * rng.choice([-1, 1])
        fx = rng.uniform(0.3, 1.5)
        fy = rng.uniform(0.0, 0.4)
        phase = rng.uniform(0, 2 * np.pi)
        dy += amp * np.sin(2 * np.pi * (fx * xs / w + fy * ys / h) + phase)
    return xs.copy(), ys + dy


def _folded(xs, ys, w, h, mag, rng, creases):
    X, Y = xs.copy(), ys.copy()
    for _ in range(creases):
        theta = rng.uniform(0, np.pi)
        n = np.array([np.cos(theta), np.sin(theta)])
        cx, cy = rng.uniform(0.2, 0.8) * w, rng.uniform(0.2, 0.8) * h
        slope = mag * rng.uniform(0.08, 0.2)
        s = np.maximum(n[0] * (xs - cx) + n[1] * (ys - cy), 0.0)
        X -= slope * s * n[0]
        Y -= slope * s * n[1]
    return X, Y


def crease_lines(spec: DistortionSpec, width, height):
    """(point, normal) of each crease, replaying the generator's draws."""
    rng = np.random.default_rng(spec.seed)
    out = []
    for _ in range(spec.creases):
        theta = rng.uniform(0, np.pi)
        n = np.array([np.cos(theta), np.sin(theta)])
        c = np.array([rng.uniform(0.2, 0.8) * width, rng.uniform(0.2, 0.8) * height])
        rng.uniform(0.08, 0.2)
        out.append((c, n))
    return out


def warp_coordinates(spec: DistortionSpec, width, height):
    ys, xs = np.mgrid[0:height, 0:width].astype(np.float64)
    if spec.magnitude == 0.0:
        return xs, ys
    rng = np.random.default_rng(spec.seed)
    if spec.kind == "perspective":
        return _perspective(xs, ys, width, height, spec.magnitude, rng)
    if spec.kind == "curved":
        return _curved(xs, ys, width, height, spec.magnitude, rng)
    return _folded(xs, ys, width, height, spec.magnitude, rng, spec.creases)


def generate(flat: RasterImage, spec: DistortionSpec) -> SyntheticSample:
    """Distort ``flat`` and return the exact distorted-to-flat flow."""
    w, h = flat.width, flat.height
    if w < MIN_SIDE or h < MIN_SIDE:
        raise SizeError(f"flat page must be at least {MIN_SIDE}x{MIN_SIDE}, got {w}x{h}")
    X, Y = warp_coordinates(spec, w, h)
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    mask = (X >= 0) & (X <= w - 1) & (Y >= 0) & (Y <= h - 1)
    flow = FlowField((X - xs).astype(np.float32), (Y - ys).astype(np.float32), mask)
    status = np.where(mask, 0, 1).astype(np.int8)
    distorted = sample(flat, X, Y, status)
    return SyntheticSample(flat, distorted, flow, spec)


# --------------------------------------------------------------------------
# shading


def shading_field(width, height, seed) -> np.ndarray:
    """Smooth multiplicative field with values in [0.4, 1]."""
    rng = np.random.default_rng(seed)
    ys, xs = np.mgrid[0:height, 0:width].astype(np.float64)
    xs /= width
    ys /= height
    f = np.zeros_like(xs)
    for _ in range(3):
        kx, ky = rng.uniform(0.2, 1.2, 2)
        f += rng.uniform(0.5, 1.0) * np.cos(2 * np.pi * (kx * xs + ky * ys) + rng.uniform(0, 2 * np.pi))
    cx, cy = rng.uniform(0.2, 0.8, 2)
    f -= rng.uniform(0.5, 1.5) * ((xs - cx) ** 2 + (ys - cy) ** 2)
    f = (f - f.min()) / max(f.max() - f.min(), 1e-12)
    lo = rng.uniform(0.4, 0.7)
    return (lo + (1.0 - lo) * f).astype(np.float32)


def generate_shaded(sample_: SyntheticSample, seed=0, field=None) -> RasterImage:
    """Scale the distorted image's luminance by a smooth shading field."""
    img = sample_.distorted if isinstance(sample_, SyntheticSample) else sample_
    if field is None:
        field = shading_field(img.width, img.height, seed)
    field = np.asarray(field, np.float32)
    if field.ndim == 0:
        field = np.full((img.height, img.width), field, np.float32)
    data = img.data * field[:, :, None]
    return RasterImage(np.clip(data, 0, 1))


# --------------------------------------------------------------------------
# dataset files


def write_sample(smp: SyntheticSample, out_dir, name, page_seed=None) -> dict:
    """Write ``<name>_img.png``, ``_flat.png``, ``_flow.dfl``, ``_flowvis.png``, ``_manifest.json``."""
    out = Path(out_dir)
    save_image(smp.distorted, out / f"{name}_img.png")
    save_image(smp.flat, out / f"{name}_flat.png")
    save_flow(smp.gt_flow, out / f"{name}_flow.dfl")
    save_image(flow_to_rgb(smp.gt_flow, smp.flat.width, smp.flat.height), out / f"{name}_flowvis.png")
    manifest = {"name": name, "spec": asdict(smp.spec), "seed": smp.spec.seed,
                "page_seed": page_seed, "width": smp.flat.width, "height": smp.flat.height}
    (out / f"{name}_manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return manifest


def generate_dataset(out_dir, count, kinds=KINDS, magnitude=0.4, seed=0, width=1200, height=1600,
                     creases=None) -> list:
    """Deterministically generate ``count`` samples cycling through ``kinds``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    manifests = []
    for i in range(count):
        kind = kinds[i % len(kinds)]
        sample_seed = int(rng.integers(0, 2**31 - 1))
        page_seed = int(rng.integers(0, 5))
        n_creases = creases or int(rng.integers(1, 5))
        spec = DistortionSpec(kind, sample_seed, magnitude, n_creases)
        smp = generate(render_page(width, height, page_seed), spec)
        manifests.append(write_sample(smp, out, f"sample_{i:04d}", page_seed))
    return manifests
