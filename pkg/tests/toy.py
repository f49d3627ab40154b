"""Small labelling instances with an independent brute-force energy."""

import itertools

import numpy as np

from docpatch.imagecore import GradientField
from docpatch.stitch import MISSING_COST, TRIMMED_COST, Layout


def random_instance(rng, max_pixels=16, max_combos=2 ** 18):
    """Random rectangles over a tiny raster, each pixel covered 1..4 times."""
    while True:
        W = int(rng.integers(2, 6))
        H = int(rng.integers(2, max_pixels // W + 1))
        if W * H > max_pixels or H < 2:
            continue
        n = int(rng.integers(2, 5))
        rects = []
        for _ in range(n):
            w = int(rng.integers(2, W + 1))
            h = int(rng.integers(2, H + 1))
            rects.append((int(rng.integers(0, W - w + 1)), int(rng.integers(0, H - h + 1)), w, h))
        cov = np.zeros((H, W), int)
        for x, y, w, h in rects:
            cov[y:y + h, x:x + w] += 1
        if cov.min() < 1 or cov.max() > 4:
            continue
        if np.prod(cov.astype(float)) > max_combos or np.prod(cov.astype(float)) < 4:
            continue
        layout = Layout.from_rects(W, H, rects)
        grads = [GradientField.from_stacked(rng.normal(0, 1, (h, w, 4)).astype(np.float32))
                 for _, _, w, h in rects]
        return layout, grads


def candidates(layout):
    """Covering patches of each pixel in patch order."""
    out = []
    for y in range(layout.height):
        for x in range(layout.width):
            out.append([k for k in range(len(layout))
                        if layout.x0[k] <= x < layout.x0[k] + layout.w[k]
                        and layout.y0[k] <= y < layout.y0[k] + layout.h[k]])
    return out


def gradient_table(layout, grads):
    """(K, H*W, 4) gradients, NaN where a patch does not cover the pixel."""
    K, H, W = len(layout), layout.height, layout.width
    t = np.full((K, H * W, 4), np.nan)
    u = np.zeros((K, H * W))
    for k in range(K):
        x0, y0, w, h = layout.rect(k)
        g = grads[k].stacked().astype(np.float64)
        for ly in range(h):
            for lx in range(w):
                p = (y0 + ly) * W + x0 + lx
                t[k, p] = g[ly, lx]
                trailing = (lx == w - 1 and x0 + w < W) or (ly == h - 1 and y0 + h < H)
                u[k, p] = TRIMMED_COST if trailing else 0.0
    return t, u


def energies(layout, grads, pids):
    """Energy of each row of ``pids`` (patch index per pixel), from the definition."""
    t, u = gradient_table(layout, grads)
    H, W = layout.height, layout.width
    pids = np.asarray(pids)
    cols = np.arange(H * W)
    e = u[pids, cols].sum(axis=1)
    pairs = [(y * W + x, y * W + x + 1) for y in range(H) for x in range(W - 1)]
    pairs += [(y * W + x, (y + 1) * W + x) for y in range(H - 1) for x in range(W)]
    for p, q in pairs:
        a, b = pids[:, p], pids[:, q]
        c = (((t[a, p] - t[b, p]) ** 2).sum(1) + ((t[a, q] - t[b, q]) ** 2).sum(1))
        c = np.where(np.isnan(c), MISSING_COST, c)
        e += np.where(a != b, c, 0.0)
    return e


def exhaustive_minimum(layout, grads):
    cands = candidates(layout)
    combos = np.array(list(itertools.product(*cands)), np.int64)
    e = np.concatenate([energies(layout, grads, combos[i:i + 65536])
                        for i in range(0, len(combos), 65536)])
    return float(e.min())
