"""Gradient-domain stitching of overlapping patch flows.

Each output pixel picks which covering patch supplies its flow gradient.
The choice minimizes a seam energy: for every 4-neighbour pair ``(p, q)``
labelled with patches ``a`` and ``b``,

    ||G_a(p) - G_b(p)||^2 + ||G_a(q) - G_b(q)||^2

plus a validity term, and is optimized by alpha-expansion over at most four
labels per pixel (label ``k`` = the ``k``-th covering patch in grid order).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from numba import njit

from .errors import InfeasibleLabeling
from .imagecore import FlowField, GradientField, gradient
from .maxflow import maxflow
from .patching import PatchGrid

log = logging.getLogger(__name__)

MAX_LABELS = 4
# a patch's trailing row/column has no forward difference of its own
TRIMMED_COST = 1e6
# a pair cost that needs a gradient the patch does not have
MISSING_COST = 1e9
MAX_CYCLES = 8

LABEL_COLORS = np.array([[230, 60, 60], [60, 170, 75], [65, 105, 225], [250, 200, 40]], np.uint8)


@dataclass(frozen=True)
class Layout:
    """Axis-aligned patch rectangles over a ``width x height`` raster."""

    width: int
    height: int
    x0: np.ndarray
    y0: np.ndarray
    w: np.ndarray
    h: np.ndarray

    def __len__(self):
        return len(self.x0)

    @classmethod
    def from_grid(cls, grid: PatchGrid) -> "Layout":
        x0 = np.array([p.origin_x for p in grid], np.int64)
        y0 = np.array([p.origin_y for p in grid], np.int64)
        s = np.array([p.size for p in grid], np.int64)
        return cls(grid.image_width, grid.image_height, x0, y0, s, s.copy())

    @classmethod
    def from_rects(cls, width, height, rects) -> "Layout":
        r = np.asarray(rects, np.int64).reshape(-1, 4)
        return cls(width, height, r[:, 0], r[:, 1], r[:, 2], r[:, 3])

    @classmethod
    def downsampled(cls, grid: PatchGrid, factor: int) -> "Layout":
        """Coarse rectangles on the ``ceil(W/f) x ceil(H/f)`` block grid."""
        f = factor
        W = -(-grid.image_width // f)
        H = -(-grid.image_height // f)
        rects = []
        for p in grid:
            xa = int(np.floor(p.origin_x / f + 0.5))
            ya = int(np.floor(p.origin_y / f + 0.5))
            xb = int(np.floor((p.origin_x + p.size) / f + 0.5))
            yb = int(np.floor((p.origin_y + p.size) / f + 0.5))
            if p.origin_x + p.size == grid.image_width:
                xb = W
            if p.origin_y + p.size == grid.image_height:
                yb = H
            rects.append((xa, ya, max(xb - xa, 2), max(yb - ya, 2)))
        return cls.from_rects(W, H, rects)

    def centers(self):
        return self.x0 + self.w // 2, self.y0 + self.h // 2

    def rect(self, k):
        return int(self.x0[k]), int(self.y0[k]), int(self.w[k]), int(self.h[k])


def as_layout(grid) -> Layout:
    return grid if isinstance(grid, Layout) else Layout.from_grid(grid)


@dataclass(frozen=True, eq=False)
class IndexMap:
    width: int
    height: int
    label: np.ndarray       # (H, W) int8 in 0..3
    patch_id: np.ndarray    # (H, W) int32 index into the layout
    energy: float = 0.0
    initial_energy: float = 0.0
    cycles: int = 0

    def to_rgb(self) -> np.ndarray:
        return LABEL_COLORS[self.label]


def patch_gradients(estimates) -> list:
    """Gradient of every patch flow, in estimate order."""
    if len(estimates) == 0:
        raise ValueError("no patch estimates")
    return [gradient(e.flow if hasattr(e, "flow") else e) for e in estimates]


# --------------------------------------------------------------------------
# labelling problem


@njit(cache=True, inline="always")
def _locate(k, pix, W, x0, y0, w, h, offset):
    """Flat gradient-buffer index of patch ``k`` at pixel ``pix``; -1 if outside."""
    if k < 0:
        return -1
    y = pix // W
    x = pix - y * W
    lx = x - x0[k]
    ly = y - y0[k]
    if lx < 0 or ly < 0 or lx >= w[k] or ly >= h[k]:
        return -1
    return offset[k] + ly * w[k] + lx


@njit(cache=True)
def _lookup_kernel(pid, pix, W, x0, y0, w, h, offset, gbuf):
    n = len(pid)
    out = np.empty((n, 4))
    for i in range(n):
        j = _locate(pid[i], pix[i], W, x0, y0, w, h, offset)
        for c in range(4):
            out[i, c] = np.nan if j < 0 else gbuf[j, c]
    return out


@njit(cache=True)
def _pair_kernel(a, b, p, q, W, x0, y0, w, h, offset, gbuf, missing):
    n = len(a)
    out = np.zeros(n)
    for i in range(n):
        if a[i] == b[i]:
            continue
        total = 0.0
        for pix in (p[i], q[i]):
            ja = _locate(a[i], pix, W, x0, y0, w, h, offset)
            jb = _locate(b[i], pix, W, x0, y0, w, h, offset)
            if ja < 0 or jb < 0:
                total = missing
                break
            for c in range(4):
                d = gbuf[ja, c] - gbuf[jb, c]
                total += d * d
        out[i] = total
    return out


class _Problem:
    """Precomputed covers, unaries, gradient lookups and active edges."""

    def __init__(self, layout: Layout, grads):
        L = layout
        if len(grads) != len(L):
            raise ValueError(f"{len(grads)} gradient fields for {len(L)} patches")
        H, W = L.height, L.width
        self.layout = L
        self.H, self.W = H, W
        cover = np.full((H, W, MAX_LABELS), -1, np.int32)
        unary = np.full((H, W, MAX_LABELS), np.inf)
        count = np.zeros((H, W), np.int32)
        for k in range(len(L)):
            x0, y0, w, h = L.rect(k)
            if grads[k].shape != (h, w):
                raise ValueError(f"patch {k}: gradient is {grads[k].shape}, layout expects {(h, w)}")
            sl = np.s_[y0:y0 + h, x0:x0 + w]
            slot = count[sl]
            if slot.max() >= MAX_LABELS:
                raise InfeasibleLabeling(f"more than {MAX_LABELS} patches overlap inside patch {k}")
            cost = np.zeros((h, w))
            if x0 + w < W:
                cost[:, -1] = TRIMMED_COST
            if y0 + h < H:
                cost[-1, :] = TRIMMED_COST
            yy, xx = np.mgrid[y0:y0 + h, x0:x0 + w]
            cover[yy, xx, slot] = k
            unary[yy, xx, slot] = cost
            count[sl] += 1
        if (count == 0).any():
            ys, xs = np.nonzero(count == 0)
            raise InfeasibleLabeling(f"pixel ({xs[0]}, {ys[0]}) is not covered by any patch")
        self.cover = cover.reshape(-1, MAX_LABELS)
        self.unary = unary.reshape(-1, MAX_LABELS)
        self.count = count.ravel()
        self._node = np.full(H * W, -1, np.int64)

        sizes = (L.w * L.h).astype(np.int64)
        self.offset = np.concatenate([[0], np.cumsum(sizes)[:-1]]).astype(np.int64)
        self.gbuf = np.concatenate([g.stacked().reshape(-1, 4) for g in grads]).astype(np.float64)

        idx = np.arange(H * W).reshape(H, W)
        ep = np.concatenate([idx[:, :-1].ravel(), idx[:-1, :].ravel()])
        eq = np.concatenate([idx[:, 1:].ravel(), idx[1:, :].ravel()])
        # drop edges whose cost is identically zero (one shared candidate)
        single = self.count == 1
        trivial = single[ep] & single[eq] & (self.cover[ep, 0] == self.cover[eq, 0])
        self.ep = ep[~trivial]
        self.eq = eq[~trivial]

    def lookup(self, pid, pix):
        """Gradient of patch ``pid`` at flat pixel ``pix``; NaN where undefined."""
        L = self.layout
        return _lookup_kernel(np.asarray(pid, np.int64), np.asarray(pix, np.int64), self.W,
                              L.x0, L.y0, L.w, L.h, self.offset, self.gbuf)

    def pair_cost(self, a, b, p, q):
        """Seam cost for neighbours ``p``, ``q`` taking patches ``a``, ``b``."""
        L = self.layout
        return _pair_kernel(np.asarray(a, np.int64), np.asarray(b, np.int64),
                            np.asarray(p, np.int64), np.asarray(q, np.int64), self.W,
                            L.x0, L.y0, L.w, L.h, self.offset, self.gbuf, MISSING_COST)

    def patches_of(self, labels):
        return self.cover[np.arange(len(labels)), labels]

    def energy(self, labels) -> float:
        pid = self.patches_of(labels)
        un = self.unary[np.arange(len(labels)), labels].sum()
        pw = self.pair_cost(pid[self.ep], pid[self.eq], self.ep, self.eq).sum()
        return float(un + pw)

    def initial_labels(self):
        """Nearest patch center among the cheapest covering labels."""
        cx, cy = self.layout.centers()
        y, x = np.divmod(np.arange(self.H * self.W), self.W)
        k = np.where(self.cover >= 0, self.cover, 0)
        d = (x[:, None] - cx[k]) ** 2 + (y[:, None] - cy[k]) ** 2
        best_unary = self.unary.min(1, keepdims=True)
        d = np.where(self.unary == best_unary, d, np.inf)
        return np.argmin(d, axis=1).astype(np.int64)

    def expand(self, labels, alpha):
        """Best alpha-expansion move from ``labels``; returns the new labels."""
        n = len(labels)
        idx, slot = self._move(labels, np.arange(n), np.full(n, alpha, np.int64), self.ep, self.eq)
        new = labels.copy()
        new[idx] = slot
        return new

    def patch_edges(self, k):
        """4-neighbour edges with at least one endpoint inside patch ``k``."""
        x0, y0, w, h = self.layout.rect(k)
        W, H = self.W, self.H
        ys, xs = np.mgrid[y0:y0 + h, max(x0 - 1, 0):min(x0 + w, W - 1)]
        hp = (ys * W + xs).ravel()
        ys, xs = np.mgrid[max(y0 - 1, 0):min(y0 + h, H - 1), x0:x0 + w]
        vp = (ys * W + xs).ravel()
        return np.concatenate([hp, vp]), np.concatenate([hp + 1, vp + W])

    def expand_patch(self, labels, k, tol=0.0):
        """Expansion move toward patch ``k`` inside its rectangle, in place.

        The move target is a patch rather than a slot, since one slot can
        resolve to different patches at different pixels. The move is kept
        only if it lowers the energy by more than ``tol``; returns the change.
        """
        x0, y0, w, h = self.layout.rect(k)
        ys, xs = np.mgrid[y0:y0 + h, x0:x0 + w]
        pix = (ys * self.W + xs).ravel()
        slot = np.argmax(self.cover[pix] == k, axis=1)
        ep, eq = self.patch_edges(k)
        idx, new_slot = self._move(labels, pix, slot, ep, eq)
        if len(idx) == 0:
            return 0.0
        before = self.local_energy(labels, pix, ep, eq)
        old_slot = labels[idx].copy()
        labels[idx] = new_slot
        delta = self.local_energy(labels, pix, ep, eq) - before
        if delta >= -tol:
            labels[idx] = old_slot
            return 0.0
        return delta

    def local_energy(self, labels, pix, ep, eq):
        a = self.cover[ep, labels[ep]]
        b = self.cover[eq, labels[eq]]
        return float(self.unary[pix, labels[pix]].sum() + self.pair_cost(a, b, ep, eq).sum())

    def _move(self, labels, pix, slot, ep, eq):
        """Solve the binary keep-or-switch move of pixels ``pix`` to slots ``slot``.

        Only edges ``ep``-``eq`` are considered; they must include every
        edge touching a pixel of ``pix``. Returns the switching pixels and
        their new slots.
        """
        cur = self.cover[pix, labels[pix]]
        alt = self.cover[pix, slot]
        ok = np.isfinite(self.unary[pix, slot]) & (alt != cur)
        if not ok.any():
            return pix[:0], slot[:0]
        fidx, fslot = pix[ok], slot[ok]
        node = self._node
        node[fidx] = np.arange(len(fidx))
        e0 = self.unary[fidx, labels[fidx]].astype(np.float64)
        e1 = self.unary[fidx, fslot].astype(np.float64)
        alt_of = alt[ok]

        np_, nq = node[ep], node[eq]
        fp, fq = np_ >= 0, nq >= 0
        cp = self.cover[ep, labels[ep]]
        cq = self.cover[eq, labels[eq]]

        # one endpoint free: fold into its unary
        m = fp & ~fq
        if m.any():
            p, q = ep[m], eq[m]
            np.add.at(e0, np_[m], self.pair_cost(cp[m], cq[m], p, q))
            np.add.at(e1, np_[m], self.pair_cost(alt_of[np_[m]], cq[m], p, q))
        m = fq & ~fp
        if m.any():
            p, q = ep[m], eq[m]
            np.add.at(e0, nq[m], self.pair_cost(cp[m], cq[m], p, q))
            np.add.at(e1, nq[m], self.pair_cost(cp[m], alt_of[nq[m]], p, q))

        m = fp & fq
        p, q = ep[m], eq[m]
        a, b = np_[m], nq[m]
        A = self.pair_cost(cp[m], cq[m], p, q)
        B = self.pair_cost(cp[m], alt_of[b], p, q)
        C = self.pair_cost(alt_of[a], cq[m], p, q)
        D = self.pair_cost(alt_of[a], alt_of[b], p, q)
        # squared costs can break submodularity; inflate the split terms
        excess = np.maximum(A + D - B - C, 0.0)
        B = B + 0.5 * excess
        C = C + 0.5 * excess
        np.add.at(e1, a, C - A)
        np.add.at(e1, b, D - C)
        w = B + C - A - D
        node[fidx] = -1

        lo = np.minimum(e0, e1)
        src_cap = e1 - lo      # paid when the node switches
        snk_cap = e0 - lo      # paid when it keeps its label
        _, in_sink = maxflow(len(fidx), a, b, np.maximum(w, 0.0), np.zeros(len(w)), src_cap, snk_cap)
        return fidx[in_sink], fslot[in_sink]


def _grown(layout, k):
    """Patch rectangle grown by one pixel, clipped, as ``(xa, ya, xb, yb)``."""
    x0, y0, w, h = layout.rect(k)
    return (max(x0 - 1, 0), max(y0 - 1, 0), min(x0 + w + 1, layout.width),
            min(y0 + h + 1, layout.height))


def _intersects(layout, ring, k):
    """Patches whose grown rectangle meets patch ``k``."""
    x0, y0, w, h = layout.rect(k)
    r = np.asarray(ring)
    return (r[:, 0] < x0 + w) & (r[:, 2] > x0) & (r[:, 1] < y0 + h) & (r[:, 3] > y0)


def _touched(changed, ring):
    """Patches whose grown rectangle contains a changed pixel."""
    ii = np.zeros((changed.shape[0] + 1, changed.shape[1] + 1), np.int64)
    ii[1:, 1:] = changed.cumsum(0).cumsum(1)
    r = np.asarray(ring)
    xa, ya, xb, yb = r[:, 0], r[:, 1], r[:, 2], r[:, 3]
    return (ii[yb, xb] - ii[ya, xb] - ii[yb, xa] + ii[ya, xa]) > 0


def optimize_indices(grid, grads, max_cycles=MAX_CYCLES) -> IndexMap:
    """Choose one covering patch per pixel by alpha-expansion."""
    layout = as_layout(grid)
    prob = _Problem(layout, grads)
    labels = prob.initial_labels()
    if not np.isfinite(prob.unary[np.arange(len(labels)), labels]).all():
        raise InfeasibleLabeling("initial labelling uses a non-covering patch")
    energy = e_init = prob.energy(labels)
    # a patch move only changes if labels in its rectangle or 1-pixel ring changed
    K = len(layout)
    ring = [_grown(layout, k) for k in range(K)]
    neighbours = [np.nonzero(_intersects(layout, ring, k))[0] for k in range(K)]
    dirty = np.ones(K, bool)
    cycles = 0
    while cycles < max_cycles and energy > 0.0:
        cycles += 1
        improved = False
        for alpha in range(MAX_LABELS):
            cand = prob.expand(labels, alpha)
            e = prob.energy(cand)
            if e < energy - 1e-12 * max(1.0, abs(energy)):
                changed = (cand != labels).reshape(layout.height, layout.width)
                dirty |= _touched(changed, ring)
                labels, energy, improved = cand, e, True
        for k in range(K):
            if not dirty[k]:
                continue
            dirty[k] = False
            delta = prob.expand_patch(labels, k, 1e-12 * max(1.0, abs(energy)))
            if delta < 0.0:
                energy += delta
                improved = True
                dirty[neighbours[k]] = True
                dirty[k] = False
        if improved:
            energy = prob.energy(labels)
        log.debug("expansion cycle %d: energy %.6g", cycles, energy)
        if not improved:
            break
    pid = prob.patches_of(labels)
    shape = (layout.height, layout.width)
    return IndexMap(layout.width, layout.height, labels.reshape(shape).astype(np.int8),
                    pid.reshape(shape).astype(np.int32), energy, e_init, cycles)


def labeling_energy(grid, grads, labels) -> float:
    """Seam energy of an explicit ``(H, W)`` label array."""
    prob = _Problem(as_layout(grid), grads)
    return prob.energy(np.asarray(labels, np.int64).ravel())


def assemble_gradient(grid, grads, idx: IndexMap) -> GradientField:
    """Read each pixel's gradient from the patch chosen for it."""
    prob = _Problem(as_layout(grid), grads)
    pid = idx.patch_id.ravel().astype(np.int64)
    g = prob.lookup(pid, np.arange(len(pid)))
    if np.isnan(g).any():
        raise InfeasibleLabeling("index map selects a patch that does not cover its pixel")
    return GradientField.from_stacked(g.reshape(idx.height, idx.width, 4).astype(np.float32))


def stitch(grid, grads, max_cycles=MAX_CYCLES):
    """Optimize indices and assemble the full-image gradient in one call."""
    idx = optimize_indices(grid, grads, max_cycles)
    return idx, assemble_gradient(grid, grads, idx)


def mask_from_patches(grid, flows, idx: IndexMap) -> np.ndarray:
    """Validity of each pixel according to the patch it was assigned."""
    layout = as_layout(grid)
    out = np.zeros((layout.height, layout.width), bool)
    for k, f in enumerate(flows):
        x0, y0, w, h = layout.rect(k)
        sel = idx.patch_id[y0:y0 + h, x0:x0 + w] == k
        m = f.mask if isinstance(f, FlowField) else f
        out[y0:y0 + h, x0:x0 + w][sel] = m[sel]
    return out


def difference_validity(grid, flows, idx: IndexMap):
    """Whether each assembled x / y difference joins two valid samples of its patch.

    A difference is valid when both of its pixels lie inside the chosen patch
    and are masked in there.
    """
    layout = as_layout(grid)
    vx = np.zeros((layout.height, layout.width), bool)
    vy = np.zeros_like(vx)
    for k, f in enumerate(flows):
        x0, y0, w, h = layout.rect(k)
        m = f.mask if isinstance(f, FlowField) else np.asarray(f, bool)
        sel = idx.patch_id[y0:y0 + h, x0:x0 + w] == k
        ok_x = np.zeros((h, w), bool)
        ok_x[:, :-1] = m[:, :-1] & m[:, 1:]
        ok_y = np.zeros((h, w), bool)
        ok_y[:-1, :] = m[:-1, :] & m[1:, :]
        vx[y0:y0 + h, x0:x0 + w][sel] = ok_x[sel]
        vy[y0:y0 + h, x0:x0 + w][sel] = ok_y[sel]
    return vx, vy
