import numpy as np
import pytest

from docpatch.errors import CenterInvalidError, SizeError
from docpatch.imagecore import FlowField, RasterImage, gradient
from docpatch.patching import (build_grid, extract_patch, nearest_valid_center, patch_origins,
                               rereference_flow, resize_bilinear)


def test_grid_1200x1600():
    g = build_grid(1200, 1600, 96)
    assert g.stride == 72
    xs = sorted({p.origin_x for p in g})
    assert xs[:4] == [0, 72, 144, 216]
    assert xs[-1] == 1104
    assert [p.origin_y for p in g][-1] == 1600 - 96


def test_grid_single_patch_and_too_big():
    g = build_grid(96, 96, 96)
    assert len(g) == 1 and (g[0].origin_x, g[0].origin_y) == (0, 0)
    with pytest.raises(SizeError):
        build_grid(100, 100, 128)
    with pytest.raises(SizeError):
        build_grid(100, 100, 4)


@pytest.mark.parametrize("w,h,s", [(100, 100, 96), (300, 257, 40), (123, 456, 17), (96, 500, 96),
                                   (211, 199, 8), (1000, 1000, 96), (150, 170, 60)])
def test_coverage_between_one_and_four(w, h, s):
    g = build_grid(w, h, s)
    cov = np.zeros((h, w), int)
    for p in g:
        assert 0 <= p.origin_x and p.origin_x + p.size <= w
        assert 0 <= p.origin_y and p.origin_y + p.size <= h
        cov[p.origin_y:p.origin_y + s, p.origin_x:p.origin_x + s] += 1
    assert cov.min() >= 1 and cov.max() <= 4
    assert np.array_equal(cov, g.coverage())
    keys = [(p.origin_y, p.origin_x) for p in g]
    assert keys == sorted(keys)


def test_origins_rule_brute_force(rng):
    for _ in range(200):
        s = int(rng.integers(8, 60))
        n = int(rng.integers(s, 400))
        stride = int(round(0.75 * s))
        o = patch_origins(n, s, stride)
        assert o[0] == 0 and o[-1] == n - s
        assert all(b > a for a, b in zip(o, o[1:]))
        cov = np.zeros(n, int)
        for a in o:
            cov[a:a + s] += 1
        assert cov.min() >= 1 and cov.max() <= 2


def test_global_patch_geometry():
    g = build_grid(480, 480, 96)
    interior = [p for p in g if p.origin_x >= 48 and p.origin_x + 144 <= 480
                and p.origin_y >= 48 and p.origin_y + 144 <= 480][0]
    assert interior.global_origin_x == interior.origin_x - 48
    assert interior.global_width == interior.global_height == 192 == interior.global_size
    corner = g[0]
    assert (corner.global_origin_x, corner.global_origin_y) == (0, 0)
    assert corner.global_width == 144


def test_extract_patch():
    ys, xs = np.mgrid[0:300, 0:200].astype(np.float32)
    img = RasterImage(np.stack([xs / 200, ys / 300, xs * 0], -1))
    g = build_grid(200, 300, 96)
    local, glob = extract_patch(img, g[0])
    assert np.array_equal(local.data, img.data[:96, :96])
    assert (glob.width, glob.height) == (256, 256)
    local, glob = extract_patch(img, g[0], global_resolution=64)
    assert glob.width == 64


def test_resize_bilinear_linear_ramp():
    x = np.tile(np.arange(8, dtype=np.float32), (4, 1))
    out = resize_bilinear(x, 4, 16)
    # pixel-center alignment: output column j samples (j + 0.5) / 2 - 0.5
    expected = np.clip((np.arange(16) + 0.5) / 2 - 0.5, 0, 7)
    assert np.allclose(out[0], expected)


def test_rereference_examples():
    f = FlowField(np.full((6, 6), 5.0), np.full((6, 6), -3.0))
    r = rereference_flow(f)
    assert not r.u.any() and not r.v.any()
    x = np.tile(np.arange(5.0), (5, 1))
    r = rereference_flow(FlowField(x, x.T))
    assert np.array_equal(r.u, x - 2)
    assert r.u[2, 2] == 0 and r.v[2, 2] == 0
    assert np.array_equal(rereference_flow(r).u, r.u)
    m = np.ones((5, 5), bool)
    m[2, 2] = False
    with pytest.raises(CenterInvalidError):
        rereference_flow(FlowField(x, x, m))


def test_rereference_properties(rng):
    f = FlowField(rng.normal(size=(8, 8)), rng.normal(size=(8, 8)))
    r = rereference_flow(f)
    assert np.allclose(rereference_flow(f.shifted(3.5, -1.25)).u, r.u, atol=1e-5)
    assert np.allclose(gradient(r).stacked(), gradient(f).stacked(), atol=1e-5)


def test_nearest_valid_center():
    m = np.zeros((5, 5), bool)
    assert nearest_valid_center(m) is None
    m[0, 4] = True
    m[3, 3] = True
    assert nearest_valid_center(m) == (3, 3)
