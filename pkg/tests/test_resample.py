import numpy as np
import pytest
from scipy import ndimage

from docpatch.errors import DimensionMismatch
from docpatch.imagecore import FlowField, RasterImage
from docpatch.resample import (DIVERGED, MASKED, OK, OUT_OF_BOUNDS, ResampleOptions, backward_map,
                               inverse_map, rectify_image, sample)


def _img(h, w, seed=0):
    return RasterImage(np.random.default_rng(seed).random((h, w, 3)).astype(np.float32))


def _sin_flow(w, h, amp=0.3):
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    return FlowField(amp * 8 * np.sin(xs / 8) * np.cos(ys / 11), amp * 6 * np.cos(xs / 9 + ys / 6))


def test_zero_flow_identity():
    src = _img(20, 30)
    out = rectify_image(src, FlowField.zeros(30, 20))
    assert np.array_equal(out.data, src.data)
    (px, py), ok, it = backward_map(FlowField.zeros(30, 20), (4.5, 7.25))
    assert (px, py) == (4.5, 7.25) and ok and it == 1


def test_constant_flow_fixed_point():
    f = FlowField(np.full((40, 60), 3.0), np.full((40, 60), -2.0))
    (px, py), ok, it = backward_map(f, (20.0, 10.0))
    assert (px, py) == (17.0, 12.0) and ok and it == 2


def test_constant_shift_moves_content():
    # rectified position = p + F(p): content moves by +10 in x, the left band has no source
    src = _img(16, 50)
    out, inv = rectify_image(src, FlowField(np.full((16, 50), 10.0), np.zeros((16, 50))),
                             return_map=True)
    assert np.array_equal(out.data[:, 10:], src.data[:, :-10])
    assert np.all(out.data[:, :10] == 1.0)
    assert np.all(inv.status[:, :10] == OUT_OF_BOUNDS)


def test_sin_field_against_dense_inversion():
    W = H = 64
    f = _sin_flow(W, H)
    opts = ResampleOptions(max_iterations=32, tolerance=0.05)
    # oracle: forward-map a dense 0.1 px lattice with an independent interpolant
    ys, xs = np.mgrid[0:H - 1:0.1, 0:W - 1:0.1]
    fu = ndimage.map_coordinates(f.u.astype(np.float64), [ys, xs], order=1)
    fv = ndimage.map_coordinates(f.v.astype(np.float64), [ys, xs], order=1)
    fx, fy = xs + fu, ys + fv
    r = np.random.default_rng(0)
    for qx, qy in r.uniform(12, 52, (40, 2)):
        (px, py), ok, _ = backward_map(f, (qx, qy), opts)
        assert ok
        u = ndimage.map_coordinates(f.u.astype(np.float64), [[py], [px]], order=1)[0]
        v = ndimage.map_coordinates(f.v.astype(np.float64), [[py], [px]], order=1)[0]
        assert np.hypot(px + u - qx, py + v - qy) <= 2 * opts.tolerance
        k = np.argmin((fx - qx) ** 2 + (fy - qy) ** 2)
        assert np.hypot(px - xs.flat[k], py - ys.flat[k]) <= 0.25


def test_contraction_converges_everywhere_inside():
    f = _sin_flow(120, 90, amp=0.35)
    g = np.abs(np.gradient(f.u)).max() + np.abs(np.gradient(f.v)).max()
    assert g < 1
    inv = inverse_map(f)
    interior = inv.status[5:-5, 5:-5]
    assert not (interior == DIVERGED).any()
    assert inv.iterations.max() <= 32


def test_translation_equivariance():
    big = _img(60, 80, 3)
    f = _sin_flow(80, 60, 0.2)
    t = 7
    a = rectify_image(RasterImage(big.data[:, :70]), f.crop(0, 0, 70, 60))
    b = rectify_image(RasterImage(big.data[:, t:t + 70]), f.crop(t, 0, 70, 60))
    # b(q) = a(q + t) away from the borders
    assert np.allclose(b.data[10:-10, 10:50], a.data[10:-10, 10 + t:50 + t], atol=1e-5)


def test_masked_source_gets_fill():
    m = np.ones((10, 10), bool)
    m[4:6, 4:6] = False
    f = FlowField(np.zeros((10, 10)), np.zeros((10, 10)), m)
    out, inv = rectify_image(_img(10, 10), f, ResampleOptions(fill=(0.0, 0.5, 1.0)), return_map=True)
    assert np.all(inv.status[4:6, 4:6] == MASKED)
    assert np.all(out.data[4, 4] == [0.0, 0.5, 1.0])
    assert np.all(inv.status[m] == OK) and inv.diverged == 0


def test_sample_and_errors():
    src = RasterImage(np.arange(12, dtype=np.float32).reshape(3, 4) / 12)
    out = sample(src, np.array([[0.5]]), np.array([[1.0]]))
    assert out.data[0, 0, 0] == pytest.approx((4.5) / 12)
    with pytest.raises(DimensionMismatch):
        rectify_image(_img(5, 5), FlowField.zeros(6, 5))
    with pytest.raises(ValueError):
        ResampleOptions(max_iterations=0)
    with pytest.raises(ValueError):
        ResampleOptions(tolerance=0)
