import numpy as np
import pytest

from docpatch.errors import DimensionMismatch, EmptyMaskError, MissingExternalFile, MissingGroundTruth
from docpatch.flowest import EstimatorConfig, epe, estimate_patches, external_name
from docpatch.imagecore import FlowField, save_flow
from docpatch.patching import build_grid


def _gt(w=200, h=160, seed=0):
    r = np.random.default_rng(seed)
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    return FlowField(3 * np.sin(xs / 40) + r.normal(0, 0.1, (h, w)), 0.02 * ys * xs / w)


def test_oracle_zero_flow():
    g = build_grid(200, 160, 64)
    est = estimate_patches(None, g, EstimatorConfig(), FlowField.zeros(200, 160))
    assert len(est) == len(g)
    assert all(not e.flow.u.any() and not e.flow.v.any() for e in est)


def test_oracle_is_centered_crop():
    gt = _gt()
    g = build_grid(200, 160, 64)
    for spec, e in zip(g, estimate_patches(None, g, EstimatorConfig(), gt)):
        crop = gt.u[spec.origin_y:spec.origin_y + 64, spec.origin_x:spec.origin_x + 64]
        assert np.allclose(e.flow.u, crop - crop[32, 32], atol=1e-5)
        assert e.flow.u[32, 32] == 0 and e.flow.v[32, 32] == 0
        assert e.center == (32, 32)


def test_offset_only_noise_equals_oracle_exactly():
    gt = _gt()
    g = build_grid(200, 160, 64)
    a = estimate_patches(None, g, EstimatorConfig(), gt)
    b = estimate_patches(None, g, EstimatorConfig("noisy-oracle", 0.0, 5.0, 3), gt)
    for x, y in zip(a, b):
        assert np.array_equal(x.flow.u, y.flow.u) and np.array_equal(x.flow.v, y.flow.v)


def test_noisy_oracle_statistics_and_determinism():
    gt = FlowField.zeros(256, 256)
    g = build_grid(256, 256, 96)
    cfg = EstimatorConfig("noisy-oracle", 2.0, 0.0, 9)
    a = estimate_patches(None, g, cfg, gt)
    b = estimate_patches(None, g, cfg, gt)
    for x, y in zip(a, b):
        assert np.array_equal(x.flow.u, y.flow.u)
    # within a patch the center subtraction is a constant, so the spread is sigma
    assert np.mean([np.std(e.flow.u) for e in a]) == pytest.approx(2.0, rel=0.03)


def test_oracle_errors(tmp_path):
    g = build_grid(200, 160, 64)
    with pytest.raises(MissingGroundTruth):
        estimate_patches(None, g, EstimatorConfig())
    with pytest.raises(DimensionMismatch):
        estimate_patches(None, g, EstimatorConfig(), FlowField.zeros(100, 100))
    with pytest.raises(MissingExternalFile):
        estimate_patches(None, g, EstimatorConfig("external", external_dir=str(tmp_path)))
    with pytest.raises(ValueError):
        EstimatorConfig("cnn")
    with pytest.raises(ValueError):
        EstimatorConfig(noise_sigma=-1)


def test_external_reads_files(tmp_path):
    gt = _gt()
    g = build_grid(200, 160, 64)
    for spec in g:
        save_flow(gt.crop(spec.origin_x, spec.origin_y, 64, 64), tmp_path / external_name(spec))
    ext = estimate_patches(None, g, EstimatorConfig("external", external_dir=str(tmp_path)))
    ora = estimate_patches(None, g, EstimatorConfig(), gt)
    for x, y in zip(ext, ora):
        assert np.array_equal(x.flow.u, y.flow.u)
    assert external_name(g[1]) == "patch_0_1.dfl"


def test_epe_examples(rng):
    a = FlowField(rng.normal(size=(5, 6)), rng.normal(size=(5, 6)))
    assert epe(a, a) == 0
    assert epe(a, a.shifted(3, 4)) == pytest.approx(5.0, abs=1e-5)
    b = FlowField(rng.normal(size=(4, 4)), rng.normal(size=(4, 4)))
    c = FlowField(rng.normal(size=(4, 4)), rng.normal(size=(4, 4)))
    total = 0.0
    for y in range(4):
        for x in range(4):
            total += ((float(b.u[y, x]) - float(c.u[y, x])) ** 2
                      + (float(b.v[y, x]) - float(c.v[y, x])) ** 2) ** 0.5
    assert epe(b, c) == pytest.approx(total / 16, rel=1e-6)
    assert epe(b, c) == pytest.approx(epe(c, b))
    assert epe(b.shifted(2, 1), c.shifted(2, 1)) == pytest.approx(epe(b, c), abs=1e-5)


def test_epe_errors():
    with pytest.raises(DimensionMismatch):
        epe(FlowField.zeros(3, 3), FlowField.zeros(4, 3))
    z = np.zeros((3, 3))
    with pytest.raises(EmptyMaskError):
        epe(FlowField(z, z, np.zeros((3, 3), bool)), FlowField(z, z))
