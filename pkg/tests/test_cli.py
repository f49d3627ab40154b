import json

import numpy as np
import pytest

from docpatch import __version__
from docpatch.cli import EXIT_OK, EXIT_PROCESSING, EXIT_USAGE, main
from docpatch.imagecore import load_flow, load_image
from docpatch.metrics import strip_runtime

W, H = 384, 512


def _gen(out, count=1, magnitude=0.4, seed=0, kinds="curved"):
    return main(["gen-dataset", "--out-dir", str(out), "--count", str(count), "--kinds", kinds,
                 "--magnitude", str(magnitude), "--seed", str(seed),
                 "--width", str(W), "--height", str(H)])


@pytest.fixture(scope="module")
def small_cfg(tmp_path_factory):
    p = tmp_path_factory.mktemp("cfg") / "cfg.json"
    p.write_text(json.dumps({"processing_width": W}))
    return p


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    out = tmp_path_factory.mktemp("ds")
    assert _gen(out, count=5, kinds="perspective,curved,folded", seed=4) == EXIT_OK
    return out


def test_version(capsys):
    assert main(["--version"]) == EXIT_OK
    assert capsys.readouterr().out.strip() == f"docpatch {__version__}"


def test_unknown_flag_lists_valid_flags(capsys):
    assert main(["rectify", "--input", "a.png", "--output", "b.png", "--bogus"]) == EXIT_USAGE
    err = capsys.readouterr().err
    assert "--bogus" in err and "valid flags" in err and "--gt-flow" in err


@pytest.mark.parametrize("argv", [
    [],
    ["gen-dataset", "--out-dir", "x", "--count", "0"],
    ["gen-dataset", "--out-dir", "x", "--count", "2", "--kinds", "twisted"],
    ["gen-dataset", "--out-dir", "x", "--count", "2", "--magnitude", "1.5"],
    ["rectify", "--input", "a.png", "--output", "b.png", "--estimator", "external"],
    ["rectify", "--input", "a.png", "--output", "b.png", "--downsample", "3"],
    ["--threads", "-1", "gen-dataset", "--out-dir", "x", "--count", "1"],
])
def test_usage_errors(argv, capsys):
    assert main(argv) == EXIT_USAGE


def test_processing_error_exit_code(tmp_path, capsys):
    rc = main(["rectify", "--input", str(tmp_path / "missing.png"), "--output", str(tmp_path / "o.png")])
    assert rc == EXIT_PROCESSING
    assert "rectify" in capsys.readouterr().err


def test_oracle_without_gt_is_processing_error(tmp_path, small_cfg):
    _gen(tmp_path)
    rc = main(["rectify", "--input", str(tmp_path / "sample_0000_img.png"), "--config", str(small_cfg),
               "--output", str(tmp_path / "o.png")])
    assert rc == EXIT_PROCESSING


def test_gen_dataset_files(tmp_path):
    assert _gen(tmp_path, count=3, kinds="perspective,folded") == EXIT_OK
    for i in range(3):
        for suffix in ("img.png", "flat.png", "flow.dfl", "flowvis.png", "manifest.json"):
            assert (tmp_path / f"sample_{i:04d}_{suffix}").exists()
    kinds = [json.loads((tmp_path / f"sample_{i:04d}_manifest.json").read_text())["spec"]["kind"]
             for i in range(3)]
    assert kinds == ["perspective", "folded", "perspective"]
    assert load_image(tmp_path / "sample_0000_img.png").width == W


def test_zero_magnitude_round_trip(tmp_path, small_cfg):
    _gen(tmp_path, magnitude=0.0)
    out = tmp_path / "rect.png"
    rc = main(["rectify", "--input", str(tmp_path / "sample_0000_img.png"),
               "--gt-flow", str(tmp_path / "sample_0000_flow.dfl"), "--config", str(small_cfg),
               "--output", str(out), "--flow-out", str(tmp_path / "f.dfl"),
               "--diagnostics", str(tmp_path / "d.json")])
    assert rc == EXIT_OK
    a = load_image(out).data
    b = load_image(tmp_path / "sample_0000_img.png").data
    mse = float(np.mean((a - b) ** 2))
    assert mse == 0 or 10 * np.log10(1 / mse) >= 50
    flow = load_flow(tmp_path / "f.dfl")
    assert np.abs(flow.u).max() < 1e-3
    diag = json.loads((tmp_path / "d.json").read_text())
    assert diag["processing_size"] == [W, H]


def test_flags_override_config(tmp_path, small_cfg):
    _gen(tmp_path)
    rc = main(["rectify", "--input", str(tmp_path / "sample_0000_img.png"),
               "--gt-flow", str(tmp_path / "sample_0000_flow.dfl"), "--config", str(small_cfg),
               "--estimator", "noisy-oracle", "--seed", "5", "--downsample", "2", "--illum", "binarize",
               "--output", str(tmp_path / "o.png"), "--diagnostics", str(tmp_path / "d.json")])
    assert rc == EXIT_OK
    assert load_image(tmp_path / "o.png").channels == 1


def test_evaluate_reports_every_sample(dataset, small_cfg, tmp_path, capsys):
    report, table = tmp_path / "r.json", tmp_path / "t.txt"
    rc = main(["evaluate", "--dataset", str(dataset), "--config", str(small_cfg),
               "--report", str(report), "--table", str(table)])
    assert rc == EXIT_OK
    r = json.loads(report.read_text())
    assert r["samples"] == 5 and len(r["rows"]) == 5
    assert r["epe"] <= 1.0
    assert r["ocr_accuracy"] is None
    printed = capsys.readouterr().out
    assert printed.strip() == table.read_text().strip()
    assert len(printed.strip().splitlines()) == 7


def test_evaluate_with_ocr_sidecars(dataset, small_cfg, tmp_path):
    import shutil
    ds = tmp_path / "ds"
    shutil.copytree(dataset, ds)
    (ds / "sample_0000_truth.txt").write_text("abcd")
    (ds / "sample_0000_ocr.txt").write_text("abcf")
    report = tmp_path / "r.json"
    assert main(["evaluate", "--dataset", str(ds), "--config", str(small_cfg),
                 "--report", str(report)]) == EXIT_OK
    r = json.loads(report.read_text())
    assert r["rows"][0]["ocr_accuracy"] == 75.0
    assert r["ocr_accuracy"] == 75.0


def test_evaluate_empty_dataset(tmp_path):
    assert main(["evaluate", "--dataset", str(tmp_path), "--report", str(tmp_path / "r.json")]) \
        == EXIT_PROCESSING


def test_stitch_debug_outputs(tmp_path, small_cfg):
    _gen(tmp_path, kinds="folded")
    out = tmp_path / "dbg"
    rc = main(["stitch-debug", "--input", str(tmp_path / "sample_0000_img.png"),
               "--gt-flow", str(tmp_path / "sample_0000_flow.dfl"), "--config", str(small_cfg),
               "--downsample", "1", "--out-dir", str(out)])
    assert rc == EXIT_OK
    idx = load_image(out / "index_map.png")
    assert (idx.width, idx.height) == (W, H)
    for name in ("gx_u", "gy_u", "gx_v", "gy_v"):
        assert (out / f"gradient_{name}.png").exists()
    assert load_flow(out / "flow.dfl").shape == (H, W)
    d = json.loads((out / "diagnostics.json").read_text())
    assert d["energy_final"] <= d["energy_initial"] + 1e-9


def _files(d):
    return {p.name: p.read_bytes() for p in sorted(d.iterdir()) if p.is_file()}


def test_commands_are_deterministic(tmp_path, small_cfg):
    runs = []
    for k in range(2):
        root = tmp_path / f"run{k}"
        root.mkdir()
        ds = root / "ds"
        assert _gen(ds, count=3, kinds="perspective,curved,folded", seed=11) == EXIT_OK
        common = ["--input", str(ds / "sample_0001_img.png"), "--gt-flow", str(ds / "sample_0001_flow.dfl"),
                  "--config", str(small_cfg), "--estimator", "noisy-oracle", "--seed", "2"]
        assert main(["rectify", *common, "--output", str(root / "o.png"),
                     "--flow-out", str(root / "f.dfl")]) == EXIT_OK
        assert main(["stitch-debug", *common, "--out-dir", str(root / "dbg")]) == EXIT_OK
        assert main(["evaluate", "--dataset", str(ds), "--config", str(small_cfg),
                     "--report", str(root / "r.json")]) == EXIT_OK
        dbg = _files(root / "dbg")
        dbg["diagnostics.json"] = {k: v for k, v in json.loads(dbg["diagnostics.json"]).items()
                                   if not k.startswith("time")}
        runs.append((_files(ds), (root / "o.png").read_bytes(), (root / "f.dfl").read_bytes(), dbg,
                     strip_runtime(json.loads((root / "r.json").read_text()))))
    a, b = runs
    assert a == b
