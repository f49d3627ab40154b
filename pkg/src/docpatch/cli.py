"""Command-line interface: ``docpatch <command> [flags]``.

Exit codes: 0 success, 1 usage error, 2 processing error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .errors import DocPatchError

log = logging.getLogger("docpatch")

EXIT_OK, EXIT_USAGE, EXIT_PROCESSING = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """Raises instead of exiting, and lists the valid flags on error."""

    def error(self, message):
        flags = sorted({s for a in self._actions for s in a.option_strings})
        raise UsageError(f"{self.prog}: {message}\nvalid flags: {' '.join(flags)}")


def _add_pipeline_flags(p):
    p.add_argument("--input", required=True, help="distorted input image (PNG)")
    p.add_argument("--config", help="PipelineConfig JSON; flags override it")
    p.add_argument("--gt-flow", help="ground-truth flow (.dfl) for the oracle estimators")
    p.add_argument("--estimator", choices=["oracle", "noisy-oracle", "external"])
    p.add_argument("--external-dir", help="directory of patch_<row>_<col>.dfl files")
    p.add_argument("--seed", type=int, help="estimator seed")
    p.add_argument("--downsample", type=int, choices=[1, 2, 4], help="solver downsample factor")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="docpatch", description="Patch-based document rectification.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--threads", type=int, default=0, help="worker threads, 0 = all cores")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    parser.commands = sub.choices

    p = sub.add_parser("rectify", help="rectify one image")
    _add_pipeline_flags(p)
    p.add_argument("--output", required=True, help="rectified image (PNG)")
    p.add_argument("--flow-out", help="write the reconstructed flow (.dfl)")
    p.add_argument("--illum", choices=["none", "binarize", "deshade", "external"])
    p.add_argument("--illum-dir", help="directory of patch_<row>_<col>.png for --illum external")
    p.add_argument("--diagnostics", help="write per-stage diagnostics JSON")

    p = sub.add_parser("gen-dataset", help="generate synthetic distorted samples")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--kinds", default="perspective,curved,folded")
    p.add_argument("--magnitude", type=float, default=0.4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--width", type=int, default=1200)
    p.add_argument("--height", type=int, default=1600)

    p = sub.add_parser("evaluate", help="score the pipeline on a dataset")
    p.add_argument("--dataset", required=True)
    p.add_argument("--config", help="PipelineConfig JSON")
    p.add_argument("--report", required=True, help="report JSON path")
    p.add_argument("--table", help="also write an aligned text table here")
    p.add_argument("--ocr-cmd", help="command printing recognized text; {image} is the image path")

    p = sub.add_parser("stitch-debug", help="dump the index map and gradient previews")
    _add_pipeline_flags(p)
    p.add_argument("--out-dir", required=True)
    return parser


def _validate(args):
    if args.command is None:
        raise UsageError("docpatch: a command is required (rectify, gen-dataset, evaluate, stitch-debug)")
    if args.threads < 0:
        raise UsageError("--threads must be >= 0")
    if args.command == "gen-dataset":
        from .synthgen import KINDS
        kinds = [k.strip() for k in args.kinds.split(",") if k.strip()]
        bad = [k for k in kinds if k not in KINDS]
        if not kinds or bad:
            raise UsageError(f"--kinds: invalid kind(s) {bad}; choose from {','.join(KINDS)}")
        args.kinds = tuple(kinds)
        if args.count < 1:
            raise UsageError("--count must be >= 1")
        if not 0.0 <= args.magnitude <= 1.0:
            raise UsageError("--magnitude must lie in [0, 1]")
    if args.command in ("rectify", "stitch-debug"):
        est = args.estimator
        if est == "external" and not args.external_dir and not args.config:
            raise UsageError("--estimator external requires --external-dir")
        if getattr(args, "illum", None) == "external" and not args.illum_dir and not args.config:
            raise UsageError("--illum external requires --illum-dir")


def _config(args):
    from .flowest import EstimatorConfig
    from .pipeline import PipelineConfig
    from .poisson import SolverOptions

    cfg = PipelineConfig.from_json(args.config) if args.config else PipelineConfig()
    est = cfg.estimator
    est = EstimatorConfig(args.estimator or est.kind, est.noise_sigma, est.offset_sigma,
                          est.seed if args.seed is None else args.seed,
                          args.external_dir or est.external_dir)
    changes = {"estimator": est}
    if args.downsample:
        s = cfg.solver
        changes["solver"] = SolverOptions(s.tolerance, s.max_iterations, args.downsample, s.preconditioner)
    if getattr(args, "illum", None):
        changes["illum_mode"] = args.illum
    if getattr(args, "illum_dir", None):
        changes["illum_dir"] = args.illum_dir
    return cfg.replace(**changes)


def _load_inputs(args):
    from .imagecore import load_flow, load_image

    img = load_image(args.input)
    gt = load_flow(args.gt_flow) if args.gt_flow else None
    return img, gt


def cmd_rectify(args):
    from .imagecore import save_flow, save_image
    from .pipeline import rectify

    cfg = _config(args)
    img, gt = _load_inputs(args)
    out, flow, diag = rectify(img, cfg, gt)
    save_image(out, args.output)
    if args.flow_out:
        save_flow(flow, args.flow_out)
    if args.diagnostics:
        Path(args.diagnostics).write_text(json.dumps(diag, indent=2, sort_keys=True))
    log.info("wrote %s (%d diverged pixels)", args.output, diag["diverged_pixels"])


def cmd_gen_dataset(args):
    from .synthgen import generate_dataset

    generate_dataset(args.out_dir, args.count, args.kinds, args.magnitude, args.seed,
                     args.width, args.height)
    log.info("wrote %d samples to %s", args.count, args.out_dir)


def cmd_evaluate(args):
    from .metrics import evaluate_pipeline
    from .pipeline import PipelineConfig

    cfg = PipelineConfig.from_json(args.config) if args.config else PipelineConfig()
    report = evaluate_pipeline(args.dataset, cfg, args.ocr_cmd)
    Path(args.report).write_text(report.to_json())
    if args.table:
        Path(args.table).write_text(report.table() + "\n")
    print(report.table())


def _preview(a):
    """Signed field to an RGB image: grey at zero, symmetric scale."""
    from .imagecore import RasterImage

    scale = float(np.abs(a).max()) or 1.0
    g = np.clip(0.5 + 0.5 * a / scale, 0.0, 1.0).astype(np.float32)
    return RasterImage(np.repeat(g[:, :, None], 3, axis=2))


def cmd_stitch_debug(args):
    from .flowest import estimate_patches
    from .imagecore import RasterImage, gradient, save_flow, save_image
    from .patching import build_grid
    from .pipeline import processing_size, reconstruct_flow, resize_flow, resize_image

    cfg = _config(args)
    img, gt = _load_inputs(args)
    W, H = processing_size(img.width, img.height, cfg.processing_width)
    img = resize_image(img, W, H)
    gt = resize_flow(gt, W, H) if gt is not None else None
    grid = build_grid(W, H, cfg.patch_size)
    estimates = estimate_patches(img, grid, cfg.estimator, gt)
    diag = {}
    flow, idx = reconstruct_flow(grid, estimates, cfg, diag)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_image(RasterImage(idx.to_rgb().astype(np.float32) / 255.0), out / "index_map.png")
    g = gradient(flow)
    for name in ("gx_u", "gy_u", "gx_v", "gy_v"):
        save_image(_preview(getattr(g, name)), out / f"gradient_{name}.png")
    save_flow(flow, out / "flow.dfl")
    (out / "diagnostics.json").write_text(json.dumps(diag, indent=2, sort_keys=True))


COMMANDS = {"rectify": cmd_rectify, "gen-dataset": cmd_gen_dataset,
            "evaluate": cmd_evaluate, "stitch-debug": cmd_stitch_debug}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args, extra = parser.parse_known_args(argv)
        if extra:
            # report against the subcommand so its flags are listed
            parser.commands.get(args.command, parser).error(
                f"unrecognized arguments: {' '.join(extra)}")
        _validate(args)
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:     # --help / --version
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads:
        import numba
        numba.set_num_threads(min(args.threads, numba.config.NUMBA_NUM_THREADS))
    try:
        COMMANDS[args.command](args)
    except (DocPatchError, OSError, ValueError, RuntimeError) as exc:
        print(f"docpatch {args.command}: {exc}", file=sys.stderr)
        return EXIT_PROCESSING
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
