"""Flow and OCR evaluation metrics plus the dataset evaluation harness."""

from __future__ import annotations

import json
import logging
import shlex
import subprocess
import tempfile
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DimensionMismatch, EmptyMaskError, MissingExternalFile
from .flowest import epe
from .imagecore import FlowField, load_flow, load_image, save_image

log = logging.getLogger(__name__)

__all__ = ["epe", "nepe", "levenshtein", "ocr_accuracy", "align_constant",
           "EvalReport", "evaluate_pipeline"]


def nepe(a: FlowField, b: FlowField) -> float:
    """Endpoint error with ``u`` divided by the flow width and ``v`` by its height."""
    if a.shape != b.shape:
        raise DimensionMismatch(f"flow shapes differ: {a.shape} vs {b.shape}")
    m = a.mask & b.mask
    if not m.any():
        raise EmptyMaskError("flows share no valid pixel")
    du = (a.u[m].astype(np.float64) - b.u[m]) / a.width
    dv = (a.v[m].astype(np.float64) - b.v[m]) / a.height
    return float(np.mean(np.sqrt(du * du + dv * dv)))


def levenshtein(s: str, t: str) -> int:
    """Minimum number of single-character insertions, deletions and substitutions."""
    if len(s) < len(t):
        s, t = t, s
    prev = list(range(len(t) + 1))
    for i, cs in enumerate(s, 1):
        cur = [i]
        for j, ct in enumerate(t, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (cs != ct)))
        prev = cur
    return prev[-1]


def ocr_accuracy(recognized: str, truth: str) -> float:
    """``(1 - E_d / max(N_s, N_t)) * 100``; may be negative, never clamped."""
    n = max(len(recognized), len(truth))
    if n == 0:
        raise ValueError("both strings are empty")
    acc = (1.0 - levenshtein(recognized, truth) / n) * 100.0
    if acc < 0:
        warnings.warn(f"negative OCR accuracy {acc:.2f}", RuntimeWarning, stacklevel=2)
    return acc


def align_constant(flow: FlowField, reference: FlowField) -> FlowField:
    """Shift ``flow`` by the mean offset to ``reference`` over their shared mask.

    Reconstructed flows are only defined up to one global constant.
    """
    if flow.shape != reference.shape:
        raise DimensionMismatch(f"flow shapes differ: {flow.shape} vs {reference.shape}")
    m = flow.mask & reference.mask
    if not m.any():
        raise EmptyMaskError("flows share no valid pixel")
    du = float(np.mean(reference.u[m].astype(np.float64) - flow.u[m]))
    dv = float(np.mean(reference.v[m].astype(np.float64) - flow.v[m]))
    return flow.shifted(du, dv)


# --------------------------------------------------------------------------
# harness


@dataclass
class EvalReport:
    rows: list = field(default_factory=list)
    epe: float = 0.0
    nepe: float = 0.0
    ocr_accuracy: float | None = None
    runtime: dict = field(default_factory=dict)

    COLUMNS = ("name", "kind", "epe", "nepe", "ocr_accuracy", "diverged_pixels", "time_total")

    def to_dict(self) -> dict:
        return {"samples": len(self.rows), "epe": self.epe, "nepe": self.nepe,
                "ocr_accuracy": self.ocr_accuracy, "runtime": self.runtime, "rows": self.rows}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def table(self) -> str:
        cells = [list(self.COLUMNS)]
        for r in self.rows:
            cells.append([_fmt(r.get(c)) for c in self.COLUMNS])
        cells.append(["mean", "", _fmt(self.epe), _fmt(self.nepe), _fmt(self.ocr_accuracy), "", ""])
        widths = [max(len(row[i]) for row in cells) for i in range(len(self.COLUMNS))]
        return "\n".join("  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip() for row in cells)


def _fmt(v):
    if v is None:
        return "-"
    if isinstance(v, float):
        return f"{v:.4f}"
    return str(v)


def strip_runtime(report: dict) -> dict:
    """Copy of a report dict without wall-clock fields, for reproducibility checks."""
    out = {k: v for k, v in report.items() if k != "runtime"}
    out["rows"] = [{k: v for k, v in r.items() if not k.startswith("time")} for r in report["rows"]]
    return out


def _recognize(name, image, root, ocr_cmd, tmp):
    """Recognized text for one rectified image, from a command or a sidecar file."""
    if ocr_cmd:
        img_path = Path(tmp) / f"{name}_rectified.png"
        save_image(image, img_path)
        argv = [a.replace("{image}", str(img_path)) for a in shlex.split(ocr_cmd)]
        if not any("{image}" in a for a in shlex.split(ocr_cmd)):
            argv.append(str(img_path))
        res = subprocess.run(argv, capture_output=True, text=True, check=True)
        return res.stdout
    path = root / f"{name}_ocr.txt"
    return path.read_text() if path.exists() else None


def evaluate_pipeline(dataset_dir, cfg=None, ocr_cmd=None) -> EvalReport:
    """Rectify every sample of a dataset and score the flow against ground truth.

    OCR accuracy is reported when ``<name>_truth.txt`` exists and recognized
    text comes from ``<name>_ocr.txt`` or from ``ocr_cmd`` (``{image}`` is
    replaced by the rectified image path, otherwise the path is appended).
    """
    from .pipeline import PipelineConfig, rectify, resize_flow

    cfg = cfg or PipelineConfig()
    root = Path(dataset_dir)
    manifests = sorted(root.glob("*_manifest.json"))
    if not manifests:
        raise MissingExternalFile(f"no *_manifest.json files in {root}")
    rows = []
    stage_totals = {}
    with tempfile.TemporaryDirectory() as tmp:
        for mpath in manifests:
            meta = json.loads(mpath.read_text())
            name = meta.get("name", mpath.name[: -len("_manifest.json")])
            img_path, flow_path = root / f"{name}_img.png", root / f"{name}_flow.dfl"
            for p in (img_path, flow_path):
                if not p.exists():
                    raise MissingExternalFile(f"missing {p}")
            img = load_image(img_path)
            gt = load_flow(flow_path)
            t0 = time.perf_counter()
            out, flow, diag = rectify(img, cfg, gt)
            elapsed = time.perf_counter() - t0
            gt_p = resize_flow(gt, flow.width, flow.height)
            aligned = align_constant(flow, gt_p)
            row = {"name": name, "kind": meta.get("spec", {}).get("kind"),
                   "epe": epe(aligned, gt_p), "nepe": nepe(aligned, gt_p),
                   "ocr_accuracy": None, "diverged_pixels": diag["diverged_pixels"],
                   "cg_iterations": diag["cg_iterations"], "time_total": elapsed}
            truth = root / f"{name}_truth.txt"
            if truth.exists():
                text = _recognize(name, out, root, ocr_cmd, tmp)
                if text is not None:
                    row["ocr_accuracy"] = ocr_accuracy(text.strip(), truth.read_text().strip())
            for k, v in diag.items():
                if k.startswith("time_"):
                    stage_totals[k] = stage_totals.get(k, 0.0) + v
            rows.append(row)
            log.info("%s: epe %.4f", name, row["epe"])
    accs = [r["ocr_accuracy"] for r in rows if r["ocr_accuracy"] is not None]
    return EvalReport(
        rows=rows,
        epe=float(np.mean([r["epe"] for r in rows])),
        nepe=float(np.mean([r["nepe"] for r in rows])),
        ocr_accuracy=float(np.mean(accs)) if accs else None,
        runtime={k: v / len(rows) for k, v in sorted(stage_totals.items())},
    )
