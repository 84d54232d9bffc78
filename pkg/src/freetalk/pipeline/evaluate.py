"""Metric reports for predicted mesh sequences against ground-truth bundles."""
from __future__ import annotations

import csv
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from ..errors import DataError
from ..metrics import MetricReport, evaluate_pair
from .config import validate
from .data import Corpus, SequenceBundle, align_frames
from .export import read_sequence
from .plotting import plot_metrics

logger = logging.getLogger(__name__)

DEFAULT_MASKS = {"mouth": "mouth", "upper": "upper_face", "lips": "lips"}


def find_prediction(pred_root: Path, sid: str) -> Path:
    for cand in (pred_root / sid / "frames", pred_root / sid, pred_root / f"{sid}.ftk"):
        if cand.exists():
            return cand
    raise DataError(f"no prediction for sequence {sid} under {pred_root}")


def sequence_report(bundle: SequenceBundle, pred_vertices, masks: dict | None = None) -> dict:
    """Per-sequence report dictionary (validated against the published schema)."""
    names = {**DEFAULT_MASKS, **(masks or {})}
    spec = bundle.spec
    region = {role: spec.region(name) for role, name in names.items()}
    gt = bundle.vertex_frames()
    pred = np.asarray(pred_vertices, dtype=np.float64)
    if pred.shape[1:] != gt.shape[1:]:
        raise DataError(f"{bundle.id}: prediction has {pred.shape[1]} vertices, ground truth {gt.shape[1]}")
    truncated = len(pred) != len(gt)
    gt, pred = align_frames(gt, pred, name=bundle.id)
    rep: MetricReport = evaluate_pair(gt, pred, bundle.template_mesh.vertices,
                                      region["mouth"], region["upper"], region["lips"])
    out = {"sequence": bundle.id, "n_frames": int(len(gt)), "units": "mesh", "truncated": truncated,
           "metrics": rep.to_dict()}
    validate(out, "metric_report")
    return out


def evaluate(pred_root, data_root, out_dir, split: str = "test", sequences=None, masks: dict | None = None,
             workers: int = 0) -> dict:
    """Write ``<id>.json`` per sequence, ``metrics.csv`` (corpus mean/std) and ``metrics.png``."""
    pred_root, out_dir = Path(pred_root), Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    corpus = Corpus(data_root)
    bundles = [corpus[s] for s in sequences] if sequences else corpus.split(split)
    if not bundles:
        raise DataError(f"no sequences to evaluate in split {split!r}")

    def one(b):
        verts, _ = read_sequence(find_prediction(pred_root, b.id))
        return sequence_report(b, verts, masks)

    if workers and workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            reports = list(pool.map(one, bundles))
    else:
        reports = [one(b) for b in bundles]
    for rep in reports:
        (out_dir / f"{rep['sequence']}.json").write_text(json.dumps(rep, indent=1))
    table = {r["sequence"]: r["metrics"] for r in reports}
    names = list(reports[0]["metrics"])
    summary = {}
    with open(out_dir / "metrics.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["metric", "mean", "std", "n"])
        for name in names:
            vals = np.array([table[s][name] for s in table])
            summary[name] = {"mean": float(vals.mean()), "std": float(vals.std()), "n": len(vals)}
            w.writerow([name, repr(summary[name]["mean"]), repr(summary[name]["std"]), len(vals)])
    plot_metrics(table, out_dir / "metrics.png")
    return {"sequences": table, "summary": summary}
