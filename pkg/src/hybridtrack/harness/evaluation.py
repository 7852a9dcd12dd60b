"""Run a tracker over sequences and score it."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..eventsim import BoundingBox
from ..tracker import HybridTracker, track_sequence
from .metrics import NPR_THRESHOLDS, PR_THRESHOLDS, SR_THRESHOLDS, EvalResult, compute_metrics, merge_results


@dataclass
class SequenceEval:
    name: str
    split: str
    preds: list[BoundingBox]
    result: EvalResult


def evaluate_model(model: HybridTracker, sequences) -> tuple[dict[str, EvalResult], list[SequenceEval]]:
    """Track every sequence; returns pooled results per split (plus ``"all"``) and per-sequence evals."""
    per_seq = []
    for seq in sequences:
        events = seq.events if model.use_event else None
        preds = track_sequence(model, seq.frames, events, seq.boxes[0], seq.timestamps)
        # the first frame is the initialisation and is not scored
        vis = np.ones(len(seq), dtype=bool) if seq.visible is None else np.asarray(seq.visible, dtype=bool).copy()
        vis[0] = False
        per_seq.append(SequenceEval(seq.name, seq.split, preds, compute_metrics(preds, seq.boxes, vis)))
    by_split: dict[str, list[EvalResult]] = {}
    for ev in per_seq:
        by_split.setdefault(ev.split, []).append(ev.result)
    pooled = {k: merge_results(v) for k, v in sorted(by_split.items())}
    pooled["all"] = merge_results([ev.result for ev in per_seq])
    return pooled, per_seq


def write_curves(out_dir, results: dict[str, EvalResult]) -> dict[str, Path]:
    """SR and PR curve CSVs with one column per result, plus a summary JSON."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    names = list(results)
    paths = {}
    for kind, grid, attr in (("sr", SR_THRESHOLDS, "sr_curve"), ("pr", PR_THRESHOLDS, "pr_curve"),
                             ("npr", NPR_THRESHOLDS, "npr_curve")):
        p = out / f"{kind}_curve.csv"
        with open(p, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["threshold", *names])
            for i, t in enumerate(grid):
                w.writerow([f"{t:.4f}", *(f"{getattr(results[n], attr)[i]:.6f}" for n in names)])
        paths[kind] = p
    summary = {n: {**r.scalars(percent=True), "frames": r.n_frames} for n, r in results.items()}
    paths["summary"] = out / "summary.json"
    paths["summary"].write_text(json.dumps(summary, indent=2))
    return paths
