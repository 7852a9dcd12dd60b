"""Success-rate, overlap-precision and precision metrics for single-object tracking."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SR_THRESHOLDS = np.linspace(0.0, 1.0, 21)
PR_THRESHOLDS = np.arange(0, 51, dtype=np.float64)
NPR_THRESHOLDS = np.linspace(0.0, 0.5, 51)
PERFECT_IOU = 1.0 - 1e-9


def _as_boxes(boxes) -> np.ndarray:
    arr = np.array([b.as_array() if hasattr(b, "as_array") else b for b in boxes], dtype=np.float64)
    return arr.reshape(-1, 4)


def iou_cxcywh(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    ax0, ay0 = a[:, 0] - a[:, 2] / 2, a[:, 1] - a[:, 3] / 2
    ax1, ay1 = a[:, 0] + a[:, 2] / 2, a[:, 1] + a[:, 3] / 2
    bx0, by0 = b[:, 0] - b[:, 2] / 2, b[:, 1] - b[:, 3] / 2
    bx1, by1 = b[:, 0] + b[:, 2] / 2, b[:, 1] + b[:, 3] / 2
    iw = np.clip(np.minimum(ax1, bx1) - np.maximum(ax0, bx0), 0, None)
    ih = np.clip(np.minimum(ay1, by1) - np.maximum(ay0, by0), 0, None)
    inter = iw * ih
    union = (ax1 - ax0) * (ay1 - ay0) + (bx1 - bx0) * (by1 - by0) - inter
    return np.where(union > 0, inter / np.where(union > 0, union, 1.0), 0.0)


def success_curve(ious: np.ndarray, thresholds: np.ndarray = SR_THRESHOLDS) -> np.ndarray:
    """Fraction of frames with IoU above each threshold.

    The comparison is strict, except that a perfect overlap also counts at
    threshold 1 so identical boxes score a full curve.
    """
    if len(ious) == 0:
        return np.zeros(len(thresholds))
    ok = (ious[None, :] > thresholds[:, None]) | (ious[None, :] >= PERFECT_IOU)
    return ok.mean(axis=1)


@dataclass
class EvalResult:
    ious: np.ndarray
    center_errors: np.ndarray
    norm_center_errors: np.ndarray
    sr_curve: np.ndarray
    pr_curve: np.ndarray
    npr_curve: np.ndarray
    sr_auc: float
    op50: float
    op75: float
    pr20: float
    npr20: float
    n_frames: int

    def scalars(self, percent: bool = False) -> dict[str, float]:
        k = 100.0 if percent else 1.0
        return {"SR": self.sr_auc * k, "OP50": self.op50 * k, "OP75": self.op75 * k,
                "PR": self.pr20 * k, "NPR": self.npr20 * k}


def compute_metrics(preds, gts, visible=None) -> EvalResult:
    """Evaluate predictions against ground truth, skipping out-of-view frames."""
    p = _as_boxes(preds)
    g = _as_boxes(gts)
    if len(p) != len(g):
        raise ValueError(f"{len(p)} predictions for {len(g)} ground-truth boxes")
    if visible is not None:
        visible = np.asarray(visible, dtype=bool)
        if len(visible) != len(g):
            raise ValueError("visibility flags must match the number of frames")
        p, g = p[visible], g[visible]
    ious = iou_cxcywh(p, g)
    d = p[:, :2] - g[:, :2]
    ce = np.hypot(d[:, 0], d[:, 1])
    nce = np.hypot(d[:, 0] / g[:, 2], d[:, 1] / g[:, 3])
    return _result(ious, ce, nce)


def _at(curve: np.ndarray, grid: np.ndarray, value: float) -> float:
    return float(curve[int(np.argmin(np.abs(grid - value)))])


def _result(ious: np.ndarray, ce: np.ndarray, nce: np.ndarray) -> EvalResult:
    n = len(ious)
    sr = success_curve(ious)
    if n:
        pr = (ce[None, :] <= PR_THRESHOLDS[:, None]).mean(axis=1)
        npr = (nce[None, :] <= NPR_THRESHOLDS[:, None]).mean(axis=1)
    else:
        pr = np.zeros(len(PR_THRESHOLDS))
        npr = np.zeros(len(NPR_THRESHOLDS))
    return EvalResult(
        ious=ious, center_errors=ce, norm_center_errors=nce,
        sr_curve=sr, pr_curve=pr, npr_curve=npr,
        sr_auc=float(sr.mean()),
        op50=float(success_curve(ious, np.array([0.5]))[0]),
        op75=float(success_curve(ious, np.array([0.75]))[0]),
        pr20=_at(pr, PR_THRESHOLDS, 20.0),
        npr20=_at(npr, NPR_THRESHOLDS, 0.2),
        n_frames=n,
    )


def merge_results(results: list[EvalResult]) -> EvalResult:
    """Pool the frames of several sequences into one result."""
    if not results:
        return _result(np.zeros(0), np.zeros(0), np.zeros(0))
    return _result(np.concatenate([r.ious for r in results]),
                   np.concatenate([r.center_errors for r in results]),
                   np.concatenate([r.norm_center_errors for r in results]))
