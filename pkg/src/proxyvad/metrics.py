"""Frame-level ROC AUC and region/track-based detection criteria."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from .detection import iou


def roc_auc(scores, labels) -> float:
    """Exact AUC from the Mann-Whitney rank statistic; ties count one half."""
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = np.asarray(labels).astype(bool).ravel()
    if s.shape != y.shape:
        raise ValueError("scores and labels must have equal length")
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("roc_auc needs both positive and negative labels")
    ranks = rankdata(s)
    return float((ranks[y].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def roc_auc_videos(scores: list, labels: list, macro: bool = False) -> float:
    """Micro AUC over concatenated videos, or the mean of per-video AUCs."""
    if not macro:
        return roc_auc(np.concatenate(scores), np.concatenate(labels))
    vals = [roc_auc(s, l) for s, l in zip(scores, labels) if 0 < np.sum(l) < len(l)]
    if not vals:
        raise ValueError("no video contains both classes")
    return float(np.mean(vals))


# ------------------------------------------------------------ RBDC / TBDC
#
# predictions: per frame, a list of (box, score)
# gt_regions:  per frame, a list of anomalous boxes

def _area_to_fpr_one(fpr: np.ndarray, tpr: np.ndarray) -> float:
    """Trapezoid area of the curve over FPR ∈ [0, 1]; the last TPR is held out to 1."""
    x = np.concatenate([[0.0], fpr])
    y = np.concatenate([[0.0], tpr])
    if x[-1] < 1.0:
        x = np.append(x, 1.0)
        y = np.append(y, y[-1])
    area = 0.0
    for i in range(1, len(x)):
        x0, x1, y0, y1 = x[i - 1], x[i], y[i - 1], y[i]
        if x0 >= 1.0:
            break
        if x1 > 1.0:
            y1 = y0 + (y1 - y0) * (1.0 - x0) / (x1 - x0)
            x1 = 1.0
        area += (x1 - x0) * (y0 + y1) / 2
    return float(min(max(area, 0.0), 1.0))


@dataclass
class DetectionCurve:
    thresholds: np.ndarray
    fpr: np.ndarray
    tpr: np.ndarray
    area: float = field(init=False)

    def __post_init__(self):
        self.area = _area_to_fpr_one(self.fpr, self.tpr)

    def points(self) -> list[tuple[float, float]]:
        return [(0.0, 0.0)] + list(zip(self.fpr.tolist(), self.tpr.tolist()))


def _match(predictions, gt_regions, iou_threshold):
    """Best matching prediction score per GT region, plus false-positive scores."""
    if len(predictions) != len(gt_regions):
        raise ValueError("predictions and ground truth cover different frame counts")
    region_scores: dict[tuple[int, int], float] = {}
    fp_scores = []
    for f, (preds, gts) in enumerate(zip(predictions, gt_regions)):
        for j, g in enumerate(gts):
            best = -math.inf
            for box, s in preds:
                if iou(box, g) >= iou_threshold:
                    best = max(best, s)
            region_scores[(f, j)] = best
        for box, s in preds:
            if not any(iou(box, g) >= iou_threshold for g in gts):
                fp_scores.append(s)
    return region_scores, np.array(fp_scores, dtype=np.float64)


def _curve(item_scores: np.ndarray, fp_scores: np.ndarray, all_scores: np.ndarray, n_frames: int):
    thresholds = np.unique(all_scores)[::-1]
    fpr = np.array([(fp_scores >= th).sum() / n_frames for th in thresholds])
    tpr = np.array([(item_scores >= th).mean() for th in thresholds])
    return DetectionCurve(thresholds, fpr, tpr)


def _all_scores(predictions) -> np.ndarray:
    return np.array([s for preds in predictions for _, s in preds], dtype=np.float64)


def rbdc_curve(predictions, gt_regions, iou_threshold: float = 0.1) -> DetectionCurve:
    if not any(gt_regions):
        raise ValueError("rbdc needs at least one anomalous ground-truth region")
    region_scores, fp = _match(predictions, gt_regions, iou_threshold)
    items = np.array(list(region_scores.values()))
    return _curve(items, fp, _all_scores(predictions), len(predictions))


def rbdc(predictions, gt_regions, iou_threshold: float = 0.1) -> float:
    return rbdc_curve(predictions, gt_regions, iou_threshold).area


def _track_scores(tracks: dict, region_lookup, track_fraction: float) -> np.ndarray:
    out = []
    for regions in tracks.values():
        scores = sorted((region_lookup(f, box) for f, box in regions), reverse=True)
        k = max(1, math.ceil(track_fraction * len(scores) - 1e-9))
        out.append(scores[k - 1])
    return np.array(out, dtype=np.float64)


def tbdc_curve(predictions, tracks: dict, iou_threshold: float = 0.1,
               track_fraction: float = 0.1) -> DetectionCurve:
    """``tracks`` maps track id → list of ``(frame, box)`` for anomalous tracks."""
    if not tracks:
        raise ValueError("tbdc needs at least one ground-truth track")
    gt_regions: list[list] = [[] for _ in predictions]
    for regions in tracks.values():
        for f, box in regions:
            gt_regions[f].append(tuple(box))
    region_scores, fp = _match(predictions, gt_regions, iou_threshold)
    index = {(f, tuple(b)): region_scores[(f, j)] for f, gts in enumerate(gt_regions) for j, b in enumerate(gts)}
    items = _track_scores(tracks, lambda f, b: index[(f, tuple(b))], track_fraction)
    return _curve(items, fp, _all_scores(predictions), len(predictions))


def tbdc(predictions, tracks: dict, iou_threshold: float = 0.1, track_fraction: float = 0.1) -> float:
    return tbdc_curve(predictions, tracks, iou_threshold, track_fraction).area


def offset_tracks(per_video_tracks: list[dict], lengths: list[int]) -> dict:
    """Merge per-video tracks into one frame axis (videos concatenated)."""
    merged, base = {}, 0
    for v, (tracks, n) in enumerate(zip(per_video_tracks, lengths)):
        for tid, regions in tracks.items():
            merged[(v, tid)] = [(f + base, box) for f, box in regions]
        base += n
    return merged


@dataclass
class EvalResult:
    frame_auc: float
    rbdc: float | None = None
    tbdc: float | None = None
    curves: dict = field(default_factory=dict)

    def as_rows(self) -> list[tuple[str, float | None]]:
        return [("frame_auc", self.frame_auc), ("rbdc", self.rbdc), ("tbdc", self.tbdc)]

    def to_table(self) -> str:
        return "\n".join(f"{k:<10} {'-' if v is None else f'{v:.4f}'}" for k, v in self.as_rows()) + "\n"

    def to_csv(self) -> str:
        return "metric,value\n" + "".join(f"{k},{'' if v is None else repr(v)}\n" for k, v in self.as_rows())
