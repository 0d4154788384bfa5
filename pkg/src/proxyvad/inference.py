"""Object anomaly scores, pixel-level maps, smoothing and late fusion."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from . import numerics as nx
from .detection import Detection
from .model import TASKS, MultiTaskModel
from .sequences import crop_resize, full_frame_detections
from .spriteworld import VideoClip


@dataclass(frozen=True)
class SmoothingConfig:
    mean_filter_extent: tuple[int, int, int] = (3, 9, 9)
    gaussian_sigma: float = 3.0
    gaussian_radius: int | None = None  # None: ceil(3·sigma)

    def __post_init__(self):
        if any(e < 1 or e % 2 == 0 for e in self.mean_filter_extent):
            raise ValueError("mean filter extents must be odd and positive")
        if self.gaussian_sigma <= 0:
            raise ValueError("gaussian_sigma must be positive")
        if self.gaussian_radius is not None and self.gaussian_radius < 0:
            raise ValueError("gaussian_radius must be non-negative")

    @property
    def radius(self) -> int:
        if self.gaussian_radius is not None:
            return self.gaussian_radius
        return int(math.ceil(3 * self.gaussian_sigma))


# ----------------------------------------------------------- object score

def _check_model(model: MultiTaskModel, detections: list[Detection]) -> int:
    n_det = len(detections[0].class_probs)
    if model.config.n_distill <= n_det:
        raise ValueError(f"model distillation head ({model.config.n_distill}) cannot hold "
                         f"{n_det} detector probabilities")
    return n_det


def score_terms(model: MultiTaskModel, video: VideoClip, detections: list[Detection], t: int,
                tasks=TASKS, batch_size: int = 16) -> dict[str, np.ndarray]:
    """Per-head anomaly terms, each in [0, 1], for detections of one video.

    T1: probability of backward motion on the forward consecutive window.
    T2: probability of irregular motion on the same window.
    T3: mean absolute error of the middle-crop reconstruction (clipped to [0, 1]).
    T4: mean absolute gap to the detector probabilities over the detector slice.
    """
    tasks = [k for k in TASKS if k in tasks]
    if not tasks:
        raise ValueError("at least one head must be enabled")
    out = {k: np.empty(len(detections)) for k in tasks}
    if not detections:
        return out
    n_det = _check_model(model, detections)
    last = video.n_frames - 1
    with nx.no_grad():
        for s in range(0, len(detections), batch_size):
            chunk = detections[s:s + batch_size]
            seqs = []
            for d in chunk:
                idx = np.clip(np.arange(d.frame_index - t, d.frame_index + t + 1), 0, last)
                seqs.append(crop_resize(video.frames[idx], d.box))
            consec = np.stack(seqs)
            middle = consec[:, t]
            sl = slice(s, s + len(chunk))
            if "T1" in tasks or "T2" in tasks:
                feats = model.forward_shared(consec)
                for k in ("T1", "T2"):
                    if k in tasks:
                        out[k][sl] = nx.softmax(model.forward_head(k, feats)).data[:, 1]
            if "T3" in tasks:
                recon = model.forward_decoder(model.forward_shared(np.delete(consec, t, axis=1))).data
                out["T3"][sl] = np.abs(middle - np.clip(recon, 0.0, 1.0)).mean(axis=(1, 2, 3))
            if "T4" in tasks:
                pred = model.forward_head("T4", model.forward_shared(middle[:, None])).data[:, -n_det:]
                probs = np.stack([d.class_probs for d in chunk])
                out["T4"][sl] = np.abs(probs - np.clip(pred, 0.0, 1.0)).mean(axis=1)
    return out


def combine_terms(terms: dict[str, np.ndarray]) -> np.ndarray:
    """Average of the enabled heads' terms."""
    return np.mean(np.stack([terms[k] for k in TASKS if k in terms]), axis=0)


def object_scores(model, video, detections, t, tasks=TASKS) -> np.ndarray:
    return combine_terms(score_terms(model, video, detections, t, tasks))


def object_score(model, video, detection, t, tasks=TASKS) -> float:
    return float(object_scores(model, video, [detection], t, tasks)[0])


# ------------------------------------------------------------------ maps

def assemble_map(frame_size, detections_with_scores) -> np.ndarray:
    """Fill each box with its score; overlaps keep the maximum."""
    h, w = frame_size
    m = np.zeros((h, w))
    for box, score in detections_with_scores:
        x1, y1, x2, y2 = box
        if x1 < 0 or y1 < 0 or x2 > w or y2 > h or x1 >= x2 or y1 >= y2:
            raise ValueError(f"box {box} outside {w}×{h} frame")
        np.maximum(m[y1:y2, x1:x2], score, out=m[y1:y2, x1:x2])
    return m


def mean_filter_3d(maps: np.ndarray, config: SmoothingConfig = SmoothingConfig()) -> np.ndarray:
    """Sliding-window mean with edge replication."""
    maps = np.asarray(maps, dtype=np.float64)
    if maps.ndim != 3:
        raise ValueError("maps must be T×H×W")
    for e, n in zip(config.mean_filter_extent, maps.shape):
        if e > n:
            raise ValueError(f"mean filter extent {config.mean_filter_extent} exceeds map shape {maps.shape}")
    return ndimage.uniform_filter(maps, size=config.mean_filter_extent, mode="nearest")


def frame_scores(maps: np.ndarray) -> np.ndarray:
    return np.asarray(maps).reshape(len(maps), -1).max(axis=1)


def gaussian_kernel(sigma: float, radius: int) -> np.ndarray:
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def temporal_gaussian(series, config: SmoothingConfig = SmoothingConfig()) -> np.ndarray:
    series = np.asarray(series, dtype=np.float64)
    r = config.radius
    k = gaussian_kernel(config.gaussian_sigma, r)
    padded = np.pad(series, r, mode="edge")
    return np.convolve(padded, k, mode="valid")


# ------------------------------------------------------------- pipelines

@dataclass
class ObjectLevelResult:
    series: np.ndarray
    maps: np.ndarray  # filtered per-frame maps
    detections: list[list[Detection]]
    scores: list[np.ndarray]  # per frame, aligned with detections


def run_object_level(model, video: VideoClip, detections: list[list[Detection]], t: int,
                     smoothing: SmoothingConfig = SmoothingConfig(), tasks=TASKS) -> ObjectLevelResult:
    flat = [d for dets in detections for d in dets]
    scores = object_scores(model, video, flat, t, tasks) if flat else np.zeros(0)
    per_frame, k = [], 0
    for dets in detections:
        per_frame.append(scores[k:k + len(dets)])
        k += len(dets)
    size = video.frame_size
    raw = np.stack([assemble_map(size, [(d.box, s) for d, s in zip(dets, sc)])
                    for dets, sc in zip(detections, per_frame)])
    ext = tuple(min(e, n if n % 2 else n - 1) for e, n in zip(smoothing.mean_filter_extent, raw.shape))
    eff = SmoothingConfig(ext, smoothing.gaussian_sigma, smoothing.gaussian_radius)
    maps = mean_filter_3d(raw, eff) if flat else raw
    series = temporal_gaussian(frame_scores(maps), smoothing)
    return ObjectLevelResult(series, maps, detections, per_frame)


def run_frame_level(model, video: VideoClip, detections: list[list[Detection]], t: int, n_det: int,
                    smoothing: SmoothingConfig = SmoothingConfig(), tasks=TASKS) -> np.ndarray:
    """Same heads applied to whole-frame sequences; one score per frame."""
    full = [d[0] for d in full_frame_detections(video, detections, n_det)]
    return temporal_gaussian(object_scores(model, video, full, t, tasks), smoothing)


def _minmax(x: np.ndarray) -> np.ndarray:
    lo, hi = x.min(), x.max()
    if hi - lo <= 0:
        return np.zeros_like(x)
    return (x - lo) / (hi - lo)


def late_fusion(object_series, frame_series) -> np.ndarray:
    """Min-max normalise each stream, then average; a flat stream becomes zeros."""
    a = np.asarray(object_series, dtype=np.float64)
    b = np.asarray(frame_series, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"series lengths differ: {a.shape} vs {b.shape}")
    return 0.5 * (_minmax(a) + _minmax(b))


def late_fusion_videos(object_series: list, frame_series: list) -> list[np.ndarray]:
    """Fuse per-video series with normalisation over the whole test set."""
    lengths = [len(s) for s in object_series]
    if lengths != [len(s) for s in frame_series]:
        raise ValueError("per-video series lengths differ between streams")
    fused = late_fusion(np.concatenate(object_series), np.concatenate(frame_series))
    return np.split(fused, np.cumsum(lengths)[:-1])
