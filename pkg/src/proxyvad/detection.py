"""Object detectors: a ground-truth oracle and a background-subtraction blob detector."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .spriteworld import GroundTruth, VideoClip

Box = tuple[int, int, int, int]


@dataclass
class Detection:
    frame_index: int
    box: Box  # x1, y1, x2, y2; upper corner exclusive
    confidence: float
    class_probs: np.ndarray

    def __post_init__(self):
        x1, y1, x2, y2 = self.box
        if not (x1 < x2 and y1 < y2):
            raise ValueError(f"degenerate box {self.box}")
        self.class_probs = np.asarray(self.class_probs, dtype=np.float64)

    @property
    def area(self) -> int:
        x1, y1, x2, y2 = self.box
        return (x2 - x1) * (y2 - y1)


@dataclass(frozen=True)
class DetectorConfig:
    kind: str = "blob"
    confidence_threshold: float = 0.8
    n_det: int = 8
    diff_threshold: float = 0.1
    min_area: int = 16
    reference_area: float = 100.0  # component area mapped to confidence 1

    def __post_init__(self):
        if self.kind not in ("oracle", "blob"):
            raise ValueError(f"detector kind must be 'oracle' or 'blob', got {self.kind!r}")
        if not 0.0 <= self.confidence_threshold <= 1.0:
            raise ValueError("confidence_threshold must lie in [0, 1]")
        if self.n_det < 1:
            raise ValueError("n_det must be positive")


def _smoothed_one_hot(cls: int, n: int) -> np.ndarray:
    if n == 1:
        return np.ones(1)
    p = np.full(n, 0.1 / (n - 1))
    p[cls % n] = 0.9
    return p


class BackgroundModel:
    """Per-pixel temporal median of a clip."""

    def __init__(self, video: VideoClip):
        if video.n_frames < 2:
            raise ValueError("blob detector needs at least two frames to estimate a background")
        self.median = np.median(video.frames, axis=0)


def _check_frame(video: VideoClip, frame: int) -> None:
    if not 0 <= frame < video.n_frames:
        raise IndexError(f"frame {frame} outside [0, {video.n_frames})")


def _blob_detections(video, frame, config, background: BackgroundModel) -> list[Detection]:
    diff = np.abs(video.frames[frame] - background.median).max(axis=-1) > config.diff_threshold
    labels, n = ndimage.label(diff)
    out = []
    uniform = np.full(config.n_det, 1.0 / config.n_det)
    for k, sl in enumerate(ndimage.find_objects(labels), start=1):
        if sl is None:
            continue
        area = int(np.count_nonzero(labels[sl] == k))
        if area < config.min_area:
            continue
        box = (sl[1].start, sl[0].start, sl[1].stop, sl[0].stop)
        conf = min(1.0, area / config.reference_area)
        out.append(Detection(frame, box, conf, uniform.copy()))
    return out


def detect(video: VideoClip, frame: int, config: DetectorConfig, gt: GroundTruth | None = None,
           background: BackgroundModel | None = None) -> list[Detection]:
    """Detections in one frame above ``config.confidence_threshold``.

    A precomputed ``background`` avoids re-estimating the median per frame.
    """
    _check_frame(video, frame)
    if config.kind == "oracle":
        if gt is None:
            raise ValueError("oracle detector needs ground truth")
        dets = [Detection(frame, r.box, 1.0, _smoothed_one_hot(r.cls, config.n_det))
                for r in gt.regions[frame]]
    else:
        background = background or BackgroundModel(video)
        dets = _blob_detections(video, frame, config, background)
    return [d for d in dets if d.confidence >= config.confidence_threshold]


def detect_video(video: VideoClip, config: DetectorConfig,
                 gt: GroundTruth | None = None) -> list[list[Detection]]:
    background = BackgroundModel(video) if config.kind == "blob" else None
    return [detect(video, f, config, gt, background) for f in range(video.n_frames)]


def iou(a: Box, b: Box) -> float:
    ix = max(0, min(a[2], b[2]) - max(a[0], b[0]))
    iy = max(0, min(a[3], b[3]) - max(a[1], b[1]))
    inter = ix * iy
    union = (a[2] - a[0]) * (a[3] - a[1]) + (b[2] - b[0]) * (b[3] - b[1]) - inter
    return inter / union if union > 0 else 0.0


# ---------------------------------------------------------------- file I/O

def write_detections(path, per_frame: list[list[Detection]]) -> None:
    lines = [f"# frames={len(per_frame)}", "# frame,x1,y1,x2,y2,confidence,probs..."]
    for dets in per_frame:
        for d in dets:
            probs = ",".join(repr(float(p)) for p in d.class_probs)
            lines.append(f"{d.frame_index},{','.join(map(str, d.box))},{float(d.confidence)!r},{probs}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_detections(path) -> list[list[Detection]]:
    text = Path(path).read_text().splitlines()
    n = int(text[0].split("=")[1])
    out: list[list[Detection]] = [[] for _ in range(n)]
    for line in text:
        if not line or line.startswith("#"):
            continue
        vals = line.split(",")
        f = int(vals[0])
        box = tuple(int(v) for v in vals[1:5])
        out[f].append(Detection(f, box, float(vals[5]), np.array([float(v) for v in vals[6:]])))
    return out
