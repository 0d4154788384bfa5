"""Object-centric temporal sequences and proxy-task samples."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .detection import Detection
from .spriteworld import VideoClip
from .teachers import TeacherBundle, concat_targets

CROP_SIDE = 64
MAX_GAP = 4
TRAIN_FRACTION = 0.85


@dataclass
class ObjectSequence:
    crops: np.ndarray  # (2t+1)×64×64×3
    video_id: int
    center_frame: int
    box: tuple[int, int, int, int]
    t: int
    frame_indices: tuple[int, ...] = ()


@dataclass
class ProxySample:
    task: str
    input: np.ndarray
    target: np.ndarray

    def __post_init__(self):
        if self.task in ("T1", "T2"):
            if self.target.shape != (2,) or sorted(self.target.tolist()) != [0.0, 1.0]:
                raise ValueError(f"{self.task} target must be one-hot of length 2")
        elif self.task == "T3":
            if self.target.shape != self.input.shape[1:]:
                raise ValueError("T3 target must be one crop")
        elif self.task == "T4":
            if self.input.shape[0] != 1 or self.target.ndim != 1:
                raise ValueError("T4 input is a single crop and its target a vector")
        else:
            raise ValueError(f"unknown task {self.task!r}")


FORWARD = np.array([1.0, 0.0])
BACKWARD = np.array([0.0, 1.0])
REGULAR = FORWARD
IRREGULAR = BACKWARD


# ------------------------------------------------------------------- crops

def _axis_taps(lo: int, hi: int, out: int):
    """Bilinear source indices and weights along one axis (half-pixel centres)."""
    scale = (hi - lo) / out
    src = lo + (np.arange(out) + 0.5) * scale - 0.5
    src = np.clip(src, lo, hi - 1)
    i0 = np.floor(src).astype(np.intp)
    i1 = np.minimum(i0 + 1, hi - 1)
    frac = (src - i0).astype(np.float32)
    return i0, i1, frac


def crop_resize(frames: np.ndarray, box, side: int = CROP_SIDE) -> np.ndarray:
    """Crop ``box`` from every frame of ``frames`` (N×H×W×3) and resize bilinearly."""
    x1, y1, x2, y2 = box
    if x2 <= x1 or y2 <= y1:
        raise ValueError(f"degenerate box {box}")
    y0i, y1i, fy = _axis_taps(y1, y2, side)
    x0i, x1i, fx = _axis_taps(x1, x2, side)
    top = frames[:, y0i]
    bot = frames[:, y1i]
    fy = fy[None, :, None, None]
    rows = top + (bot - top) * fy
    left = rows[:, :, x0i]
    right = rows[:, :, x1i]
    return (left + (right - left) * fx[None, None, :, None]).astype(np.float32)


def _window(video: VideoClip, indices, mode: str, lo: int, hi: int):
    idx = np.asarray(indices)
    if mode == "train":
        if idx.min() < lo or idx.max() >= hi:
            return None
        return idx
    if mode == "inference":
        return np.clip(idx, 0, video.n_frames - 1)
    raise ValueError(f"mode must be 'train' or 'inference', got {mode!r}")


def extract_sequence(video: VideoClip, detection: Detection, t: int, mode: str = "train",
                     video_id: int = 0, bounds: tuple[int, int] | None = None) -> ObjectSequence | None:
    """Crop the detection's box over frames ``i−t … i+t``.

    In train mode a window leaving ``bounds`` (default: the whole video) gives
    ``None``; in inference mode edge frames are repeated instead.
    """
    if t < 1:
        raise ValueError("t must be at least 1")
    x1, y1, x2, y2 = detection.box
    if x2 <= x1 or y2 <= y1:
        raise ValueError(f"degenerate box {detection.box}")
    lo, hi = bounds or (0, video.n_frames)
    i = detection.frame_index
    idx = _window(video, range(i - t, i + t + 1), mode, lo, hi)
    if idx is None:
        return None
    crops = crop_resize(video.frames[idx], detection.box)
    return ObjectSequence(crops, video_id, i, tuple(detection.box), t, tuple(int(k) for k in idx))


# ------------------------------------------------------------------ tasks

def make_task1_samples(seq: ObjectSequence) -> list[ProxySample]:
    return [ProxySample("T1", seq.crops, FORWARD.copy()),
            ProxySample("T1", seq.crops[::-1].copy(), BACKWARD.copy())]


def intermittent_indices(i: int, back_gaps, fwd_gaps) -> list[int]:
    back = i - np.cumsum(back_gaps)
    fwd = i + np.cumsum(fwd_gaps)
    return [int(k) for k in back[::-1]] + [i] + [int(k) for k in fwd]


def _draw_gaps(rng: np.random.Generator, t: int, room: int) -> list[int] | None:
    """``t`` gaps in 1..MAX_GAP whose sum stays within ``room`` frames."""
    if room < t:
        return None
    gaps = []
    left = room
    for k in range(t):
        top = min(MAX_GAP, left - (t - k - 1))
        g = int(rng.integers(1, top + 1))
        gaps.append(g)
        left -= g
    return gaps


def task2_rng(seed: int, video_id: int, frame: int, det_index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, 0x72, video_id, frame, det_index]))


def task2_frame_indices(i: int, t: int, rng: np.random.Generator, lo: int, hi: int) -> list[int] | None:
    back = _draw_gaps(rng, t, i - lo)
    fwd = _draw_gaps(rng, t, hi - 1 - i)
    if back is None or fwd is None:
        return None
    return intermittent_indices(i, back, fwd)


def make_task2_samples(video: VideoClip, detection: Detection, t: int, rng: np.random.Generator,
                       bounds: tuple[int, int] | None = None) -> list[ProxySample] | None:
    """Consecutive window labelled regular, random-gap window labelled irregular."""
    lo, hi = bounds or (0, video.n_frames)
    i = detection.frame_index
    if i - t < lo or i + t >= hi:
        return None
    idx = task2_frame_indices(i, t, rng, lo, hi)
    if idx is None:
        return None
    regular = crop_resize(video.frames[i - t:i + t + 1], detection.box)
    irregular = crop_resize(video.frames[idx], detection.box)
    return [ProxySample("T2", regular, REGULAR.copy()), ProxySample("T2", irregular, IRREGULAR.copy())]


def make_task3_sample(seq: ObjectSequence) -> ProxySample:
    t = seq.t
    return ProxySample("T3", np.delete(seq.crops, t, axis=0), seq.crops[t].copy())


def make_task4_sample(middle_crop: np.ndarray, detection: Detection, teacher: TeacherBundle,
                      n_distill: int | None = None) -> ProxySample:
    if n_distill is not None and n_distill != teacher.n_distill:
        raise ValueError(f"model expects {n_distill} distillation outputs, teacher gives {teacher.n_distill}")
    if detection.class_probs.shape != (teacher.n_det,):
        raise ValueError(f"detector gives {detection.class_probs.shape[0]} classes, teacher expects {teacher.n_det}")
    target = concat_targets(teacher.features(middle_crop), detection.class_probs, teacher)
    return ProxySample("T4", middle_crop[None], target)


def split_train_val(videos) -> list[tuple[tuple[int, int], tuple[int, int]]]:
    """Per video, half-open frame ranges ``(train, val)``; accepts clips or lengths."""
    out = []
    for v in videos:
        n = v if isinstance(v, (int, np.integer)) else v.n_frames
        cut = int(np.floor(TRAIN_FRACTION * n))
        out.append(((0, cut), (cut, n)))
    return out


# --------------------------------------------------------- object bundles

@dataclass
class ObjectSample:
    """All proxy inputs and targets for one detected object."""

    consecutive: np.ndarray  # (2t+1)×64×64×3
    intermittent: np.ndarray | None
    t4_target: np.ndarray | None
    video_id: int
    frame: int
    det_index: int

    def task_samples(self) -> list[ProxySample]:
        seq = ObjectSequence(self.consecutive, self.video_id, self.frame, (0, 0, 1, 1),
                             (self.consecutive.shape[0] - 1) // 2)
        out = make_task1_samples(seq)
        if self.intermittent is not None:
            out += [ProxySample("T2", self.consecutive, REGULAR.copy()),
                    ProxySample("T2", self.intermittent, IRREGULAR.copy())]
        out.append(make_task3_sample(seq))
        if self.t4_target is not None:
            out.append(ProxySample("T4", self.consecutive[seq.t][None], self.t4_target))
        return out


def build_object_samples(video: VideoClip, detections: list[list[Detection]], teacher: TeacherBundle,
                         t: int, seed: int, video_id: int, bounds: tuple[int, int],
                         stride: int = 1) -> list[ObjectSample]:
    """Training bundles for every detection whose windows fit inside ``bounds``.

    Centre frames are taken every ``stride`` frames. Objects whose
    intermittent window cannot fit are skipped so every bundle covers all tasks.
    """
    lo, hi = bounds
    out = []
    for i in range(lo + t, hi - t, stride):
        for k, det in enumerate(detections[i]):
            rng = task2_rng(seed, video_id, i, k)
            idx = task2_frame_indices(i, t, rng, lo, hi)
            if idx is None:
                continue
            seq = extract_sequence(video, det, t, "train", video_id, bounds)
            if seq is None:
                continue
            inter = crop_resize(video.frames[idx], det.box)
            middle = seq.crops[t]
            target = concat_targets(teacher.features(middle), det.class_probs, teacher)
            out.append(ObjectSample(seq.crops, inter, target.astype(np.float32), video_id, i, k))
    return out


def full_frame_detections(video: VideoClip, detections: list[list[Detection]], n_det: int) -> list[list[Detection]]:
    """One whole-frame box per frame; class probabilities are the per-class max
    over that frame's detections, or uniform when it has none."""
    h, w = video.frame_size
    out = []
    for f, dets in enumerate(detections):
        if dets:
            probs = np.max(np.stack([d.class_probs for d in dets]), axis=0)
        else:
            probs = np.full(n_det, 1.0 / n_det)
        out.append([Detection(f, (0, 0, w, h), 1.0, probs)])
    return out
