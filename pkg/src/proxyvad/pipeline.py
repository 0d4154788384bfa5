"""End-to-end steps shared by the command line and the acceptance suite."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import RunConfig
from .detection import Detection, detect_video, read_detections, write_detections
from .inference import late_fusion_videos, run_frame_level, run_object_level
from .metrics import EvalResult, offset_tracks, rbdc_curve, roc_auc_videos, tbdc_curve
from .model import TASKS, MultiTaskModel, load_checkpoint, save_checkpoint
from .sequences import full_frame_detections
from .spriteworld import (
    GroundTruth,
    VideoClip,
    generate_dataset,
    read_ground_truth,
    read_video,
    write_ground_truth,
    write_video,
)
from .teachers import TeacherBundle
from .training import TrainReport, collect_samples, fit

ABLATION_SUBSETS = (("T1",), ("T2",), ("T3",), ("T4",), ("T1", "T3"), ("T1", "T2", "T3"), TASKS)


@dataclass
class Dataset:
    train: list[VideoClip]
    train_gt: list[GroundTruth]
    test: list[tuple[VideoClip, GroundTruth]]


def make_dataset(cfg: RunConfig) -> Dataset:
    train, test, train_gt = generate_dataset(cfg.scene_config())
    return Dataset(train, train_gt, test)


def make_teacher(cfg: RunConfig) -> TeacherBundle:
    return TeacherBundle(cfg.teacher.n_cls, cfg.detector.n_det, cfg.teacher_seed(), cfg.model.input_side)


# ------------------------------------------------------------- disk I/O

def _video_dir(root: Path, split: str, i: int) -> Path:
    return root / split / f"video_{i:03d}"


def write_dataset(ds: Dataset, root) -> list[Path]:
    root = Path(root)
    written = []
    for split, items in (("train", list(zip(ds.train, ds.train_gt))), ("test", ds.test)):
        for i, (clip, gt) in enumerate(items):
            d = _video_dir(root, split, i)
            d.mkdir(parents=True, exist_ok=True)
            write_video(d / "frames.spwv", clip)
            write_ground_truth(d / "gt.txt", gt)
            written += [d / "frames.spwv", d / "gt.txt"]
    return written


def read_dataset(root) -> Dataset:
    root = Path(root)
    if not (root / "train").is_dir():
        raise FileNotFoundError(f"{root} does not contain a generated dataset")

    def load(split):
        dirs = sorted(p for p in (root / split).iterdir() if p.is_dir())
        return [(read_video(d / "frames.spwv"), read_ground_truth(d / "gt.txt")) for d in dirs]

    train = load("train")
    return Dataset([c for c, _ in train], [g for _, g in train], load("test"))


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(out_dir) -> Path:
    """List every file under ``out_dir`` with its SHA-256."""
    out_dir = Path(out_dir)
    manifest = out_dir / "manifest.txt"
    files = sorted(p for p in out_dir.rglob("*") if p.is_file() and p != manifest)
    lines = [f"{sha256_file(p)}  {p.relative_to(out_dir).as_posix()}" for p in files]
    manifest.write_text("\n".join(lines) + "\n")
    return manifest


# ----------------------------------------------------------- detections

def detect_split(clips, cfg: RunConfig, gts=None) -> list[list[list[Detection]]]:
    gts = gts or [None] * len(clips)
    return [detect_video(c, cfg.detector, g) for c, g in zip(clips, gts)]


def save_detections(dets, out_dir, split: str) -> list[Path]:
    out_dir = Path(out_dir) / "detections"
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, d in enumerate(dets):
        p = out_dir / f"{split}_video_{i:03d}.txt"
        write_detections(p, d)
        paths.append(p)
    return paths


def load_detections(out_dir, split: str, n: int):
    return [read_detections(Path(out_dir) / "detections" / f"{split}_video_{i:03d}.txt") for i in range(n)]


# -------------------------------------------------------------- training

def stream_detections(clips, dets, mode: str, n_det: int):
    if mode == "object":
        return dets
    if mode == "frame":
        return [full_frame_detections(c, d, n_det) for c, d in zip(clips, dets)]
    raise ValueError(f"mode must be 'object' or 'frame', got {mode!r}")


def train_stream(cfg: RunConfig, ds: Dataset, train_dets, mode: str = "object", tasks=None,
                 samples=None, progress=None) -> tuple[MultiTaskModel, TrainReport]:
    tcfg = cfg.train_config(**({"enabled_tasks": tuple(tasks)} if tasks else {}))
    teacher = make_teacher(cfg)
    dets = stream_detections(ds.train, train_dets, mode, cfg.detector.n_det)
    if samples is None:
        samples = collect_samples(ds.train, dets, teacher, tcfg)
    return fit(ds.train, dets, teacher, cfg.arch_config(), tcfg, samples=samples, progress=progress)


def checkpoint_meta(cfg: RunConfig, mode: str, report: TrainReport, tasks) -> dict:
    return {
        "mode": mode,
        "tasks": list(tasks),
        "t": cfg.train.t,
        "teacher": make_teacher(cfg).describe(),
        "selected_epoch": report.selected_epoch,
        "selected_loss": report.selected[f"{report.selection_split}_total"],
        "config": cfg.to_text(),
    }


def save_stream(path, model, cfg: RunConfig, mode: str, report: TrainReport, tasks) -> None:
    save_checkpoint(path, model, checkpoint_meta(cfg, mode, report, tasks))


def load_stream(path, expected_mode: str | None = None):
    model, meta = load_checkpoint(path)
    if expected_mode is not None and meta.get("mode") != expected_mode:
        raise ValueError(f"{path} holds a {meta.get('mode')!r}-level model, expected {expected_mode!r}")
    return model, meta


# ------------------------------------------------------------- scoring

@dataclass
class StreamScores:
    series: list[np.ndarray]
    object_results: list = field(default_factory=list)


def score_stream(cfg: RunConfig, model, test, test_dets, mode: str, tasks=TASKS, t: int | None = None) -> StreamScores:
    t = t or cfg.train.t
    if mode == "object":
        results = [run_object_level(model, c, d, t, cfg.smoothing, tasks) for (c, _), d in zip(test, test_dets)]
        return StreamScores([r.series for r in results], results)
    if mode == "frame":
        return StreamScores([run_frame_level(model, c, d, t, cfg.detector.n_det, cfg.smoothing, tasks)
                             for (c, _), d in zip(test, test_dets)])
    raise ValueError(f"mode must be 'object' or 'frame', got {mode!r}")


def region_predictions(results) -> list[list[tuple]]:
    """Concatenate per-frame (box, score) predictions over videos."""
    out = []
    for r in results:
        for dets, scores in zip(r.detections, r.scores):
            out.append([(d.box, float(s)) for d, s in zip(dets, scores)])
    return out


def evaluate_scores(cfg: RunConfig, test, series, object_results=None) -> EvalResult:
    labels = [g.frame_labels for _, g in test]
    auc = roc_auc_videos(series, labels, macro=cfg.metrics.macro_auc)
    result = EvalResult(auc)
    if object_results:
        preds = region_predictions(object_results)
        gts = [[r.box for r in rs if r.anomalous] for _, g in test for rs in g.regions]
        if any(gts):
            rc = rbdc_curve(preds, gts, cfg.metrics.iou_threshold)
            tracks = offset_tracks([g.anomalous_tracks() for _, g in test], [c.n_frames for c, _ in test])
            tc = tbdc_curve(preds, tracks, cfg.metrics.iou_threshold, cfg.metrics.track_fraction)
            result.rbdc, result.tbdc = rc.area, tc.area
            result.curves = {"rbdc": rc.points(), "tbdc": tc.points()}
    return result


def fuse(object_series, frame_series):
    return late_fusion_videos(object_series, frame_series)
