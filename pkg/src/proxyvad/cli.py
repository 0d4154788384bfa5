"""Command line: ``proxyvad {gen-data,train,infer,eval,ablate}``."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import pipeline as pl
from .config import RunConfig
from .model import TASKS


def _load_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    return cfg


def _prepare_out(args, cfg: RunConfig) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(cfg.to_text())
    return out


def _log(msg: str) -> None:
    print(msg, file=sys.stderr, flush=True)


def _train_dets(cfg: RunConfig, ds: pl.Dataset):
    # the oracle needs ground truth; training videos carry an all-normal one
    return pl.detect_split(ds.train, cfg, ds.train_gt if cfg.detector.kind == "oracle" else None)


def _test_dets(cfg: RunConfig, ds: pl.Dataset):
    gts = [g for _, g in ds.test] if cfg.detector.kind == "oracle" else None
    return pl.detect_split([c for c, _ in ds.test], cfg, gts)


# ---------------------------------------------------------------- commands

def cmd_gen_data(args) -> int:
    cfg = _load_config(args)
    out = _prepare_out(args, cfg)
    ds = pl.make_dataset(cfg)
    pl.write_dataset(ds, out)
    pl.write_manifest(out)
    _log(f"wrote {len(ds.train)} training and {len(ds.test)} test videos to {out}")
    return 0


def cmd_train(args) -> int:
    cfg = _load_config(args)
    mode = args.mode or "object"
    ds = pl.read_dataset(args.data)
    out = _prepare_out(args, cfg)
    dets = _train_dets(cfg, ds)
    pl.save_detections(dets, out, "train")
    tasks = cfg.train.enabled_tasks
    model, report = pl.train_stream(
        cfg, ds, dets, mode, progress=lambda e, r: _log(f"epoch {e}: train {r['train_total']:.4f}"
                                                          + (f" val {r['val_total']:.4f}" if "val_total" in r else "")))
    pl.save_stream(out / f"model_{mode}.ckpt", model, cfg, mode, report, tasks)
    (out / f"train_report_{mode}.tsv").write_text(report.to_text())
    pl.write_manifest(out)
    _log(f"selected epoch {report.selected_epoch}; checkpoint {out / f'model_{mode}.ckpt'}")
    return 0


def _write_series(path: Path, series: np.ndarray) -> None:
    path.write_text("frame,score\n" + "".join(f"{i},{float(s)!r}\n" for i, s in enumerate(series)))


def _write_pgm(path: Path, m: np.ndarray) -> None:
    h, w = m.shape
    px = np.clip(np.rint(m * 255.0), 0, 255).astype(np.uint8)
    path.write_bytes(f"P5\n{w} {h}\n255\n".encode() + px.tobytes())


def _score(cfg, ckpt, mode, ds, test_dets):
    model, meta = pl.load_stream(ckpt, mode)
    return pl.score_stream(cfg, model, ds.test, test_dets, mode, tuple(meta["tasks"]), meta["t"])


def cmd_infer(args) -> int:
    cfg = _load_config(args)
    mode = args.mode or "object"
    if mode not in ("object", "frame"):
        raise ValueError("infer --mode must be 'object' or 'frame'")
    if not args.checkpoint:
        raise ValueError("infer needs --checkpoint")
    ds = pl.read_dataset(args.data)
    out = _prepare_out(args, cfg)
    test_dets = _test_dets(cfg, ds)
    pl.save_detections(test_dets, out, "test")
    scores = _score(cfg, args.checkpoint, mode, ds, test_dets)
    sdir = out / f"scores_{mode}"
    sdir.mkdir(exist_ok=True)
    for i, s in enumerate(scores.series):
        _write_series(sdir / f"video_{i:03d}.csv", s)
    if args.maps and scores.object_results:
        for i, r in enumerate(scores.object_results):
            mdir = out / "maps" / f"video_{i:03d}"
            mdir.mkdir(parents=True, exist_ok=True)
            for f, m in enumerate(r.maps):
                _write_pgm(mdir / f"frame_{f:04d}.pgm", m)
    pl.write_manifest(out)
    return 0


def cmd_eval(args) -> int:
    cfg = _load_config(args)
    mode = args.mode or "object"
    if mode not in ("object", "frame", "fusion"):
        raise ValueError("eval --mode must be 'object', 'frame' or 'fusion'")
    need_object = mode in ("object", "fusion")
    need_frame = mode in ("frame", "fusion")
    obj_ckpt = args.checkpoint if mode != "frame" else None
    frame_ckpt = args.frame_checkpoint if mode == "fusion" else (args.checkpoint if mode == "frame" else None)
    if need_object and not obj_ckpt:
        raise ValueError(f"eval --mode {mode} needs an object-level --checkpoint")
    if need_frame and not frame_ckpt:
        raise ValueError(f"eval --mode {mode} needs a frame-level "
                         + ("--frame-checkpoint" if mode == "fusion" else "--checkpoint"))
    for p in (obj_ckpt, frame_ckpt):
        if p and not Path(p).is_file():
            raise FileNotFoundError(f"checkpoint {p} not found")
    ds = pl.read_dataset(args.data)
    out = _prepare_out(args, cfg)
    test_dets = _test_dets(cfg, ds)
    obj = _score(cfg, obj_ckpt, "object", ds, test_dets) if need_object else None
    frm = _score(cfg, frame_ckpt, "frame", ds, test_dets) if need_frame else None
    if mode == "object":
        series, results = obj.series, obj.object_results
    elif mode == "frame":
        series, results = frm.series, None
    else:
        series, results = pl.fuse(obj.series, frm.series), None
    result = pl.evaluate_scores(cfg, ds.test, series, results)
    sdir = out / f"scores_{mode}"
    sdir.mkdir(exist_ok=True)
    for i, s in enumerate(series):
        _write_series(sdir / f"video_{i:03d}.csv", s)
    (out / f"eval_{mode}.csv").write_text(result.to_csv())
    for name, pts in result.curves.items():
        (out / f"curve_{name}.csv").write_text("fpr,rate\n" + "".join(f"{x!r},{y!r}\n" for x, y in pts))
    pl.write_manifest(out)
    print(result.to_table(), end="")
    return 0


def cmd_ablate(args) -> int:
    cfg = _load_config(args)
    ds = pl.read_dataset(args.data)
    out = _prepare_out(args, cfg)
    archs = args.archs.split(",") if args.archs else [cfg.model.name]
    subsets = ([tuple(s.split("+")) for s in args.subsets.split(",")] if args.subsets
               else list(pl.ABLATION_SUBSETS))
    rows = run_ablation(cfg, ds, archs, subsets, log=_log)
    text = format_ablation(rows)
    (out / "ablation.tsv").write_text(text)
    pl.write_manifest(out)
    print(text, end="")
    return 0


def run_ablation(cfg: RunConfig, ds: pl.Dataset, archs, subsets, log=None) -> list[dict]:
    from dataclasses import replace

    from .model import ArchitectureConfig
    from .training import collect_samples

    train_dets = _train_dets(cfg, ds)
    test_dets = _test_dets(cfg, ds)
    teacher = pl.make_teacher(cfg)
    samples = collect_samples(ds.train, train_dets, teacher, cfg.train_config())
    rows = []
    for arch in archs:
        acfg = replace(cfg, model=ArchitectureConfig.from_name(arch, input_side=cfg.model.input_side))
        for tasks in subsets:
            model, report = pl.train_stream(acfg, ds, train_dets, "object", tasks, samples=samples)
            scores = pl.score_stream(acfg, model, ds.test, test_dets, "object", tasks)
            auc = pl.evaluate_scores(acfg, ds.test, scores.series).frame_auc
            sel = report.selected
            split = report.selection_split
            row = {"arch": arch, "tasks": "+".join(tasks), "auc": auc}
            for k, col in (("T1", f"{split}_acc_T1"), ("T2", f"{split}_acc_T2"),
                           ("T3", f"{split}_T3"), ("T4", f"{split}_T4")):
                row[k] = sel.get(col) if k in tasks else None
            rows.append(row)
            if log:
                log(f"{arch} {row['tasks']}: AUC {auc:.4f}")
    return rows


def format_ablation(rows: list[dict]) -> str:
    head = "arch\ttasks\tacc_T1\tacc_T2\tmae_T3\tmae_T4\tauc"
    lines = [head]
    for r in rows:
        vals = ["" if r[k] is None else f"{r[k]:.4f}" for k in TASKS]
        lines.append("\t".join([r["arch"], r["tasks"], *vals, f"{r['auc']:.4f}"]))
    return "\n".join(lines) + "\n"


# ------------------------------------------------------------------- main

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="proxyvad", description="Object-centric video anomaly detection")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_required=True):
        sp.add_argument("--config", help="plain-text run configuration")
        sp.add_argument("--seed", type=int, help="override run.seed")
        sp.add_argument("--out", required=out_required, help="output directory")

    sp = sub.add_parser("gen-data", help="generate a SpriteWorld dataset")
    common(sp)
    sp.set_defaults(func=cmd_gen_data)

    sp = sub.add_parser("train", help="train an object- or frame-level model")
    common(sp)
    sp.add_argument("--data", required=True)
    sp.add_argument("--mode", choices=["object", "frame"])
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("infer", help="write per-frame scores (and optionally maps)")
    common(sp)
    sp.add_argument("--data", required=True)
    sp.add_argument("--checkpoint")
    sp.add_argument("--mode", choices=["object", "frame"])
    sp.add_argument("--maps", action="store_true", help="also write anomaly maps as PGM images")
    sp.set_defaults(func=cmd_infer)

    sp = sub.add_parser("eval", help="score the test split and compute AUC/RBDC/TBDC")
    common(sp)
    sp.add_argument("--data", required=True)
    sp.add_argument("--checkpoint")
    sp.add_argument("--frame-checkpoint")
    sp.add_argument("--mode", choices=["object", "frame", "fusion"])
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("ablate", help="train and evaluate task subsets")
    common(sp)
    sp.add_argument("--data", required=True)
    sp.add_argument("--archs", help="comma-separated architectures, e.g. shallow+narrow,deep+wide")
    sp.add_argument("--subsets", help="comma-separated task subsets, e.g. T1,T1+T3")
    sp.set_defaults(func=cmd_ablate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
