"""Joint multi-task training with validation-based checkpoint selection."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import numerics as nx
from .model import TASKS, ArchitectureConfig, MultiTaskModel, build_model
from .sequences import ObjectSample, build_object_samples, split_train_val
from .teachers import TeacherBundle

PAPER_BATCH_SIZES = {"shallow+narrow": 256, "shallow+wide": 128, "deep+narrow": 128, "deep+wide": 64}


@dataclass(frozen=True)
class TrainConfig:
    lam: float = 0.2
    epochs: int = 30
    batch_size: int | None = None  # None: the per-architecture value in PAPER_BATCH_SIZES
    t: int = 3
    seed: int = 0
    enabled_tasks: tuple[str, ...] = TASKS
    learning_rate: float = 1e-3
    sample_stride: int = 1

    def __post_init__(self):
        if not 0.0 < self.lam <= 1.0:
            raise ValueError(f"lambda must lie in (0, 1], got {self.lam}")
        if not self.enabled_tasks:
            raise ValueError("enabled_tasks must not be empty")
        for task in self.enabled_tasks:
            if task not in TASKS:
                raise ValueError(f"unknown task {task!r}")
        if self.epochs < 1 or self.t < 1 or self.sample_stride < 1:
            raise ValueError("epochs, t and sample_stride must be positive")
        if self.batch_size is not None and self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be non-negative")

    def resolved_batch_size(self, arch: ArchitectureConfig) -> int:
        return self.batch_size or PAPER_BATCH_SIZES[arch.name]


def derive_seed(seed: int, label: str) -> int:
    """Stable 63-bit seed for a named purpose."""
    ss = np.random.SeedSequence([seed, *label.encode()])
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


# ------------------------------------------------------------- joint loss

@dataclass
class BatchStats:
    losses: dict[str, float]
    correct: dict[str, int]
    n_objects: int


def joint_loss(model: MultiTaskModel, batch: list[ObjectSample], config: TrainConfig,
               training: bool = True) -> tuple[nx.DiffTensor, BatchStats]:
    """Total loss ``L1 + L2 + L3 + λ·L4`` over a batch of objects; disabled tasks add 0."""
    if not batch:
        raise ValueError("joint_loss needs a non-empty batch")
    tasks = set(config.enabled_tasks)
    B = len(batch)
    t = (batch[0].consecutive.shape[0] - 1) // 2
    consec = np.stack([o.consecutive for o in batch])
    terms: dict[str, nx.DiffTensor] = {}
    correct: dict[str, int] = {}

    if tasks & {"T1", "T2"}:
        groups = [consec]
        if "T1" in tasks:
            groups.append(consec[:, ::-1])
        if "T2" in tasks:
            if any(o.intermittent is None for o in batch):
                raise ValueError("T2 enabled but some objects lack an intermittent window")
            groups.append(np.stack([o.intermittent for o in batch]))
        feats = model.forward_shared(np.concatenate(groups), training=training)
        f_consec = nx.take_rows(feats, 0, B)
        offset = B
        labels = np.concatenate([np.tile([1.0, 0.0], (B, 1)), np.tile([0.0, 1.0], (B, 1))])
        for task in ("T1", "T2"):
            if task not in tasks:
                continue
            other = nx.take_rows(feats, offset, offset + B)
            offset += B
            logits = model.forward_head(task, nx.concat([f_consec, other]), training=training)
            terms[task] = nx.cross_entropy_loss(logits, labels)
            pred = np.argmax(logits.data, axis=1)
            correct[task] = int(np.sum(pred == np.argmax(labels, axis=1)))

    if "T3" in tasks:
        context = np.delete(consec, t, axis=1)
        recon = model.forward_decoder(model.forward_shared(context, training=training), training=training)
        terms["T3"] = nx.l1_loss(recon, consec[:, t])

    if "T4" in tasks:
        if any(o.t4_target is None for o in batch):
            raise ValueError("T4 enabled but some objects lack a distillation target")
        feats4 = model.forward_shared(consec[:, t:t + 1], training=training)
        out = model.forward_head("T4", feats4, training=training)
        target = np.stack([o.t4_target for o in batch]).astype(out.dtype)
        terms["T4"] = nx.l1_loss(out, target)

    total = None
    for task in TASKS:
        if task in terms:
            term = terms[task] * config.lam if task == "T4" else terms[task]
            total = term if total is None else total + term
    losses = {k: float(v.data) for k, v in terms.items()}
    losses["total"] = float(total.data)
    return total, BatchStats(losses, correct, B)


# ------------------------------------------------------------------ epochs

@dataclass
class EpochStats:
    losses: dict[str, float]
    accuracy: dict[str, float]
    n_objects: int


def _merge(parts: list[BatchStats]) -> EpochStats:
    n = sum(p.n_objects for p in parts)
    keys = parts[0].losses.keys()
    losses = {k: sum(p.losses[k] * p.n_objects for p in parts) / n for k in keys}
    acc = {k: sum(p.correct[k] for p in parts) / (2 * n) for k in parts[0].correct}
    return EpochStats(losses, acc, n)


def _batches(n: int, size: int, order: np.ndarray):
    for s in range(0, n, size):
        yield order[s:s + size]


def train_epoch(model: MultiTaskModel, samples: list[ObjectSample], state: nx.AdamState,
                config: TrainConfig, rng: np.random.Generator, batch_size: int | None = None) -> EpochStats:
    """One pass over ``samples`` in seeded-shuffle order, one Adam step per batch."""
    if not samples:
        raise ValueError("train_epoch needs at least one sample")
    size = batch_size or config.resolved_batch_size(model.config)
    params = model.parameters()
    parts = []
    for idx in _batches(len(samples), size, rng.permutation(len(samples))):
        model.zero_grad()
        loss, stats = joint_loss(model, [samples[i] for i in idx], config, training=True)
        if not np.isfinite(stats.losses["total"]):
            raise FloatingPointError(f"non-finite loss in training: {stats.losses}")
        loss.backward()
        del loss
        nx.adam_step(params, [p.grad for p in params], state)
        parts.append(stats)
    return _merge(parts)


def evaluate(model: MultiTaskModel, samples: list[ObjectSample], config: TrainConfig,
             batch_size: int = 8) -> EpochStats:
    """Losses and accuracies in eval mode (running batch-norm statistics)."""
    if not samples:
        raise ValueError("evaluate needs at least one sample")
    parts = []
    with nx.no_grad():
        for s in range(0, len(samples), batch_size):
            parts.append(joint_loss(model, samples[s:s + batch_size], config, training=False)[1])
    return _merge(parts)


# --------------------------------------------------------------------- fit

@dataclass
class TrainReport:
    rows: list[dict] = field(default_factory=list)
    selected_epoch: int = -1
    n_train_objects: int = 0
    n_val_objects: int = 0
    selection_split: str = "val"

    def columns(self) -> list[str]:
        cols = ["epoch"]
        for split in ("train", "val"):
            for key in ("total", *TASKS, "acc_T1", "acc_T2"):
                name = f"{split}_{key}"
                if any(name in r for r in self.rows):
                    cols.append(name)
        return cols

    def to_text(self) -> str:
        cols = self.columns()
        lines = [f"# selected_epoch={self.selected_epoch} train_objects={self.n_train_objects} "
                 f"val_objects={self.n_val_objects} selection={self.selection_split}",
                 "\t".join(cols)]
        for r in self.rows:
            lines.append("\t".join(str(r[c]) if c == "epoch" else
                                   (f"{r[c]:.6g}" if c in r else "") for c in cols))
        return "\n".join(lines) + "\n"

    @property
    def selected(self) -> dict:
        return self.rows[self.selected_epoch]


def _row(epoch: int, train: EpochStats, val: EpochStats | None) -> dict:
    row = {"epoch": epoch}
    for split, st in (("train", train), ("val", val)):
        if st is None:
            continue
        for k, v in st.losses.items():
            row[f"{split}_{k}"] = v
        for k, v in st.accuracy.items():
            row[f"{split}_acc_{k}"] = v
    return row


def collect_samples(videos, detections, teacher: TeacherBundle, config: TrainConfig):
    """Training and validation object bundles from the 85/15 per-video split."""
    train, val = [], []
    for vid, ((tr, va), video, dets) in enumerate(zip(split_train_val(videos), videos, detections)):
        seed = derive_seed(config.seed, "task2")
        train += build_object_samples(video, dets, teacher, config.t, seed, vid, tr, config.sample_stride)
        val += build_object_samples(video, dets, teacher, config.t, seed, vid, va, config.sample_stride)
    return train, val


def fit(videos, detections, teacher: TeacherBundle, arch: ArchitectureConfig, config: TrainConfig,
        samples: tuple[list, list] | None = None, progress=None) -> tuple[MultiTaskModel, TrainReport]:
    """Train ``config.epochs`` epochs and return the lowest-validation-loss model.

    ``detections`` holds per-video, per-frame detection lists. When no
    validation object fits, selection falls back to the training loss.
    """
    if not videos:
        raise ValueError("fit needs at least one training video")
    if arch.n_distill != teacher.n_distill:
        raise ValueError(f"architecture has n_distill={arch.n_distill}, teacher gives {teacher.n_distill}")
    train, val = samples if samples is not None else collect_samples(videos, detections, teacher, config)
    if not train:
        raise ValueError(f"no training samples could be extracted "
                         f"({len(videos)} videos, {sum(len(d) for v in detections for d in v)} detections)")
    model = build_model(arch, seed=derive_seed(config.seed, "model"))
    state = nx.AdamState.for_params(model.parameters(), learning_rate=config.learning_rate)
    rng = np.random.default_rng(derive_seed(config.seed, "shuffle"))
    report = TrainReport(n_train_objects=len(train), n_val_objects=len(val),
                         selection_split="val" if val else "train")
    best_loss, best_model = np.inf, None
    for epoch in range(config.epochs):
        tr_stats = train_epoch(model, train, state, config, rng)
        va_stats = evaluate(model, val, config) if val else None
        report.rows.append(_row(epoch, tr_stats, va_stats))
        score = (va_stats or tr_stats).losses["total"]
        if score < best_loss:
            best_loss, best_model, report.selected_epoch = score, model.copy(), epoch
        if progress is not None:
            progress(epoch, report.rows[-1])
    return best_model, report
