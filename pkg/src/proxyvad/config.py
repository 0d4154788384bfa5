"""Run configuration as plain ``section.key = value`` text.

One global seed feeds every module through fixed derivation labels, so the
per-module configs below never carry a seed of their own in the file.
"""

from __future__ import annotations

import typing
from dataclasses import dataclass, field, fields, replace

from .detection import DetectorConfig
from .inference import SmoothingConfig
from .model import ArchitectureConfig
from .spriteworld import SceneConfig
from .training import TrainConfig, derive_seed


@dataclass(frozen=True)
class TeacherConfig:
    n_cls: int = 32


@dataclass(frozen=True)
class MetricConfig:
    iou_threshold: float = 0.1
    track_fraction: float = 0.1
    macro_auc: bool = False


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    scene: SceneConfig = field(default_factory=SceneConfig)
    detector: DetectorConfig = field(default_factory=DetectorConfig)
    teacher: TeacherConfig = field(default_factory=TeacherConfig)
    model: ArchitectureConfig = field(default_factory=ArchitectureConfig)
    train: TrainConfig = field(default_factory=lambda: TrainConfig(batch_size=8, sample_stride=12))
    smoothing: SmoothingConfig = field(default_factory=SmoothingConfig)
    metrics: MetricConfig = field(default_factory=MetricConfig)

    # ---------------------------------------------------- derived configs

    def scene_config(self) -> SceneConfig:
        return replace(self.scene, seed=derive_seed(self.seed, "spriteworld") % (1 << 31))

    def train_config(self, **overrides) -> TrainConfig:
        return replace(self.train, seed=derive_seed(self.seed, "training") % (1 << 31), **overrides)

    def teacher_seed(self) -> int:
        return derive_seed(self.seed, "teacher") % (1 << 31)

    def arch_config(self) -> ArchitectureConfig:
        return replace(self.model, n_distill=self.teacher.n_cls + self.detector.n_det)

    def with_seed(self, seed: int) -> "RunConfig":
        return replace(self, seed=int(seed))

    # ------------------------------------------------------- text format

    def to_text(self) -> str:
        lines = ["# proxyvad run configuration", f"run.seed = {self.seed}"]
        for section in _SECTIONS:
            sub = getattr(self, section)
            for f in fields(sub):
                if f.name in _DERIVED.get(section, ()):
                    continue
                lines.append(f"{section}.{f.name} = {_format(getattr(sub, f.name))}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "RunConfig":
        values: dict[str, dict[str, str]] = {}
        seed = cls.seed
        for n, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line or "." not in line.split("=", 1)[0]:
                raise ValueError(f"line {n}: expected 'section.key = value', got {raw!r}")
            key, value = (s.strip() for s in line.split("=", 1))
            section, name = key.split(".", 1)
            if section == "run" and name == "seed":
                seed = int(value)
                continue
            if section not in _SECTIONS:
                raise ValueError(f"line {n}: unknown section {section!r}")
            values.setdefault(section, {})[name] = value
        base = cls()
        kwargs = {"seed": seed}
        for section in _SECTIONS:
            current = getattr(base, section)
            given = values.get(section, {})
            hints = typing.get_type_hints(type(current))
            known = {f.name for f in fields(current)} - set(_DERIVED.get(section, ()))
            unknown = set(given) - known
            if unknown:
                raise ValueError(f"unknown keys in section {section!r}: {sorted(unknown)}")
            parsed = {k: _parse(v, hints[k], getattr(current, k)) for k, v in given.items()}
            kwargs[section] = replace(current, **parsed)
        return cls(**kwargs)

    @classmethod
    def load(cls, path) -> "RunConfig":
        with open(path) as fh:
            return cls.from_text(fh.read())


_SECTIONS = ("scene", "detector", "teacher", "model", "train", "smoothing", "metrics")
_DERIVED = {"scene": ("seed",), "train": ("seed",), "model": ("n_distill",)}


def _format(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ", ".join(_format(x) for x in v) if v else "()"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _parse_scalar(text: str, kind):
    text = text.strip()
    if kind is bool:
        if text.lower() not in ("true", "false"):
            raise ValueError(f"expected true/false, got {text!r}")
        return text.lower() == "true"
    if kind is int:
        return int(text)
    if kind is float:
        return float(text)
    return text


def _parse(text: str, hint, default):
    text = text.strip()
    args = typing.get_args(hint)
    if type(None) in args:
        if text.lower() == "none":
            return None
        hint = next(a for a in args if a is not type(None))
        args = typing.get_args(hint)
    origin = typing.get_origin(hint)
    if origin is tuple:
        if text == "()":
            return ()
        parts = [p for p in text.split(",")]
        if len(args) == 2 and args[1] is Ellipsis:
            kinds = [args[0]] * len(parts)
        else:
            if len(parts) != len(args):
                raise ValueError(f"expected {len(args)} comma-separated values, got {text!r}")
            kinds = list(args)
        return tuple(_parse_scalar(p, k) for p, k in zip(parts, kinds))
    return _parse_scalar(text, hint)

