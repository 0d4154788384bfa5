"""Shared 3D backbone with four task heads, plus checkpoint I/O."""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import numerics as nx
from .numerics import DiffTensor, RunningStats

TASKS = ("T1", "T2", "T3", "T4")
ARCHITECTURES = ("shallow+narrow", "shallow+wide", "deep+narrow", "deep+wide")
HEAD_FILTERS = 32

# Backbone layer plans; integers are 3D conv filter counts (narrow), "s" is
# 1×2×2 pooling and "g" is the final global-temporal pooling.
_PLANS = {
    "shallow": (16, "s", 32, "s", 32, "g"),
    "deep": (16, 16, "s", 32, 32, "s", 32, "s", 32, "g"),
}


@dataclass(frozen=True)
class ArchitectureConfig:
    depth: str = "shallow"
    width: str = "narrow"
    input_side: int = 64
    decoder_output_channels: int = 3
    n_distill: int = 40

    def __post_init__(self):
        if self.depth not in _PLANS:
            raise ValueError(f"depth must be 'shallow' or 'deep', got {self.depth!r}")
        if self.width not in ("narrow", "wide"):
            raise ValueError(f"width must be 'narrow' or 'wide', got {self.width!r}")
        n_pool = sum(1 for step in _PLANS[self.depth] if isinstance(step, str))
        if self.input_side % (2 ** (n_pool + 1)):
            raise ValueError(f"input_side must be divisible by {2 ** (n_pool + 1)}")
        if self.n_distill < 1:
            raise ValueError("n_distill must be positive")

    @property
    def name(self) -> str:
        return f"{self.depth}+{self.width}"

    @classmethod
    def from_name(cls, name: str, **kwargs) -> "ArchitectureConfig":
        depth, width = name.split("+")
        return cls(depth=depth, width=width, **kwargs)

    def plan(self) -> tuple:
        mult = 2 if self.width == "wide" else 1
        return tuple(s * mult if isinstance(s, int) else s for s in _PLANS[self.depth])

    def backbone_filters(self) -> tuple[int, ...]:
        return tuple(s for s in self.plan() if isinstance(s, int))

    @property
    def n_pool(self) -> int:
        return sum(1 for s in self.plan() if isinstance(s, str))

    @property
    def feature_side(self) -> int:
        return self.input_side // 2 ** self.n_pool

    def decoder_plan(self) -> tuple:
        """Decoder steps: integers are 2D conv widths, "u" is a 2× upsample."""
        filters = self.backbone_filters()
        widths = list(reversed(filters))[:-1] + [self.decoder_output_channels]
        n_up = self.n_pool
        if len(widths) == n_up:
            steps: list = []
            for w in widths:
                steps += ["u", w]
        else:
            steps = []
            for w in widths[:n_up]:
                steps += [w, "u"]
            steps += widths[n_up:]
        return tuple(steps)


class MultiTaskModel:
    """Parameters live in ``params`` (declaration order); BN running stats in ``stats``."""

    def __init__(self, config: ArchitectureConfig, seed: int, dtype=np.float32):
        self.config = config
        self.seed = int(seed)
        self.dtype = np.dtype(dtype)
        self.params: dict[str, DiffTensor] = {}
        self.stats: dict[str, RunningStats] = {}
        self._rng = np.random.default_rng(self.seed)
        self._build()
        del self._rng
        self._check_symmetry()

    # ------------------------------------------------------------ building

    def _param(self, name, shape, fan_in=None):
        if fan_in is None:
            data = np.zeros(shape, dtype=self.dtype)
        else:
            std = np.sqrt(2.0 / fan_in)
            data = (self._rng.standard_normal(shape) * std).astype(self.dtype)
        self.params[name] = DiffTensor(data, requires_grad=True, name=name)

    def _conv(self, prefix, nd, c_in, c_out, norm=True):
        self._param(f"{prefix}.kernel", (3,) * nd + (c_in, c_out), fan_in=3 ** nd * c_in)
        self._param(f"{prefix}.bias", (c_out,))
        if norm:
            self.params[f"{prefix}.gamma"] = DiffTensor(
                np.ones(c_out, dtype=self.dtype), requires_grad=True, name=f"{prefix}.gamma")
            self._param(f"{prefix}.beta", (c_out,))
            if not prefix.startswith("backbone."):
                self.stats[prefix] = RunningStats.create(c_out, self.dtype)

    def _build(self):
        cfg = self.config
        c = 3
        self.backbone_layers: list[tuple[str, str]] = []
        k = 0
        for step in cfg.plan():
            if isinstance(step, int):
                name = f"backbone.conv{k}"
                self._conv(name, 3, c, step)
                self.backbone_layers.append(("conv", name))
                c, k = step, k + 1
            else:
                self.backbone_layers.append(("pool_" + step, ""))
        self.feature_channels = c

        pooled = cfg.feature_side // 2
        for task in ("T1", "T2", "T4"):
            units = cfg.n_distill if task == "T4" else 2
            self._conv(f"{task}.conv", 2, c, HEAD_FILTERS)
            self._param(f"{task}.fc.weight", (pooled * pooled * HEAD_FILTERS, units),
                        fan_in=pooled * pooled * HEAD_FILTERS)
            self._param(f"{task}.fc.bias", (units,))

        self.decoder_layers: list[tuple[str, str]] = []
        steps = cfg.decoder_plan()
        n_conv = sum(1 for s in steps if isinstance(s, int))
        c_dec, k = c, 0
        for step in steps:
            if step == "u":
                self.decoder_layers.append(("up", ""))
            else:
                last = k == n_conv - 1
                name = f"T3.conv{k}"
                self._conv(name, 2, c_dec, step, norm=not last)
                self.decoder_layers.append(("conv_out" if last else "conv", name))
                c_dec, k = step, k + 1

    def _check_symmetry(self):
        n_conv3d = sum(1 for kind, _ in self.backbone_layers if kind == "conv")
        n_pool = sum(1 for kind, _ in self.backbone_layers if kind.startswith("pool"))
        n_up = sum(1 for kind, _ in self.decoder_layers if kind == "up")
        n_conv2d = sum(1 for kind, _ in self.decoder_layers if kind.startswith("conv"))
        assert n_up == n_pool, "decoder upsamples must equal backbone poolings"
        assert n_conv2d == n_conv3d, "decoder convs must equal backbone convs"
        assert self.params[self.decoder_layers[-1][1] + ".kernel"].shape[-1] == \
            self.config.decoder_output_channels

    # ------------------------------------------------------------- forward

    def _running_stats(self, name: str, length: int | None) -> RunningStats:
        # backbone layers keep one set of running stats per input temporal length
        if length is None:
            return self.stats[name]
        key = f"{name}@T{length}"
        if key not in self.stats:
            self.stats[key] = RunningStats.create(self.params[f"{name}.gamma"].shape[0], self.dtype)
        return self.stats[key]

    def _block(self, x, name, training, conv, length=None):
        p = self.params
        y = conv(x, p[f"{name}.kernel"], p[f"{name}.bias"])
        y = nx.batch_norm(y, p[f"{name}.gamma"], p[f"{name}.beta"], training,
                          self._running_stats(name, length))
        return nx.relu(y)

    def forward_shared(self, x, training: bool = False) -> DiffTensor:
        """``(B×)T×S×S×3`` → ``(B×)1×s×s×C`` for any T ≥ 1."""
        x = nx.as_tensor(x)
        side = self.config.input_side
        if x.ndim not in (4, 5) or x.shape[-3:] != (side, side, 3):
            raise ValueError(f"expected (B×)T×{side}×{side}×3 input, got {x.shape}")
        single = x.ndim == 4
        if single:
            x = DiffTensor(x.data[None])
        if x.dtype != self.dtype:
            x = DiffTensor(x.data.astype(self.dtype))
        length = x.shape[-4]
        for kind, name in self.backbone_layers:
            if kind == "conv":
                x = self._block(x, name, training, nx.conv3d, length)
            elif kind == "pool_s":
                x = nx.maxpool3d_spatial(x)
            else:
                x = nx.maxpool3d_global_temporal(x)
        if single:
            x = _drop_batch(x)
        return x

    def forward_head(self, task: str, features, training: bool = False) -> DiffTensor:
        if task == "T3":
            raise ValueError("T3 is the reconstruction head; use forward_decoder")
        if task not in ("T1", "T2", "T4"):
            raise ValueError(f"unknown task {task!r}")
        feats, single = self._features_2d(features)
        y = self._block(feats, f"{task}.conv", training, nx.conv2d)
        y = nx.maxpool2d(y)
        y = nx.fully_connected(y, self.params[f"{task}.fc.weight"], self.params[f"{task}.fc.bias"])
        return _drop_batch(y) if single else y

    def forward_decoder(self, features, training: bool = False) -> DiffTensor:
        y, single = self._features_2d(features)
        p = self.params
        for kind, name in self.decoder_layers:
            if kind == "up":
                y = nx.upsample_nearest_2x(y)
            elif kind == "conv":
                y = self._block(y, name, training, nx.conv2d)
            else:
                y = nx.conv2d(y, p[f"{name}.kernel"], p[f"{name}.bias"])
        return _drop_batch(y) if single else y

    def _features_2d(self, features):
        f = nx.as_tensor(features)
        s, c = self.config.feature_side, self.feature_channels
        if f.shape[-4:] != (1, s, s, c):
            raise ValueError(f"features must be (B×)1×{s}×{s}×{c}, got {f.shape}")
        single = f.ndim == 4
        if single:
            f = DiffTensor.from_op(f.data[None], (f,), lambda g: (g[0],))
        return nx.squeeze_time(f), single

    # ------------------------------------------------------------- helpers

    def parameters(self) -> list[DiffTensor]:
        return list(self.params.values())

    def head_parameter_names(self, task: str) -> list[str]:
        return [n for n in self.params if n.startswith(task + ".")]

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def count_parameters(self) -> int:
        return int(sum(p.data.size for p in self.params.values()))

    def copy(self) -> "MultiTaskModel":
        clone = object.__new__(MultiTaskModel)
        clone.config, clone.seed, clone.dtype = self.config, self.seed, self.dtype
        clone.backbone_layers = list(self.backbone_layers)
        clone.decoder_layers = list(self.decoder_layers)
        clone.feature_channels = self.feature_channels
        clone.params = {n: DiffTensor(p.data.copy(), requires_grad=True, name=n)
                        for n, p in self.params.items()}
        clone.stats = {n: RunningStats(s.mean.copy(), s.var.copy(), s.momentum)
                       for n, s in self.stats.items()}
        return clone

    def state_arrays(self) -> dict[str, np.ndarray]:
        """Parameters then running stats, in declaration order."""
        out = {n: p.data for n, p in self.params.items()}
        for n, s in self.stats.items():
            out[f"{n}.running_mean"] = s.mean
            out[f"{n}.running_var"] = s.var
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        for n, p in self.params.items():
            if arrays[n].shape != p.shape:
                raise ValueError(f"checkpoint shape mismatch for {n}")
            p.data = arrays[n].astype(self.dtype, copy=True)
        for key in arrays:
            if key.endswith(".running_mean"):
                n = key[: -len(".running_mean")]
                self.stats[n] = RunningStats(arrays[key].astype(self.dtype, copy=True),
                                             arrays[f"{n}.running_var"].astype(self.dtype, copy=True))


def _drop_batch(x: DiffTensor) -> DiffTensor:
    return DiffTensor.from_op(x.data[0], (x,), lambda g: (g[None],))


def build_model(config: ArchitectureConfig, seed: int = 0, dtype=np.float32) -> MultiTaskModel:
    return MultiTaskModel(config, seed, dtype)


def forward_shared(model: MultiTaskModel, sequence, mode: str = "eval") -> DiffTensor:
    return model.forward_shared(sequence, training=_training(mode))


def forward_head(model: MultiTaskModel, task: str, features, mode: str = "eval") -> DiffTensor:
    return model.forward_head(task, features, training=_training(mode))


def forward_decoder(model: MultiTaskModel, features, mode: str = "eval") -> DiffTensor:
    return model.forward_decoder(features, training=_training(mode))


def count_parameters(model: MultiTaskModel) -> int:
    return model.count_parameters()


def _training(mode: str) -> bool:
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    return mode == "train"


# ------------------------------------------------------------- checkpoints
#
# Layout (all integers little-endian):
#   8 bytes   magic b"PVADCKPT"
#   u32       format version
#   u64       header length N
#   N bytes   UTF-8 JSON header: config, seed, dtype, meta, array manifest
#   ...       raw array bytes, concatenated in manifest order

CKPT_MAGIC = b"PVADCKPT"
CKPT_VERSION = 1


def save_checkpoint(path, model: MultiTaskModel, meta: dict | None = None) -> None:
    arrays = model.state_arrays()
    manifest, offset = [], 0
    blobs = []
    for name, arr in arrays.items():
        a = np.ascontiguousarray(arr, dtype=arr.dtype.newbyteorder("<"))
        manifest.append({"name": name, "shape": list(a.shape), "dtype": a.dtype.str,
                         "offset": offset, "nbytes": a.nbytes})
        offset += a.nbytes
        blobs.append(a.tobytes())
    header = {
        "format_version": CKPT_VERSION,
        "config": asdict(model.config),
        "seed": model.seed,
        "dtype": model.dtype.str,
        "meta": meta or {},
        "arrays": manifest,
    }
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(struct.pack("<IQ", CKPT_VERSION, len(hbytes)))
        fh.write(hbytes)
        for b in blobs:
            fh.write(b)


def load_checkpoint(path) -> tuple[MultiTaskModel, dict]:
    """Return the model and the ``meta`` dict stored with it."""
    raw = Path(path).read_bytes()
    if raw[:8] != CKPT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    version, hlen = struct.unpack("<IQ", raw[8:20])
    if version != CKPT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    header = json.loads(raw[20:20 + hlen].decode("utf-8"))
    base = 20 + hlen
    arrays = {}
    for entry in header["arrays"]:
        start = base + entry["offset"]
        buf = raw[start:start + entry["nbytes"]]
        arrays[entry["name"]] = np.frombuffer(buf, dtype=np.dtype(entry["dtype"])).reshape(entry["shape"])
    model = MultiTaskModel(ArchitectureConfig(**header["config"]), header["seed"],
                           np.dtype(header["dtype"]))
    model.load_state_arrays(arrays)
    return model, header["meta"]
