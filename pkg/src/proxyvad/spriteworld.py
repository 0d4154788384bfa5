"""SpriteWorld: a seeded synthetic surveillance scene with moving sprites.

Normal videos contain slow circles and squares that bounce off the borders.
Test videos add one anomalous sprite for a contiguous interval: a normal shape
moving fast, a shape class never seen in training, or a sprite following an
erratic random-walk velocity.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

SHAPES = ("circle", "square", "triangle", "diamond")
ANOMALY_TYPES = ("fast_motion", "unseen_shape", "erratic_motion")

_NORMAL_COLORS = np.array([[220, 50, 50], [50, 90, 220], [230, 200, 40]], dtype=np.float64)
_UNSEEN_COLOR = np.array([40, 200, 80], dtype=np.float64)
_MARKER_SHADE = 0.25  # leading-edge darkening factor


@dataclass(frozen=True)
class SceneConfig:
    frame_size: tuple[int, int] = (120, 160)
    n_train_videos: int = 12
    n_test_videos: int = 6
    frames_per_video: int = 100
    normal_shapes: tuple[str, ...] = ("circle", "square")
    anomaly_types: tuple[str, ...] = ANOMALY_TYPES
    speed_normal: tuple[float, float] = (1.0, 2.0)
    speed_anomalous: float = 5.0
    n_normal_sprites: int = 2
    sprite_size: tuple[int, int] = (14, 20)
    anomaly_duration: tuple[int, int] = (35, 50)
    seed: int = 0

    def __post_init__(self):
        if not self.normal_shapes:
            raise ValueError("normal_shapes must not be empty")
        for s in self.normal_shapes:
            if s not in SHAPES:
                raise ValueError(f"unknown shape {s!r}")
        for a in self.anomaly_types:
            if a not in ANOMALY_TYPES:
                raise ValueError(f"unknown anomaly type {a!r}")
        if "unseen_shape" in self.anomaly_types and not set(SHAPES) - set(self.normal_shapes):
            raise ValueError("unseen_shape needs a shape class outside normal_shapes")
        lo, hi = self.speed_normal
        if not 0 < lo <= hi:
            raise ValueError("speed_normal must be a positive (low, high) range")
        if self.speed_anomalous <= hi:
            raise ValueError("speed_anomalous must exceed the normal speed range")
        if min(self.n_train_videos, self.n_test_videos, self.frames_per_video) < 1:
            raise ValueError("video counts and length must be positive")
        h, w = self.frame_size
        if self.sprite_size[1] >= min(h, w):
            raise ValueError("sprites must fit inside the frame")
        if self.anomaly_duration[0] > self.frames_per_video:
            raise ValueError("anomaly_duration exceeds frames_per_video")


@dataclass
class Region:
    box: tuple[int, int, int, int]  # x1, y1, x2, y2 with exclusive upper corner
    cls: int
    anomalous: bool
    track_id: int


@dataclass
class GroundTruth:
    frame_labels: np.ndarray
    regions: list[list[Region]]
    tracks: dict[int, list[tuple[int, tuple[int, int, int, int]]]] = field(default_factory=dict)

    @property
    def n_frames(self) -> int:
        return len(self.regions)

    def __eq__(self, other) -> bool:
        if not isinstance(other, GroundTruth):
            return NotImplemented
        return (np.array_equal(self.frame_labels, other.frame_labels)
                and self.regions == other.regions and self.tracks == other.tracks)

    def anomalous_track_ids(self) -> list[int]:
        ids = {r.track_id for rs in self.regions for r in rs if r.anomalous}
        return sorted(ids)

    def anomalous_tracks(self) -> dict[int, list[tuple[int, tuple[int, int, int, int]]]]:
        return {k: self.tracks[k] for k in self.anomalous_track_ids()}

    def check_consistency(self) -> None:
        derived = np.array([any(r.anomalous for r in rs) for rs in self.regions], dtype=np.int8)
        if not np.array_equal(derived, self.frame_labels):
            raise AssertionError("frame labels disagree with regions")
        rebuilt: dict[int, list] = {}
        for f, rs in enumerate(self.regions):
            for r in rs:
                rebuilt.setdefault(r.track_id, []).append((f, r.box))
        if rebuilt != self.tracks:
            raise AssertionError("tracks disagree with regions")


@dataclass
class VideoClip:
    frames: np.ndarray  # T×H×W×3 float32 in [0, 1]
    fps: float = 25.0

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def frame_size(self) -> tuple[int, int]:
        return self.frames.shape[1], self.frames.shape[2]

    def to_uint8(self) -> np.ndarray:
        return np.rint(self.frames * 255.0).astype(np.uint8)

    @classmethod
    def from_uint8(cls, pixels: np.ndarray, fps: float = 25.0) -> "VideoClip":
        return cls(pixels.astype(np.float32) / np.float32(255.0), fps)


# ------------------------------------------------------------------ sprites

@dataclass
class _Sprite:
    shape: str
    size: int
    color: np.ndarray
    pos: np.ndarray  # top-left corner, float (y, x)
    vel: np.ndarray  # (vy, vx) px/frame
    anomalous: bool
    track_id: int
    start: int = 0
    end: int = 1 << 30
    erratic: bool = False


def _shape_mask(shape: str, size: int) -> np.ndarray:
    yy, xx = np.mgrid[:size, :size] + 0.5
    c = size / 2
    if shape == "circle":
        return (yy - c) ** 2 + (xx - c) ** 2 <= c * c
    if shape == "square":
        return np.ones((size, size), dtype=bool)
    if shape == "triangle":
        # apex at the top, base along the bottom
        return np.abs(xx - c) <= yy / 2
    if shape == "diamond":
        return np.abs(xx - c) + np.abs(yy - c) <= c
    raise ValueError(f"unknown shape {shape!r}")


def _render_sprite(img: np.ndarray, sp: _Sprite) -> tuple[int, int, int, int]:
    mask = _shape_mask(sp.shape, sp.size)
    y0, x0 = int(round(sp.pos[0])), int(round(sp.pos[1]))
    yy, xx = np.mgrid[:sp.size, :sp.size] + 0.5 - sp.size / 2
    speed = float(np.hypot(*sp.vel))
    color = np.broadcast_to(sp.color, (sp.size, sp.size, 3)).copy()
    if speed > 0:
        # dark cap on the leading side so the direction of travel is visible
        proj = (yy * sp.vel[0] + xx * sp.vel[1]) / speed
        color[proj > sp.size * 0.2] *= _MARKER_SHADE
    region = img[y0:y0 + sp.size, x0:x0 + sp.size]
    region[mask] = color[mask]
    ys, xs = np.nonzero(mask)
    return x0 + int(xs.min()), y0 + int(ys.min()), x0 + int(xs.max()) + 1, y0 + int(ys.max()) + 1


def _advance(sp: _Sprite, frame_size, rng: np.random.Generator, max_speed: float) -> None:
    if sp.erratic:
        sp.vel = sp.vel + rng.normal(0.0, 3.0, size=2)
        speed = np.hypot(*sp.vel)
        if speed > max_speed:
            sp.vel *= max_speed / speed
    limits = np.array(frame_size, dtype=np.float64) - sp.size
    new = sp.pos + sp.vel
    for a in range(2):
        if new[a] < 0:
            new[a] = -new[a]
            sp.vel[a] = -sp.vel[a]
        elif new[a] > limits[a]:
            new[a] = 2 * limits[a] - new[a]
            sp.vel[a] = -sp.vel[a]
    sp.pos = np.clip(new, 0, limits)


def _random_velocity(rng, lo, hi) -> np.ndarray:
    angle = rng.uniform(0, 2 * np.pi)
    speed = rng.uniform(lo, hi)
    return np.array([np.sin(angle), np.cos(angle)]) * speed


def _background(cfg: SceneConfig) -> np.ndarray:
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0xB6]))
    h, w = cfg.frame_size
    low = ndimage.gaussian_filter(rng.standard_normal((h, w)), 12, mode="wrap")
    low = low / (np.abs(low).max() + 1e-12)
    fine = ndimage.gaussian_filter(rng.standard_normal((h, w)), 1.0)
    fine = fine / (np.abs(fine).max() + 1e-12)
    gray = 0.5 + 0.06 * low + 0.03 * fine
    tint = np.array([1.0, 0.97, 0.92])
    return np.clip(gray[..., None] * tint * 255.0, 0, 255)


def _normal_sprite(rng, cfg: SceneConfig, track_id: int) -> _Sprite:
    size = int(rng.integers(cfg.sprite_size[0], cfg.sprite_size[1] + 1))
    h, w = cfg.frame_size
    return _Sprite(
        shape=cfg.normal_shapes[int(rng.integers(len(cfg.normal_shapes)))],
        size=size,
        color=_NORMAL_COLORS[int(rng.integers(len(_NORMAL_COLORS)))],
        pos=np.array([rng.uniform(0, h - size), rng.uniform(0, w - size)]),
        vel=_random_velocity(rng, *cfg.speed_normal),
        anomalous=False,
        track_id=track_id,
    )


def _anomalous_sprite(rng, cfg: SceneConfig, kind: str, track_id: int) -> _Sprite:
    sp = _normal_sprite(rng, cfg, track_id)
    sp.anomalous = True
    if kind == "fast_motion":
        sp.vel = _random_velocity(rng, cfg.speed_anomalous, cfg.speed_anomalous + 2.0)
    elif kind == "unseen_shape":
        unseen = [s for s in SHAPES if s not in cfg.normal_shapes]
        sp.shape = unseen[int(rng.integers(len(unseen)))]
        sp.color = _UNSEEN_COLOR
    elif kind == "erratic_motion":
        sp.erratic = True
    lo, hi = cfg.anomaly_duration
    n = cfg.frames_per_video
    dur = int(rng.integers(lo, min(hi, n) + 1))
    sp.start = int(rng.integers(0, n - dur + 1))
    sp.end = sp.start + dur
    return sp


def _render_video(cfg: SceneConfig, background: np.ndarray, rng, sprites: list[_Sprite]):
    n = cfg.frames_per_video
    h, w = cfg.frame_size
    pixels = np.empty((n, h, w, 3), dtype=np.uint8)
    regions: list[list[Region]] = []
    tracks: dict[int, list] = {}
    max_speed = cfg.speed_anomalous + 2.0
    for f in range(n):
        img = background.copy()
        frame_regions = []
        for sp in sprites:
            if sp.start <= f < sp.end:
                box = _render_sprite(img, sp)
                reg = Region(box, SHAPES.index(sp.shape), sp.anomalous, sp.track_id)
                frame_regions.append(reg)
                tracks.setdefault(sp.track_id, []).append((f, box))
        for sp in sprites:
            if sp.start <= f < sp.end:
                _advance(sp, cfg.frame_size, rng, max_speed)
        pixels[f] = np.rint(img).astype(np.uint8)
        regions.append(frame_regions)
    labels = np.array([any(r.anomalous for r in rs) for rs in regions], dtype=np.int8)
    gt = GroundTruth(labels, regions, tracks)
    gt.check_consistency()
    return VideoClip.from_uint8(pixels), gt


def generate_dataset(cfg: SceneConfig):
    """Return ``(train, test, train_gt)``.

    ``train`` is a list of clips, ``test`` a list of ``(clip, gt)`` pairs and
    ``train_gt`` the ground truth of the training clips (all regions normal).
    """
    background = _background(cfg)
    train, train_gt = [], []
    for i in range(cfg.n_train_videos):
        rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 1, i]))
        sprites = [_normal_sprite(rng, cfg, k) for k in range(cfg.n_normal_sprites)]
        clip, gt = _render_video(cfg, background, rng, sprites)
        train.append(clip)
        train_gt.append(gt)
    test = []
    for i in range(cfg.n_test_videos):
        rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 2, i]))
        sprites = [_normal_sprite(rng, cfg, k) for k in range(cfg.n_normal_sprites)]
        if cfg.anomaly_types:
            kind = cfg.anomaly_types[i % len(cfg.anomaly_types)]
            sprites.append(_anomalous_sprite(rng, cfg, kind, cfg.n_normal_sprites))
        test.append(_render_video(cfg, background, rng, sprites))
    return train, test, train_gt


def test_anomaly_kinds(cfg: SceneConfig) -> list[str | None]:
    """Anomaly type injected into each test video (``None`` when disabled)."""
    if not cfg.anomaly_types:
        return [None] * cfg.n_test_videos
    return [cfg.anomaly_types[i % len(cfg.anomaly_types)] for i in range(cfg.n_test_videos)]


test_anomaly_kinds.__test__ = False  # keep pytest from collecting it


def ground_truth_boxes(gt: GroundTruth, frame: int) -> list[tuple[tuple[int, int, int, int], int, bool]]:
    if not 0 <= frame < gt.n_frames:
        raise IndexError(f"frame {frame} outside [0, {gt.n_frames})")
    return [(r.box, r.cls, r.anomalous) for r in gt.regions[frame]]


# ---------------------------------------------------------------- file I/O
#
# Frame container: magic b"SPWV", then T, H, W as little-endian u32, then
# T·H·W·3 uint8 RGB bytes in row-major (t, y, x, channel) order.

VIDEO_MAGIC = b"SPWV"


def write_video(path, clip: VideoClip) -> None:
    px = clip.to_uint8()
    t, h, w, _ = px.shape
    with open(path, "wb") as fh:
        fh.write(VIDEO_MAGIC + struct.pack("<III", t, h, w))
        fh.write(np.ascontiguousarray(px).tobytes())


def read_video(path) -> VideoClip:
    raw = Path(path).read_bytes()
    if raw[:4] != VIDEO_MAGIC:
        raise ValueError(f"{path}: not a SpriteWorld frame container")
    t, h, w = struct.unpack("<III", raw[4:16])
    body = raw[16:]
    if len(body) != t * h * w * 3:
        raise ValueError(f"{path}: expected {t * h * w * 3} pixel bytes, found {len(body)}")
    return VideoClip.from_uint8(np.frombuffer(body, dtype=np.uint8).reshape(t, h, w, 3))


def write_ground_truth(path, gt: GroundTruth) -> None:
    lines = [f"# frames={gt.n_frames}", "# frame,x1,y1,x2,y2,class,anomalous,track_id"]
    for f, rs in enumerate(gt.regions):
        for r in rs:
            x1, y1, x2, y2 = r.box
            lines.append(f"{f},{x1},{y1},{x2},{y2},{r.cls},{int(r.anomalous)},{r.track_id}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_ground_truth(path) -> GroundTruth:
    text = Path(path).read_text().splitlines()
    n = int(text[0].split("=")[1])
    regions: list[list[Region]] = [[] for _ in range(n)]
    tracks: dict[int, list] = {}
    for line in text:
        if not line or line.startswith("#"):
            continue
        f, x1, y1, x2, y2, c, a, tid = (int(v) for v in line.split(","))
        box = (x1, y1, x2, y2)
        regions[f].append(Region(box, c, bool(a), tid))
        tracks.setdefault(tid, []).append((f, box))
    labels = np.array([any(r.anomalous for r in rs) for rs in regions], dtype=np.int8)
    return GroundTruth(labels, regions, tracks)
