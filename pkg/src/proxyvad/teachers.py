"""Frozen teacher networks that provide distillation targets."""

from __future__ import annotations

import numpy as np

from . import numerics as nx


class TeacherBundle:
    """A seeded random-weight classifier plus the detector dimensions.

    The classifier is conv(3→8) → relu → pool → conv(8→16) → relu → pool → fc,
    giving ``n_cls`` pre-softmax features for a 64×64×3 image.
    """

    def __init__(self, n_cls: int = 32, n_det: int = 8, seed: int = 0, input_side: int = 64):
        if n_cls < 1 or n_det < 1:
            raise ValueError("n_cls and n_det must be positive")
        self.n_cls, self.n_det, self.seed, self.input_side = int(n_cls), int(n_det), int(seed), input_side
        rng = np.random.default_rng(np.random.SeedSequence([self.seed, 0x7EAC]))
        pooled = input_side // 4
        w = {
            "k1": rng.standard_normal((3, 3, 3, 8)) * np.sqrt(2 / 27),
            "k2": rng.standard_normal((3, 3, 8, 16)) * np.sqrt(2 / 72),
            "fc": rng.standard_normal((pooled * pooled * 16, n_cls)) * np.sqrt(1 / (pooled * pooled * 16)),
        }
        self._weights = {}
        for k, v in w.items():
            v = v.astype(np.float32)
            v.setflags(write=False)
            self._weights[k] = v

    @property
    def n_distill(self) -> int:
        return self.n_cls + self.n_det

    def features(self, images: np.ndarray) -> np.ndarray:
        """``(B×)64×64×3`` images in [0, 1] → ``(B×)n_cls`` features."""
        images = np.asarray(images, dtype=np.float32)
        s = self.input_side
        if images.shape[-3:] != (s, s, 3) or images.ndim not in (3, 4):
            raise ValueError(f"teacher expects (B×){s}×{s}×3 images, got {images.shape}")
        single = images.ndim == 3
        x = images[None] if single else images
        w = self._weights
        with nx.no_grad():
            h = nx.maxpool2d(nx.relu(nx.conv2d(x - np.float32(0.5), w["k1"])))
            h = nx.maxpool2d(nx.relu(nx.conv2d(h, w["k2"])))
            out = nx.fully_connected(h, w["fc"]).data
        return out[0] if single else out

    def describe(self) -> dict:
        return {"n_cls": self.n_cls, "n_det": self.n_det, "seed": self.seed, "input_side": self.input_side}


def classifier_features(bundle: TeacherBundle, image: np.ndarray) -> np.ndarray:
    return bundle.features(image)


def concat_targets(features: np.ndarray, det_probs: np.ndarray, bundle: TeacherBundle | None = None) -> np.ndarray:
    """Classifier features first, detector probabilities second."""
    features = np.asarray(features, dtype=np.float64)
    det_probs = np.asarray(det_probs, dtype=np.float64)
    if bundle is not None and (features.shape[-1] != bundle.n_cls or det_probs.shape[-1] != bundle.n_det):
        raise ValueError(
            f"expected {bundle.n_cls} features and {bundle.n_det} detector probabilities, "
            f"got {features.shape[-1]} and {det_probs.shape[-1]}")
    return np.concatenate([features, det_probs], axis=-1)
