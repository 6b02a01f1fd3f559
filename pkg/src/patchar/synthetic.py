"""Procedural labeled dataset: class-conditioned textures.

Each class owns a grating family (orientation and spatial frequency), an
optional RGB tint, and a Gaussian-blob count; phase and blob placements are
drawn per image. Tints make classes separable by a pixel-space
nearest-centroid rule; setting ``tint_strength=0`` removes that shortcut and
leaves orientation/frequency as the only class signal.
"""

from __future__ import annotations

import math

import numpy as np

from .images import Image


def _class_tint(c: int, num_classes: int) -> np.ndarray:
    hue = 2.0 * math.pi * c / num_classes
    return np.array(
        [math.cos(hue), math.cos(hue - 2 * math.pi / 3), math.cos(hue + 2 * math.pi / 3)]
    ) * 0.5


def generate_synthetic_dataset(
    classes: int,
    per_class: int,
    side: int,
    seed: int,
    tint_strength: float = 0.12,
    grating_amp: float = 0.35,
    blob_amp: float = 0.12,
) -> tuple[list[Image], np.ndarray]:
    """Deterministic-by-seed labeled images, pixels clamped to [0, 1]."""
    if classes < 2:
        raise ValueError("need at least 2 classes")
    if per_class < 1:
        raise ValueError("need at least 1 image per class")
    yy, xx = np.meshgrid(np.arange(side), np.arange(side), indexing="ij")
    images: list[Image] = []
    labels: list[int] = []
    for c in range(classes):
        theta = math.pi * c / classes
        freq = 3.0 + 3.0 * (c % 2)
        tint = _class_tint(c, classes)
        direction = xx * math.cos(theta) + yy * math.sin(theta)
        for i in range(per_class):
            rng = np.random.default_rng([seed, c, i])
            phase = rng.uniform(0.0, 2.0 * math.pi)
            img = 0.5 + grating_amp * np.sin(2.0 * math.pi * freq * direction / side + phase)
            img = img[:, :, None] + tint_strength * tint[None, None, :]
            for b in range(2 + c % 3):
                cy, cx = rng.uniform(0, side, size=2)
                sigma = side / 8.0 * (0.75 + 0.5 * rng.random())
                bump = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2.0 * sigma**2))
                img = img + ((-1.0) ** b) * blob_amp * bump[:, :, None]
            images.append(Image(np.clip(img, 0.0, 1.0).astype(np.float32)))
            labels.append(c)
    return images, np.array(labels, dtype=np.int64)
