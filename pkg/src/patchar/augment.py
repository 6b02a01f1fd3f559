"""Crop/flip augmentation with seeded generators."""

from __future__ import annotations

import math

import numpy as np

from .images import Image


def resize_bilinear(pixels: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Half-pixel-center bilinear resampling of an [h, w, c] array."""
    h, w = pixels.shape[:2]
    ys = (np.arange(out_h) + 0.5) * (h / out_h) - 0.5
    xs = (np.arange(out_w) + 0.5) * (w / out_w) - 0.5
    ys = np.clip(ys, 0, h - 1)
    xs = np.clip(xs, 0, w - 1)
    y0 = np.floor(ys).astype(int)
    x0 = np.floor(xs).astype(int)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = (ys - y0)[:, None, None]
    wx = (xs - x0)[None, :, None]
    top = pixels[y0][:, x0] * (1 - wx) + pixels[y0][:, x1] * wx
    bot = pixels[y1][:, x0] * (1 - wx) + pixels[y1][:, x1] * wx
    return (top * (1 - wy) + bot * wy).astype(pixels.dtype)


def random_resized_crop(
    img: Image,
    out_size: int,
    scale_range: tuple[float, float] = (0.4, 1.0),
    ratio_range: tuple[float, float] = (0.75, 4.0 / 3.0),
    rng: np.random.Generator | None = None,
    flip_prob: float = 0.5,
) -> Image:
    """Area-and-ratio sampled crop, resized to out_size, then a coin-flip
    horizontal mirror.

    Candidate crops whose realized area fraction falls outside scale_range
    (integer rounding can push it out) are rejected; after 10 rejections the
    fallback is a center crop at the largest feasible scale.
    """
    lo, hi = scale_range
    if not 0.0 < lo <= hi <= 1.0:
        raise ValueError(f"scale range {scale_range} outside (0, 1]")
    if out_size < 1:
        raise ValueError("out_size must be positive")
    rng = np.random.default_rng() if rng is None else rng
    h, w = img.height, img.width
    area = h * w

    crop = None
    for _ in range(10):
        target = area * rng.uniform(lo, hi)
        ratio = math.exp(rng.uniform(math.log(ratio_range[0]), math.log(ratio_range[1])))
        cw = int(round(math.sqrt(target * ratio)))
        ch = int(round(math.sqrt(target / ratio)))
        if 0 < cw <= w and 0 < ch <= h and lo <= (cw * ch) / area <= hi:
            top = int(rng.integers(0, h - ch + 1))
            left = int(rng.integers(0, w - cw + 1))
            crop = img.pixels[top : top + ch, left : left + cw]
            break
    if crop is None:
        side = int(math.floor(math.sqrt(min(area * hi, min(h, w) ** 2))))
        side = max(side, 1)
        top = (h - side) // 2
        left = (w - side) // 2
        crop = img.pixels[top : top + side, left : left + side]

    out = resize_bilinear(crop, out_size, out_size)
    if rng.random() < flip_prob:
        out = out[:, ::-1].copy()
    return Image(np.clip(out, 0.0, 1.0))


def center_crop_resize(img: Image, out_size: int) -> Image:
    """Deterministic evaluation transform: largest center square, resized."""
    side = min(img.height, img.width)
    top = (img.height - side) // 2
    left = (img.width - side) // 2
    crop = img.pixels[top : top + side, left : left + side]
    return Image(np.clip(resize_bilinear(crop, out_size, out_size), 0.0, 1.0))


def vertical_flip(img: Image) -> Image:
    return Image(img.pixels[::-1].copy())
