"""Patch decomposition, target normalization, and reconstruction.

Sequence slot j holds the patch at row-major grid index ``ordering.perm[j]``.
Each patch is flattened row-major with channels interleaved, so a P x P x 3
block becomes a vector of length 3*P*P laid out (r0c0 RGB, r0c1 RGB, ...).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .images import Image
from .orderings import Ordering


@dataclass
class PatchSequence:
    inputs: np.ndarray  # [batch, K, patch_dim], traversal order
    raw_targets: np.ndarray  # same shape
    grid_positions: np.ndarray  # [K, 2] (row, col) per slot
    patch_size: int
    grid: tuple[int, int]
    norm_targets: Optional[np.ndarray] = None

    @property
    def batch(self) -> int:
        return self.inputs.shape[0]

    @property
    def K(self) -> int:
        return self.inputs.shape[1]

    @property
    def patch_dim(self) -> int:
        return self.inputs.shape[2]


def patchify(img: Image, patch_size: int, ordering: Ordering) -> PatchSequence:
    side_ok = img.height % patch_size == 0 and img.width % patch_size == 0
    if not side_ok:
        raise ValueError(
            f"image {img.height}x{img.width} not divisible by patch size {patch_size}")
    rows = img.height // patch_size
    cols = img.width // patch_size
    if ordering.grid != (rows, cols):
        raise ValueError(f"ordering grid {ordering.grid} does not match image grid {(rows, cols)}")
    p = patch_size
    # [rows, cols, p, p, 3] -> row-major grid of flattened patches
    blocks = img.pixels.reshape(rows, p, cols, p, 3).transpose(0, 2, 1, 3, 4)
    flat = blocks.reshape(rows * cols, p * p * 3)
    seq = flat[ordering.perm]
    return PatchSequence(
        inputs=seq[None, :, :].astype(np.float32),
        raw_targets=seq[None, :, :].astype(np.float32),
        grid_positions=ordering.positions(),
        patch_size=p,
        grid=(rows, cols),
    )


def stack_sequences(seqs: list[PatchSequence]) -> PatchSequence:
    first = seqs[0]
    return PatchSequence(
        inputs=np.concatenate([s.inputs for s in seqs], axis=0),
        raw_targets=np.concatenate([s.raw_targets for s in seqs], axis=0),
        grid_positions=first.grid_positions,
        patch_size=first.patch_size,
        grid=first.grid,
        norm_targets=None,
    )


def normalize_patch_targets(seq: PatchSequence, eps: float = 1e-6) -> PatchSequence:
    """Standardize each patch vector to zero mean, unit variance (population
    convention), with eps damping constant patches to zeros."""
    if seq.patch_dim < 2:
        raise ValueError("patch dimension must be >= 2 to normalize")
    raw = seq.raw_targets
    mu = raw.mean(axis=2, keepdims=True)
    var = raw.var(axis=2, keepdims=True)
    seq.norm_targets = ((raw - mu) / np.sqrt(var + eps)).astype(raw.dtype)
    return seq


def unpatchify(seq: PatchSequence, ordering: Ordering, sample: int = 0) -> Image:
    """Inverse placement: exact reconstruction of the patchified image."""
    rows, cols = seq.grid
    p = seq.patch_size
    flat = np.empty((rows * cols, p * p * 3), dtype=seq.inputs.dtype)
    flat[ordering.perm] = seq.inputs[sample]
    blocks = flat.reshape(rows, cols, p, p, 3).transpose(0, 2, 1, 3, 4)
    return Image(blocks.reshape(rows * p, cols * p, 3))
