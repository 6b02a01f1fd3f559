"""Traversal orderings over the patch grid.

An ordering maps sequence slot j to the row-major grid index ``perm[j]``.
Conventions pinned here (and by the oracle tests):

* raster: identity over row-major indices.
* spiral: start at the grid center ``(ceil(r/2)-1, ceil(c/2)-1)``, walk
  clockwise outward (right, down, left, up on screen coordinates), skipping
  cells that fall outside the grid.
* checkerboard: all cells with even (row+col) parity in raster order, then
  all odd-parity cells in raster order.
* random: one permutation drawn from the seed, shared by every image in a
  run ("fixed random").
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

KINDS = ("raster", "spiral", "checkerboard", "random")


@dataclass(frozen=True)
class Ordering:
    kind: str
    grid: tuple[int, int]
    perm: np.ndarray  # length K, bijection on {0..K-1}
    seed: int | None = None

    @property
    def K(self) -> int:
        return self.grid[0] * self.grid[1]

    def positions(self) -> np.ndarray:
        """Per-slot (row, col) grid coordinates, shape [K, 2]."""
        cols = self.grid[1]
        return np.stack([self.perm // cols, self.perm % cols], axis=1)


def _spiral_perm(rows: int, cols: int) -> np.ndarray:
    # Segment lengths 1,1,2,2,3,3,... along right/down/left/up headings;
    # the numpy cumsum over repeated unit steps yields the full offset walk.
    total = rows * cols
    span = max(rows, cols)
    headings = np.array([(0, 1), (1, 0), (0, -1), (-1, 0)])  # clockwise on screen
    steps = []
    seg = 1
    while len(steps) < (2 * span + 1) ** 2:
        for turn in range(4):
            steps.extend([headings[(turn) % 4]] * seg)
            if turn % 2 == 1:
                seg += 1
    offsets = np.concatenate([[(0, 0)], np.cumsum(steps, axis=0)])
    r0 = (rows + 1) // 2 - 1
    c0 = (cols + 1) // 2 - 1
    rr = offsets[:, 0] + r0
    cc = offsets[:, 1] + c0
    keep = (rr >= 0) & (rr < rows) & (cc >= 0) & (cc < cols)
    perm = (rr[keep] * cols + cc[keep])[:total]
    return perm.astype(np.int64)


def _checkerboard_perm(rows: int, cols: int) -> np.ndarray:
    idx = np.arange(rows * cols)
    parity = (idx // cols + idx % cols) % 2
    return np.concatenate([idx[parity == 0], idx[parity == 1]])


def make_ordering(kind: str, grid: tuple[int, int], seed: int | None = None) -> Ordering:
    rows, cols = grid
    if rows < 1 or cols < 1:
        raise ValueError(f"grid must be non-empty, got {grid}")
    if kind == "raster":
        perm = np.arange(rows * cols, dtype=np.int64)
    elif kind == "spiral":
        perm = _spiral_perm(rows, cols)
    elif kind == "checkerboard":
        perm = _checkerboard_perm(rows, cols)
    elif kind == "random":
        if seed is None:
            raise ValueError("random ordering requires a seed")
        perm = np.random.default_rng(seed).permutation(rows * cols).astype(np.int64)
    else:
        raise ValueError(f"unknown ordering kind {kind!r}")
    return Ordering(kind, (rows, cols), perm, seed if kind == "random" else None)
