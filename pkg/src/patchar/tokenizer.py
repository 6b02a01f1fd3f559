"""K-means patch tokenizer: Lloyd iterations over flattened patch vectors."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .patches import PatchSequence


@dataclass
class PatchTokenizer:
    codebook: np.ndarray  # [V, patch_dim]
    inertia_per_iter: list[float] = field(default_factory=list)

    @property
    def vocab_size(self) -> int:
        return self.codebook.shape[0]


def _plusplus_init(points: np.ndarray, v: int, rng: np.random.Generator) -> np.ndarray:
    n = points.shape[0]
    centroids = np.empty((v, points.shape[1]), dtype=np.float64)
    centroids[0] = points[rng.integers(n)]
    d2 = ((points - centroids[0]) ** 2).sum(axis=1)
    for j in range(1, v):
        total = d2.sum()
        if total <= 0:
            centroids[j] = points[rng.integers(n)]
        else:
            centroids[j] = points[rng.choice(n, p=d2 / total)]
        d2 = np.minimum(d2, ((points - centroids[j]) ** 2).sum(axis=1))
    return centroids


def fit_kmeans_tokenizer(
    patches: np.ndarray, vocab_size: int, iters: int = 25, seed: int = 0
) -> PatchTokenizer:
    """Seeded k-means++ then Lloyd; empty clusters are re-seeded to the point
    farthest from its assigned centroid, which keeps inertia non-increasing."""
    points = np.asarray(patches, dtype=np.float64)
    if points.ndim != 2:
        raise ValueError(f"patches must be [N, patch_dim], got {points.shape}")
    n = points.shape[0]
    if n < vocab_size:
        raise ValueError(f"need at least {vocab_size} patches, have {n}")
    if vocab_size < 2:
        raise ValueError("vocabulary size must be >= 2")
    rng = np.random.default_rng(seed)
    centroids = _plusplus_init(points, vocab_size, rng)
    history: list[float] = []
    for _ in range(iters):
        d2 = ((points[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
        assign = d2.argmin(axis=1)
        history.append(float(d2[np.arange(n), assign].sum()))
        for j in range(vocab_size):
            members = points[assign == j]
            if len(members) == 0:
                far = int(d2[np.arange(n), assign].argmax())
                centroids[j] = points[far]
                assign[far] = j
            else:
                centroids[j] = members.mean(axis=0)
    tok = PatchTokenizer(codebook=centroids)
    tok.inertia_per_iter = history
    return tok


def tokenize_patches(tok: PatchTokenizer, seq: PatchSequence) -> np.ndarray:
    """Nearest-centroid ids [batch, K]; ties break to the lowest id."""
    return tokenize_vectors(tok, seq.raw_targets.reshape(-1, seq.patch_dim)).reshape(
        seq.batch, seq.K
    )


def tokenize_vectors(tok: PatchTokenizer, vectors: np.ndarray) -> np.ndarray:
    vectors = np.asarray(vectors, dtype=np.float64)
    if vectors.shape[1] != tok.codebook.shape[1]:
        raise ValueError(
            f"patch dim {vectors.shape[1]} does not match codebook {tok.codebook.shape[1]}")
    d2 = ((vectors[:, None, :] - tok.codebook[None, :, :]) ** 2).sum(axis=2)
    return d2.argmin(axis=1).astype(np.int64)
