"""Attention visibility plans: causal, prefix, and bidirectional.

A plan is a K x K boolean matrix; entry (i, k) says whether query slot i may
attend to key slot k. Prefix plans give every query access to the first S
slots and keep later keys causally hidden, so causal attention is exactly
prefix with S=1.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class AttentionPlan:
    mode: str  # "causal" | "prefix" | "bidirectional"
    K: int
    S: int | None = None
    visibility: np.ndarray = field(repr=False, compare=False, default=None)

    def __post_init__(self):
        if not self.visibility.any(axis=1).all():
            raise ValueError("attention plan has a query row with no visible key")


def causal_plan(k: int) -> AttentionPlan:
    if k < 1:
        raise ValueError("sequence length must be >= 1")
    vis = np.tril(np.ones((k, k), dtype=bool))
    return AttentionPlan("causal", k, None, vis)


def prefix_plan(k: int, s: int) -> AttentionPlan:
    """visible(i, k) iff k <= max(i, s-1): bidirectional inside the prefix,
    causal beyond it, with the prefix readable from every query."""
    if not 1 <= s <= k - 1:
        raise ValueError(f"prefix length {s} outside [1, {k - 1}]")
    i = np.arange(k)[:, None]
    j = np.arange(k)[None, :]
    vis = j <= np.maximum(i, s - 1)
    return AttentionPlan("prefix", k, s, vis)


def bidirectional_plan(k: int) -> AttentionPlan:
    if k < 1:
        raise ValueError("sequence length must be >= 1")
    return AttentionPlan("bidirectional", k, None, np.ones((k, k), dtype=bool))


def make_plan(mode: str, k: int, s: int | None = None) -> AttentionPlan:
    if mode == "causal":
        return causal_plan(k)
    if mode == "prefix":
        if s is None:
            raise ValueError("prefix plan needs a prefix length")
        return prefix_plan(k, s)
    if mode == "bidirectional":
        return bidirectional_plan(k)
    raise ValueError(f"unknown attention mode {mode!r}")
