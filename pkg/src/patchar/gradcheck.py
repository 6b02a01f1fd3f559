"""Finite-difference gradient oracle.

Central differences evaluated by plain re-execution of the forward callable,
with no knowledge of the tape; this keeps the oracle independent of the
reverse-mode path it is used to check.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .autodiff import NonFiniteError, Tensor, backward, record


def check_gradients(
    f: Callable[[], Tensor],
    params: Sequence[Tensor],
    eps: float = 1e-5,
    num_samples: int = 100,
    seed: int = 0,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``f`` recomputes the scalar loss from the current values of ``params``.
    Requires float64 parameters; each sampled coordinate costs two extra
    forward passes.
    """
    if not 1e-7 <= eps <= 1e-4:
        raise ValueError(f"eps {eps} outside [1e-7, 1e-4]")
    for p in params:
        if p.dtype != np.float64:
            raise ValueError("check_gradients requires float64 parameters")
        p.zero_grad()

    with record() as tape:
        loss = f()
    backward(loss, tape)
    analytic = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in params]

    sizes = np.array([p.data.size for p in params])
    total = int(sizes.sum())
    rng = np.random.default_rng(seed)
    count = min(num_samples, total)
    coords = rng.choice(total, size=count, replace=False)
    offsets = np.cumsum(sizes) - sizes

    worst = 0.0
    for c in coords:
        pi = int(np.searchsorted(offsets, c, side="right") - 1)
        idx = int(c - offsets[pi])
        flat = params[pi].data.reshape(-1)
        orig = flat[idx]
        flat[idx] = orig + eps
        plus = f().item()
        flat[idx] = orig - eps
        minus = f().item()
        flat[idx] = orig
        diff = (plus - minus) / (2.0 * eps)
        if not np.isfinite(diff):
            raise NonFiniteError("check_gradients: non-finite central difference")
        a = float(analytic[pi].reshape(-1)[idx])
        rel = abs(a - diff) / max(abs(a), abs(diff), 1e-12)
        worst = max(worst, rel)
    return worst
