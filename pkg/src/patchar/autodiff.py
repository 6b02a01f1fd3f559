"""Dense-tensor engine with tape-based reverse-mode differentiation.

Just enough machinery for a bias-free pre-norm transformer: a ``Tensor``
wrapping a numpy array, a ``Tape`` recording primitive applications, and
``backward`` to replay the tape. Ops only record when a tape is active and
at least one input is gradient-tracked, so constant subgraphs (targets,
positional tables) cost nothing at backward time.

Storage is float32 by default; gradient-check builds construct float64
tensors and the ops preserve input dtype throughout.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.special import erf


class AutodiffError(Exception):
    """Base class for engine failures."""


class ShapeMismatchError(AutodiffError):
    pass


class NonFiniteError(AutodiffError):
    pass


class FullyMaskedRowError(AutodiffError):
    pass


class DetachedNodeError(AutodiffError):
    pass


_node_counter = itertools.count()


class Tensor:
    """A dense float array with optional gradient tracking.

    ``node_id`` is globally unique and assigned at creation, so tape entries
    are topologically ordered by construction (inputs always carry smaller
    ids than the outputs they produce).
    """

    __slots__ = ("data", "grad", "node_id", "requires_grad", "track", "name")

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str | None = None):
        arr = np.asarray(data)
        if dtype is not None:
            arr = arr.astype(dtype, copy=False)
        elif not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float32)
        self.data: np.ndarray = arr
        self.grad: Optional[np.ndarray] = None
        self.node_id: int = next(_node_counter)
        self.requires_grad = requires_grad
        self.track = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}{tag})"


def constant(data, dtype=None) -> Tensor:
    return Tensor(data, requires_grad=False, dtype=dtype)


def parameter(data, name: str | None = None, dtype=None) -> Tensor:
    return Tensor(data, requires_grad=True, dtype=dtype, name=name)


@dataclass
class TapeEntry:
    op: str
    inputs: tuple[Tensor, ...]
    output: Tensor
    backward: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


@dataclass
class Tape:
    """Ordered record of primitive applications for one forward pass."""

    entries: list[TapeEntry] = field(default_factory=list)

    def output_ids(self) -> set[int]:
        return {e.output.node_id for e in self.entries}


_active_tape: Optional[Tape] = None


class record:
    """Context manager activating a fresh tape; nested use is not supported."""

    def __enter__(self) -> Tape:
        global _active_tape
        if _active_tape is not None:
            raise AutodiffError("a tape is already active")
        _active_tape = Tape()
        return _active_tape

    def __exit__(self, *exc) -> None:
        global _active_tape
        _active_tape = None


def active_tape() -> Optional[Tape]:
    return _active_tape


def _finish(op: str, inputs: tuple[Tensor, ...], out_data: np.ndarray,
            backward: Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]) -> Tensor:
    if not np.all(np.isfinite(out_data)):
        raise NonFiniteError(f"{op}: non-finite values in output")
    out = Tensor(out_data)
    out.track = any(t.track for t in inputs)
    if _active_tape is not None and out.track:
        _active_tape.entries.append(TapeEntry(op, inputs, out, backward))
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcasted gradient back down to the original operand shape."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (g, s) in enumerate(zip(grad.shape, shape)) if s == 1 and g != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# ---------------------------------------------------------------------------
# primitives
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ShapeMismatchError(f"matmul: operands must be >=2-d, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeMismatchError(f"matmul: inner dims disagree, {a.shape} @ {b.shape}")
    out = np.matmul(a.data, b.data)

    def backward(g):
        ga = gb = None
        if a.track:
            ga = _unbroadcast(np.matmul(g, b.data.swapaxes(-1, -2)), a.shape)
        if b.track:
            gb = _unbroadcast(np.matmul(a.data.swapaxes(-1, -2), g), b.shape)
        return ga, gb

    return _finish("matmul", (a, b), out, backward)


def add(a: Tensor, b: Tensor) -> Tensor:
    try:
        out = a.data + b.data
    except ValueError as e:
        raise ShapeMismatchError(f"add: {a.shape} + {b.shape}: {e}") from None

    def backward(g):
        ga = _unbroadcast(g, a.shape) if a.track else None
        gb = _unbroadcast(g, b.shape) if b.track else None
        return ga, gb

    return _finish("add", (a, b), out, backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    try:
        out = a.data * b.data
    except ValueError as e:
        raise ShapeMismatchError(f"mul: {a.shape} * {b.shape}: {e}") from None

    def backward(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.track else None
        gb = _unbroadcast(g * a.data, b.shape) if b.track else None
        return ga, gb

    return _finish("mul", (a, b), out, backward)


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    out = a.data * c

    def backward(g):
        return (g * c if a.track else None,)

    return _finish("scale", (a,), out, backward)


def transpose(a: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    out = np.transpose(a.data, axes)
    inv = tuple(np.argsort(axes))

    def backward(g):
        return (np.transpose(g, inv) if a.track else None,)

    return _finish("transpose", (a,), out, backward)


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeMismatchError(f"reshape: cannot view {a.shape} as {shape}") from None
    orig = a.shape

    def backward(g):
        return (g.reshape(orig) if a.track else None,)

    return _finish("reshape", (a,), out, backward)


_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def gelu(a: Tensor) -> Tensor:
    # Exact Gaussian-CDF form, not the tanh approximation.
    x = a.data
    cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))
    out = x * cdf

    def backward(g):
        if not a.track:
            return (None,)
        pdf = np.exp(-0.5 * x * x) * _INV_SQRT_2PI
        return (g * (cdf + x * pdf),)

    return _finish("gelu", (a,), out, backward)


def layer_norm_scale_only(a: Tensor, gain: Tensor, eps: float = 1e-6) -> Tensor:
    """Normalize over the last axis, multiply a learnable gain; no bias."""
    if gain.shape != a.shape[-1:]:
        raise ShapeMismatchError(
            f"layer_norm_scale_only: gain {gain.shape} does not match feature dim of {a.shape}")
    x = a.data
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = np.mean(xc * xc, axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gain.data

    def backward(g):
        ga = gg = None
        if gain.track:
            gg = _unbroadcast(g * xhat, gain.shape)
        if a.track:
            gy = g * gain.data
            m1 = gy.mean(axis=-1, keepdims=True)
            m2 = (gy * xhat).mean(axis=-1, keepdims=True)
            ga = inv * (gy - m1 - xhat * m2)
        return ga, gg

    return _finish("layer_norm_scale_only", (a, gain), out, backward)


def tensor_sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = a.data.sum(axis=axis, keepdims=keepdims)
    out = np.asarray(out)

    def backward(g):
        if not a.track:
            return (None,)
        if axis is None:
            return (np.broadcast_to(g, a.shape).astype(a.dtype, copy=True),)
        g2 = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(g2, a.shape).astype(a.dtype, copy=True),)

    return _finish("sum", (a,), out, backward)


def tensor_mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        count = a.data.size
    elif isinstance(axis, int):
        count = a.shape[axis]
    else:
        count = int(np.prod([a.shape[ax] for ax in axis]))
    out = a.data.mean(axis=axis, keepdims=keepdims)
    out = np.asarray(out)

    def backward(g):
        if not a.track:
            return (None,)
        if axis is None:
            return ((np.broadcast_to(g, a.shape) / count).astype(a.dtype, copy=False),)
        g2 = g if keepdims else np.expand_dims(g, axis)
        return ((np.broadcast_to(g2, a.shape) / count).astype(a.dtype, copy=False),)

    return _finish("mean", (a,), out, backward)


def slice_axis(a: Tensor, axis: int, start: int, stop: int) -> Tensor:
    idx = [slice(None)] * a.data.ndim
    idx[axis] = slice(start, stop)
    idx = tuple(idx)
    out = a.data[idx].copy()

    def backward(g):
        if not a.track:
            return (None,)
        full = np.zeros_like(a.data)
        full[idx] = g
        return (full,)

    return _finish("slice", (a,), out, backward)


def concat(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    parts = tuple(parts)
    out = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.shape[axis] for p in parts]
    bounds = np.cumsum([0] + sizes)

    def backward(g):
        grads = []
        for p, lo, hi in zip(parts, bounds[:-1], bounds[1:]):
            if p.track:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(lo, hi)
                grads.append(g[tuple(idx)])
            else:
                grads.append(None)
        return grads

    return _finish("concat", parts, out, backward)


def embedding_add(a: Tensor, table: Tensor) -> Tensor:
    """Add a positional table, broadcasting over leading batch axes."""
    return _rename_last_op(add(a, table), "embedding_add")


def _rename_last_op(out: Tensor, name: str) -> Tensor:
    if _active_tape is not None and _active_tape.entries and _active_tape.entries[-1].output is out:
        _active_tape.entries[-1].op = name
    return out


def masked_softmax(logits: Tensor, plan) -> Tensor:
    """Row-stochastic attention weights with exact zeros at forbidden keys.

    ``plan`` is anything exposing a square boolean ``visibility`` array (an
    attention plan) or the array itself; it is broadcast against the last two
    axes of ``logits``. Masking happens before the stabilizing per-row max
    subtraction, so each row's max is taken over visible keys only.
    """
    mask = np.asarray(getattr(plan, "visibility", plan), dtype=bool)
    k = logits.shape[-1]
    if mask.shape != (k, k) or logits.shape[-2] != k:
        raise ShapeMismatchError(
            f"masked_softmax: mask {mask.shape} incompatible with logits {logits.shape}")
    if not mask.any(axis=-1).all():
        raise FullyMaskedRowError("masked_softmax: a query row has no visible key")
    x = np.where(mask, logits.data, -np.inf)
    x = x - x.max(axis=-1, keepdims=True)
    e = np.exp(x)
    out = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        if not logits.track:
            return (None,)
        inner = (g * out).sum(axis=-1, keepdims=True)
        return (out * (g - inner),)

    return _finish("masked_softmax", (logits,), out, backward)


def softmax(logits: Tensor) -> Tensor:
    """Dense softmax over the last axis (no mask)."""
    x = logits.data - logits.data.max(axis=-1, keepdims=True)
    e = np.exp(x)
    out = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        if not logits.track:
            return (None,)
        inner = (g * out).sum(axis=-1, keepdims=True)
        return (out * (g - inner),)

    return _finish("softmax", (logits,), out, backward)


def cross_entropy_logits(logits: Tensor, ids: np.ndarray) -> Tensor:
    """Per-row negative log-softmax of the true class; ids shape [N]."""
    ids = np.asarray(ids)
    if logits.data.ndim != 2 or ids.shape != (logits.shape[0],):
        raise ShapeMismatchError(
            f"cross_entropy_logits: logits {logits.shape} vs ids {ids.shape}")
    v = logits.shape[1]
    if ids.min() < 0 or ids.max() >= v:
        raise ShapeMismatchError(f"cross_entropy_logits: id out of range [0, {v})")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    rows = np.arange(ids.shape[0])
    out = lse - z[rows, ids]

    def backward(g):
        if not logits.track:
            return (None,)
        p = np.exp(z) / np.exp(z).sum(axis=1, keepdims=True)
        p[rows, ids] -= 1.0
        return (p * g[:, None],)

    return _finish("cross_entropy", (logits,), out, backward)


def sub(a: Tensor, b: Tensor) -> Tensor:
    return add(a, scale(b, -1.0))


_PRIMITIVES: dict[str, Callable] = {
    "matmul": matmul,
    "add": add,
    "mul": mul,
    "scale": scale,
    "transpose": transpose,
    "reshape": reshape,
    "gelu": gelu,
    "layer_norm_scale_only": layer_norm_scale_only,
    "sum": tensor_sum,
    "mean": tensor_mean,
    "slice": slice_axis,
    "concat": concat,
    "embedding_add": embedding_add,
}


def apply_primitive(kind: str, inputs: Sequence[Tensor], **kwargs) -> Tensor:
    """Dispatch a named primitive; ``kind`` must be one of the engine's ops."""
    try:
        fn = _PRIMITIVES[kind]
    except KeyError:
        raise AutodiffError(f"unknown primitive kind {kind!r}") from None
    if kind == "concat":
        return fn(inputs, **kwargs)
    return fn(*inputs, **kwargs)


# ---------------------------------------------------------------------------
# reverse pass
# ---------------------------------------------------------------------------

def backward(loss: Tensor, tape: Tape) -> dict[int, np.ndarray]:
    """Replay the tape once, returning node-id -> gradient for leaf nodes.

    Also populates ``.grad`` on every tensor with ``requires_grad`` reached
    by the sweep. The gradient of the loss w.r.t. itself is 1.
    """
    if loss.data.size != 1:
        raise AutodiffError(f"backward: loss must be scalar, got shape {loss.shape}")
    if loss.node_id not in tape.output_ids():
        raise DetachedNodeError("backward: loss was not produced on this tape")

    grads: dict[int, np.ndarray] = {loss.node_id: np.ones_like(loss.data)}
    tensors: dict[int, Tensor] = {loss.node_id: loss}
    for entry in reversed(tape.entries):
        g = grads.pop(entry.output.node_id, None)
        if g is None:
            continue
        tensors.pop(entry.output.node_id, None)
        for t, gi in zip(entry.inputs, entry.backward(g)):
            if gi is None:
                continue
            prev = grads.get(t.node_id)
            grads[t.node_id] = gi if prev is None else prev + gi
            tensors[t.node_id] = t

    for nid, g in grads.items():
        t = tensors.get(nid)
        if t is not None and t.requires_grad:
            t.grad = g if t.grad is None else t.grad + g
    return grads
