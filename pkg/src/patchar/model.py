"""Bias-free pre-norm ViT trunk with pluggable attention plans.

All linear layers drop the bias term and layer norms carry a learnable
scale only. Positional embeddings are 2D sinusoidal tables anchored to grid
coordinates, so a patch's embedding does not depend on the traversal
ordering that put it in its sequence slot. No classification token exists
anywhere; probes pool patch features instead.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np

from . import autodiff as ad
from .attention import AttentionPlan
from .autodiff import Tensor
from .patches import PatchSequence

HEAD_KINDS = ("none", "mlp", "transformer")
TARGET_KINDS = ("pixels", "norm-pixels", "tokens")


@dataclass
class ModelConfig:
    d: int
    layers: int
    heads: int
    patch_size: int
    grid: tuple[int, int]
    mlp_ratio: int = 4
    head_kind: str = "mlp"
    head_blocks: int = 12
    head_width: int = 2048
    target_kind: str = "norm-pixels"
    vocab_size: Optional[int] = None

    def __post_init__(self):
        self.grid = tuple(self.grid)
        if self.d % self.heads != 0:
            raise ValueError(f"width {self.d} not divisible by {self.heads} heads")
        if self.d % 4 != 0:
            raise ValueError(f"width {self.d} must be divisible by 4 for 2D sinusoids")
        if self.layers < 1:
            raise ValueError("trunk needs at least one layer")
        if self.head_kind not in HEAD_KINDS:
            raise ValueError(f"unknown head kind {self.head_kind!r}")
        if self.target_kind not in TARGET_KINDS:
            raise ValueError(f"unknown target kind {self.target_kind!r}")
        if self.target_kind == "tokens" and not self.vocab_size:
            raise ValueError("token targets require a vocabulary size")
        if self.head_kind == "transformer" and self.head_width % self.head_dim != 0:
            raise ValueError("transformer head width must be a multiple of the head dim")

    @property
    def K(self) -> int:
        return self.grid[0] * self.grid[1]

    @property
    def patch_dim(self) -> int:
        return self.patch_size * self.patch_size * 3

    @property
    def head_dim(self) -> int:
        return self.d // self.heads

    @property
    def out_dim(self) -> int:
        return self.vocab_size if self.target_kind == "tokens" else self.patch_dim


@dataclass
class ModelState:
    config: ModelConfig
    params: dict[str, Tensor]
    no_decay: set[str]
    trainable: set[str]
    pos_table: np.ndarray  # [K, d], row-major grid index order
    lora: Optional[dict] = None
    step: int = 0
    seeds: dict = field(default_factory=dict)


def sinusoidal_pos_embed(grid: tuple[int, int], d: int, dtype=np.float32) -> np.ndarray:
    """[K, d] table: first d/2 dims encode the row index, last d/2 the column,
    each as an interleaved sin/cos frequency ladder."""
    if d % 4 != 0:
        raise ValueError(f"embedding width {d} not divisible by 4")
    rows, cols = grid
    half = d // 2

    def ladder(positions: np.ndarray) -> np.ndarray:
        freqs = np.exp(-math.log(10000.0) * np.arange(half // 2) / (half // 2))
        ang = positions[:, None] * freqs[None, :]
        out = np.empty((positions.shape[0], half))
        out[:, 0::2] = np.sin(ang)
        out[:, 1::2] = np.cos(ang)
        return out

    rr, cc = np.divmod(np.arange(rows * cols), cols)
    return np.concatenate([ladder(rr.astype(float)), ladder(cc.astype(float))], axis=1).astype(dtype)


def _trunc_normal(rng: np.random.Generator, shape, std: float = 0.02) -> np.ndarray:
    x = rng.normal(0.0, std, size=shape)
    bad = np.abs(x) > 2 * std
    while bad.any():
        x[bad] = rng.normal(0.0, std, size=int(bad.sum()))
        bad = np.abs(x) > 2 * std
    return x


def _block_param_shapes(prefix: str, width: int, ratio: int) -> list[tuple[str, tuple]]:
    return [
        (f"{prefix}.norm1.g", (width,)),
        (f"{prefix}.attn.wq", (width, width)),
        (f"{prefix}.attn.wk", (width, width)),
        (f"{prefix}.attn.wv", (width, width)),
        (f"{prefix}.attn.wo", (width, width)),
        (f"{prefix}.norm2.g", (width,)),
        (f"{prefix}.mlp.fc1", (width, ratio * width)),
        (f"{prefix}.mlp.fc2", (ratio * width, width)),
    ]


def _param_shapes(cfg: ModelConfig) -> list[tuple[str, tuple]]:
    shapes: list[tuple[str, tuple]] = [("embed.w", (cfg.patch_dim, cfg.d))]
    for i in range(cfg.layers):
        shapes.extend(_block_param_shapes(f"blocks.{i}", cfg.d, cfg.mlp_ratio))
    shapes.append(("final_norm.g", (cfg.d,)))
    shapes.append(("mask_token", (cfg.d,)))
    w = cfg.head_width
    if cfg.head_kind == "none":
        shapes.append(("head.out", (cfg.d, cfg.out_dim)))
    elif cfg.head_kind == "mlp":
        shapes.append(("head.inp", (cfg.d, w)))
        for j in range(cfg.head_blocks):
            shapes.extend(
                [
                    (f"head.blocks.{j}.norm.g", (w,)),
                    (f"head.blocks.{j}.fc1", (w, cfg.mlp_ratio * w)),
                    (f"head.blocks.{j}.fc2", (cfg.mlp_ratio * w, w)),
                ]
            )
        shapes.append(("head.norm.g", (w,)))
        shapes.append(("head.out", (w, cfg.out_dim)))
    else:  # transformer
        shapes.append(("head.inp", (cfg.d, w)))
        for j in range(cfg.head_blocks):
            shapes.extend(_block_param_shapes(f"head.blocks.{j}", w, cfg.mlp_ratio))
        shapes.append(("head.norm.g", (w,)))
        shapes.append(("head.out", (w, cfg.out_dim)))
    return shapes


def init_model(cfg: ModelConfig, seed: int, dtype=np.float32) -> ModelState:
    """Truncated-normal(0, 0.02) weights, unit norm scales, deterministic in
    (cfg, seed)."""
    rng = np.random.default_rng(seed)
    params: dict[str, Tensor] = {}
    no_decay: set[str] = set()
    for name, shape in _param_shapes(cfg):
        if name.endswith(".g"):
            data = np.ones(shape)
            no_decay.add(name)
        else:
            data = _trunc_normal(rng, shape)
        params[name] = ad.parameter(data, name=name, dtype=dtype)
    return ModelState(
        config=cfg,
        params=params,
        no_decay=no_decay,
        trainable=set(params),
        pos_table=sinusoidal_pos_embed(cfg.grid, cfg.d, dtype=dtype),
        seeds={"init": seed},
    )


def set_trainable(state: ModelState, names: Iterable[str]) -> None:
    state.trainable = set(names)
    for name, p in state.params.items():
        p.requires_grad = name in state.trainable
        p.track = p.requires_grad
        p.zero_grad()


def parameter_counts(state: ModelState) -> dict[str, int]:
    counts = {"trunk": 0, "head": 0, "lora": 0, "other": 0}
    for name, p in state.params.items():
        if ".lora_" in name:
            counts["lora"] += p.data.size
        elif name.startswith("head."):
            counts["head"] += p.data.size
        elif name == "mask_token":
            counts["other"] += p.data.size
        else:
            counts["trunk"] += p.data.size
    counts["total"] = sum(counts.values())
    return counts


def parameter_fingerprint(state: ModelState, names: Optional[Iterable[str]] = None) -> str:
    digest = hashlib.sha256()
    for name in sorted(names if names is not None else state.params):
        digest.update(name.encode())
        digest.update(np.ascontiguousarray(state.params[name].data).tobytes())
    return digest.hexdigest()


# ---------------------------------------------------------------------------
# forward passes
# ---------------------------------------------------------------------------

def _attn_weight(state: ModelState, prefix: str, name: str) -> Tensor:
    base = state.params[f"{prefix}.attn.{name}"]
    if state.lora is None:
        return base
    a = state.params.get(f"{prefix}.attn.{name}.lora_a")
    if a is None:
        return base
    b = state.params[f"{prefix}.attn.{name}.lora_b"]
    delta = ad.matmul(ad.transpose(a, (1, 0)), ad.transpose(b, (1, 0)))
    return ad.add(base, ad.scale(delta, state.lora["alpha"] / state.lora["rank"]))


def _attention(state: ModelState, prefix: str, h: Tensor, plan: AttentionPlan,
               heads: int) -> Tensor:
    b, k, width = h.shape
    dh = width // heads
    q = ad.matmul(h, _attn_weight(state, prefix, "wq"))
    key = ad.matmul(h, state.params[f"{prefix}.attn.wk"])
    v = ad.matmul(h, _attn_weight(state, prefix, "wv"))

    def split(t: Tensor) -> Tensor:
        return ad.transpose(ad.reshape(t, (b, k, heads, dh)), (0, 2, 1, 3))

    qh, kh, vh = split(q), split(key), split(v)
    scores = ad.scale(ad.matmul(qh, ad.transpose(kh, (0, 1, 3, 2))), 1.0 / math.sqrt(dh))
    probs = ad.masked_softmax(scores, plan)
    ctx = ad.matmul(probs, vh)
    merged = ad.reshape(ad.transpose(ctx, (0, 2, 1, 3)), (b, k, width))
    return ad.matmul(merged, _attn_weight(state, prefix, "wo"))


def _mlp(state: ModelState, prefix: str, h: Tensor) -> Tensor:
    h = ad.matmul(h, state.params[f"{prefix}.mlp.fc1"])
    h = ad.gelu(h)
    return ad.matmul(h, state.params[f"{prefix}.mlp.fc2"])


def _transformer_block(state: ModelState, prefix: str, x: Tensor, plan: AttentionPlan,
                       heads: int) -> Tensor:
    h = ad.layer_norm_scale_only(x, state.params[f"{prefix}.norm1.g"])
    x = ad.add(x, _attention(state, prefix, h, plan, heads))
    h = ad.layer_norm_scale_only(x, state.params[f"{prefix}.norm2.g"])
    return ad.add(x, _mlp(state, prefix, h))


def _slot_positions(state: ModelState, seq: PatchSequence) -> np.ndarray:
    cols = state.config.grid[1]
    grid_idx = seq.grid_positions[:, 0] * cols + seq.grid_positions[:, 1]
    return state.pos_table[grid_idx]


def forward_trunk(
    state: ModelState,
    seq: PatchSequence,
    plan: AttentionPlan,
    collect_layers: Optional[set[int]] = None,
    mask_slots: Optional[np.ndarray] = None,
) -> tuple[Tensor, dict[int, Tensor]]:
    """Embed, add grid-anchored positions, run pre-norm blocks under the
    plan's visibility; returns the final-normed features plus raw block
    outputs for any requested 1-based layer indices.

    ``mask_slots`` ([batch, K] bool) swaps embedded patches for the shared
    learnable mask token before positions are added.
    """
    cfg = state.config
    if plan.K != seq.K:
        raise ValueError(f"plan length {plan.K} != sequence length {seq.K}")
    if seq.patch_dim != cfg.patch_dim:
        raise ValueError(f"patch dim {seq.patch_dim} != config {cfg.patch_dim}")
    x = ad.matmul(ad.constant(seq.inputs), state.params["embed.w"])
    if mask_slots is not None:
        keep = ad.constant((~mask_slots)[:, :, None].astype(x.dtype))
        fill = ad.constant(mask_slots[:, :, None].astype(x.dtype))
        token = ad.reshape(state.params["mask_token"], (1, 1, cfg.d))
        x = ad.add(ad.mul(x, keep), ad.mul(fill, token))
    x = ad.embedding_add(x, ad.constant(_slot_positions(state, seq)))

    collected: dict[int, Tensor] = {}
    for i in range(cfg.layers):
        x = _transformer_block(state, f"blocks.{i}", x, plan, cfg.heads)
        if collect_layers and (i + 1) in collect_layers:
            collected[i + 1] = x
    out = ad.layer_norm_scale_only(x, state.params["final_norm.g"])
    return out, collected


def forward_pixel_head(
    state: ModelState,
    features: Tensor,
    seq: PatchSequence,
    plan: Optional[AttentionPlan] = None,
) -> Tensor:
    """Project trunk features to the target space.

    ``none`` is a single linear map; ``mlp`` runs per-patch residual MLP
    blocks; ``transformer`` runs full blocks under the supplied plan.
    Positional embeddings are re-added before the mlp/transformer heads.
    """
    cfg = state.config
    if cfg.head_kind == "none":
        return ad.matmul(features, state.params["head.out"])
    x = ad.embedding_add(features, ad.constant(_slot_positions(state, seq)))
    x = ad.matmul(x, state.params["head.inp"])
    if cfg.head_kind == "mlp":
        for j in range(cfg.head_blocks):
            prefix = f"head.blocks.{j}"
            h = ad.layer_norm_scale_only(x, state.params[f"{prefix}.norm.g"])
            h = ad.matmul(h, state.params[f"{prefix}.fc1"])
            h = ad.gelu(h)
            h = ad.matmul(h, state.params[f"{prefix}.fc2"])
            x = ad.add(x, h)
    else:
        if plan is None:
            raise ValueError("transformer head requires an attention plan")
        heads = cfg.head_width // cfg.head_dim
        for j in range(cfg.head_blocks):
            x = _transformer_block(state, f"head.blocks.{j}", x, plan, heads)
    x = ad.layer_norm_scale_only(x, state.params["head.norm.g"])
    return ad.matmul(x, state.params["head.out"])


# ---------------------------------------------------------------------------
# probes
# ---------------------------------------------------------------------------

@dataclass
class Probe:
    kind: str  # "attentive" | "linear"
    params: dict[str, Tensor]
    heads: int = 1

    def trainable(self) -> list[Tensor]:
        return list(self.params.values())

    def pool_param_count(self) -> int:
        return sum(p.data.size for n, p in self.params.items() if n != "cls")


def make_attentive_probe(d: int, num_classes: int, seed: int, head_dim: int = 64,
                         dtype=np.float32) -> Probe:
    """Multi-head attention pooling (learnable query) + linear classifier.

    The pooling itself carries exactly 2*d^2 + d learnable parameters.
    """
    head_dim = min(head_dim, d)
    if d % head_dim != 0:
        raise ValueError(f"width {d} not divisible by probe head dim {head_dim}")
    rng = np.random.default_rng(seed)
    params = {
        "wk": ad.parameter(_trunc_normal(rng, (d, d)), name="probe.wk", dtype=dtype),
        "wv": ad.parameter(_trunc_normal(rng, (d, d)), name="probe.wv", dtype=dtype),
        "q": ad.parameter(_trunc_normal(rng, (d,)), name="probe.q", dtype=dtype),
        "cls": ad.parameter(_trunc_normal(rng, (d, num_classes)), name="probe.cls", dtype=dtype),
    }
    return Probe("attentive", params, heads=d // head_dim)


def make_linear_probe(d: int, num_classes: int, seed: int, dtype=np.float32) -> Probe:
    rng = np.random.default_rng(seed)
    params = {
        "cls": ad.parameter(_trunc_normal(rng, (d, num_classes)), name="probe.cls", dtype=dtype),
    }
    return Probe("linear", params)


def attentive_pool(probe: Probe, features: Tensor) -> Tensor:
    """Per-head softmax pooling of value projections; output [batch, d] is a
    concatenation over heads of convex combinations of W_v p_i."""
    b, k, d = features.shape
    heads = probe.heads
    dh = d // heads
    keys = ad.reshape(ad.matmul(features, probe.params["wk"]), (b, k, heads, dh))
    q = ad.reshape(probe.params["q"], (1, 1, heads, dh))
    scores = ad.tensor_sum(ad.mul(keys, q), axis=3)  # [b, k, heads]
    probs = ad.softmax(ad.transpose(scores, (0, 2, 1)))  # [b, heads, k]
    vals = ad.transpose(ad.reshape(ad.matmul(features, probe.params["wv"]), (b, k, heads, dh)),
                        (0, 2, 1, 3))
    ctx = ad.matmul(ad.reshape(probs, (b, heads, 1, k)), vals)  # [b, heads, 1, dh]
    return ad.reshape(ctx, (b, d))


def probe_logits(probe: Probe, features: Tensor) -> Tensor:
    if probe.kind == "attentive":
        pooled = attentive_pool(probe, features)
    else:
        pooled = ad.tensor_mean(features, axis=1)
    return ad.matmul(pooled, probe.params["cls"])


# ---------------------------------------------------------------------------
# closed-form parameter counts (used by tests and reporting)
# ---------------------------------------------------------------------------

def trunk_param_formula(cfg: ModelConfig) -> int:
    per_block = 4 * cfg.d**2 + 2 * cfg.mlp_ratio * cfg.d**2 + 2 * cfg.d
    return cfg.patch_dim * cfg.d + cfg.layers * per_block + cfg.d


def head_param_formula(cfg: ModelConfig) -> int:
    w = cfg.head_width
    if cfg.head_kind == "none":
        return cfg.d * cfg.out_dim
    if cfg.head_kind == "mlp":
        per_block = 2 * cfg.mlp_ratio * w**2 + w
        return cfg.d * w + cfg.head_blocks * per_block + w + w * cfg.out_dim
    per_block = 4 * w**2 + 2 * cfg.mlp_ratio * w**2 + 2 * w
    return cfg.d * w + cfg.head_blocks * per_block + w + w * cfg.out_dim
