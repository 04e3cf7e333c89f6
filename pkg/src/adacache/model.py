"""Deterministic toy video DiT.

Each block follows the residual layout

    p = STA(f);  f~ = f + p
    q = CA(f~);  f- = f~ + q
    r = MLP(f-); f' = f- + r

with a joint spatio-temporal self-attention over all ``frames * tokens``
positions and cross-attention against a fixed synthetic conditioning matrix.
Sub-layers normalize their own input; the residual stream itself is left alone.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from adacache.numerics import DTYPE, attention, gelu, layer_norm, matmul


@dataclass(frozen=True)
class ModelConfig:
    layers: int = 8
    channels: int = 64
    heads: int = 4
    frames: int = 8
    tokens_per_frame: int = 16
    steps: int = 30
    cond_tokens: int = 4
    seed: int = 0
    mlp_ratio: int = 4
    # multiplier on the sinusoidal timestep embedding; larger values make
    # residuals vary faster across denoising steps
    temb_scale: float = 2.0

    def __post_init__(self):
        if self.layers < 1:
            raise ValueError("layers must be >= 1")
        if self.channels < 1 or self.heads < 1 or self.channels % self.heads:
            raise ValueError("channels must be a positive multiple of heads")
        if self.frames < 2:
            raise ValueError("frames must be >= 2")
        if self.tokens_per_frame < 1:
            raise ValueError("tokens_per_frame must be >= 1")
        if self.steps < 2:
            raise ValueError("steps must be >= 2")
        if self.cond_tokens < 1:
            raise ValueError("cond_tokens must be >= 1")
        if self.mlp_ratio < 1:
            raise ValueError("mlp_ratio must be >= 1")
        if not math.isfinite(self.temb_scale) or self.temb_scale < 0:
            raise ValueError("temb_scale must be finite and non-negative")

    @property
    def latent_shape(self) -> tuple[int, int, int]:
        return (self.frames, self.tokens_per_frame, self.channels)


@dataclass(frozen=True)
class AttentionWeights:
    norm_gain: np.ndarray
    norm_bias: np.ndarray
    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray
    wo: np.ndarray


@dataclass(frozen=True)
class MLPWeights:
    norm_gain: np.ndarray
    norm_bias: np.ndarray
    w_in: np.ndarray
    w_out: np.ndarray


@dataclass(frozen=True)
class LayerWeights:
    sta: AttentionWeights
    ca: AttentionWeights
    mlp: MLPWeights


@dataclass(frozen=True)
class BlockResiduals:
    """Residual contributions of one block at one computed step."""

    p: np.ndarray
    q: np.ndarray
    r: np.ndarray
    layer: int
    computed_at_step: int

    def __post_init__(self):
        if not (self.p.shape == self.q.shape == self.r.shape):
            raise ValueError("p, q, r must share a shape")

    def get(self, name: str) -> np.ndarray:
        if name not in ("p", "q", "r"):
            raise ValueError(f"unknown residual {name!r}")
        return getattr(self, name)


@dataclass(frozen=True)
class Model:
    cfg: ModelConfig
    layers: tuple[LayerWeights, ...]
    cond: np.ndarray
    timestep_table: np.ndarray
    head_gain: np.ndarray
    head_bias: np.ndarray
    head_w: np.ndarray
    name: str = field(default="toy-dit")

    def forward(self, f, t, decisions=None):
        return dit_forward(self, f, self.cond, t, decisions)


def _gaussian(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    return (rng.standard_normal(shape) / math.sqrt(fan_in)).astype(DTYPE)


def _attention_weights(rng: np.random.Generator, d: int) -> AttentionWeights:
    return AttentionWeights(
        norm_gain=np.ones(d, dtype=DTYPE),
        norm_bias=np.zeros(d, dtype=DTYPE),
        wq=_gaussian(rng, (d, d), d),
        wk=_gaussian(rng, (d, d), d),
        wv=_gaussian(rng, (d, d), d),
        wo=_gaussian(rng, (d, d), d),
    )


def timestep_embedding(timestep: float, dim: int, max_period: float = 10000.0) -> np.ndarray:
    half = dim // 2
    freqs = np.exp(-math.log(max_period) * np.arange(half, dtype=np.float64) / half)
    args = timestep * freqs
    emb = np.concatenate([np.cos(args), np.sin(args)])
    if dim % 2:
        emb = np.concatenate([emb, np.zeros(1)])
    return emb


def init_model(cfg: ModelConfig) -> Model:
    """Build a model whose every weight is a pure function of ``cfg``."""
    rng = np.random.default_rng(cfg.seed)
    d = cfg.channels
    hidden = cfg.mlp_ratio * d
    layers = []
    for _ in range(cfg.layers):
        sta = _attention_weights(rng, d)
        ca = _attention_weights(rng, d)
        mlp = MLPWeights(
            norm_gain=np.ones(d, dtype=DTYPE),
            norm_bias=np.zeros(d, dtype=DTYPE),
            w_in=_gaussian(rng, (d, hidden), d),
            w_out=_gaussian(rng, (hidden, d), hidden),
        )
        layers.append(LayerWeights(sta=sta, ca=ca, mlp=mlp))
    cond = rng.standard_normal((cfg.cond_tokens, d)).astype(DTYPE)
    head_w = _gaussian(rng, (d, d), d)

    # one unit of phase per step keeps the embedding smooth in t, so residual
    # change grows with the gap between two steps
    table = np.stack([timestep_embedding(float(t), d) for t in range(cfg.steps)])
    table = (cfg.temb_scale * table).astype(DTYPE)
    return Model(
        cfg=cfg,
        layers=tuple(layers),
        cond=cond,
        timestep_table=table,
        head_gain=np.ones(d, dtype=DTYPE),
        head_bias=np.zeros(d, dtype=DTYPE),
        head_w=head_w,
    )


def spatio_temporal_attention(w: AttentionWeights, f: np.ndarray, heads: int) -> np.ndarray:
    n, s, d = f.shape
    x = layer_norm(f.reshape(n * s, d), w.norm_gain, w.norm_bias)
    out = attention(matmul(x, w.wq), matmul(x, w.wk), matmul(x, w.wv), heads)
    return matmul(out, w.wo).reshape(n, s, d)


def cross_attention(
    w: AttentionWeights, f: np.ndarray, cond: np.ndarray, heads: int
) -> np.ndarray:
    n, s, d = f.shape
    x = layer_norm(f.reshape(n * s, d), w.norm_gain, w.norm_bias)
    out = attention(matmul(x, w.wq), matmul(cond, w.wk), matmul(cond, w.wv), heads)
    return matmul(out, w.wo).reshape(n, s, d)


def feed_forward(w: MLPWeights, f: np.ndarray) -> np.ndarray:
    n, s, d = f.shape
    x = layer_norm(f.reshape(n * s, d), w.norm_gain, w.norm_bias)
    return matmul(gelu(matmul(x, w.w_in)), w.w_out).reshape(n, s, d)


def block_forward(
    weights: LayerWeights,
    f_in: np.ndarray,
    cond: np.ndarray,
    t: int,
    l: int,
    heads: int,
    reuse: Optional[BlockResiduals] = None,
) -> tuple[np.ndarray, BlockResiduals]:
    """Run one block, either computing fresh residuals or adding cached ones.

    With ``reuse`` set, no attention or MLP kernel is touched: the output is
    ``f_in + p + q + r`` and the cached residuals are returned unchanged.
    """
    if f_in.ndim != 3:
        raise ValueError(f"latent must be [frames, tokens, channels], got {f_in.shape}")
    if reuse is not None:
        if reuse.p.shape != f_in.shape:
            raise ValueError(
                f"cached residual shape {reuse.p.shape} != latent shape {f_in.shape}"
            )
        return f_in + reuse.p + reuse.q + reuse.r, reuse

    if cond.ndim != 2 or cond.shape[1] != f_in.shape[2]:
        raise ValueError(f"conditioning shape {cond.shape} incompatible with {f_in.shape}")
    p = spatio_temporal_attention(weights.sta, f_in, heads)
    f_tilde = f_in + p
    q = cross_attention(weights.ca, f_tilde, cond, heads)
    f_bar = f_tilde + q
    r = feed_forward(weights.mlp, f_bar)
    f_out = f_bar + r
    return f_out, BlockResiduals(p=p, q=q, r=r, layer=l, computed_at_step=t)


def output_head(model: Model, f: np.ndarray) -> np.ndarray:
    n, s, d = f.shape
    x = layer_norm(f.reshape(n * s, d), model.head_gain, model.head_bias)
    return matmul(x, model.head_w).reshape(n, s, d)


def dit_forward(
    model: Model,
    f: np.ndarray,
    cond: np.ndarray,
    t: int,
    decisions: Optional[Sequence[Optional[BlockResiduals]]] = None,
) -> tuple[np.ndarray, list[BlockResiduals]]:
    """Noise prediction for diffusion timestep ``t``.

    ``decisions[l]`` is ``None`` to compute layer ``l`` or a cached
    ``BlockResiduals`` to reuse. Omitting ``decisions`` computes every layer.
    Returned residuals carry ``computed_at_step`` from when they were computed.
    """
    cfg = model.cfg
    if decisions is None:
        decisions = [None] * cfg.layers
    if len(decisions) != cfg.layers:
        raise ValueError(f"expected {cfg.layers} per-layer decisions, got {len(decisions)}")
    if f.shape != cfg.latent_shape:
        raise ValueError(f"latent shape {f.shape} != configured {cfg.latent_shape}")
    if not 0 <= t < cfg.steps:
        raise ValueError(f"timestep {t} outside [0, {cfg.steps})")

    h = f + model.timestep_table[t]
    residuals = []
    for l, (weights, reuse) in enumerate(zip(model.layers, decisions)):
        h, res = block_forward(weights, h, cond, t, l, cfg.heads, reuse)
        residuals.append(res)
    return output_head(model, h), residuals


def layer_flops(cfg: ModelConfig) -> dict[str, int]:
    """Multiply-accumulate counts of the matmuls in one block."""
    m = cfg.frames * cfg.tokens_per_frame
    d = cfg.channels
    c = cfg.cond_tokens
    hidden = cfg.mlp_ratio * d
    sta = 4 * m * d * d + 2 * m * m * d
    ca = 2 * m * d * d + 2 * c * d * d + 2 * m * c * d
    mlp = 2 * m * d * hidden
    return {"sta": sta, "ca": ca, "mlp": mlp}


def flops_per_step(cfg: ModelConfig, cached: bool) -> int:
    if cached:
        return cfg.layers * 3 * cfg.frames * cfg.tokens_per_frame * cfg.channels
    return cfg.layers * sum(layer_flops(cfg).values())
