"""Factorised spatio-temporal encoder.

Spatial attention runs over the tokens sharing one temporal index (plus the
shared class token, broadcast per index); the per-index class-token outputs
then pass through temporal attention with their own class token and a
learnable temporal position embedding. Blocks are pre-norm: LN -> sublayer ->
residual. After the temporal stage the output vector takes a residual from
the mean of the spatial class tokens and one final feed-forward block.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from mcvv import tensor as T
from mcvv.tensor import Tensor
from mcvv.tubelet import TokenSequence

INIT_STD = 0.02


@dataclass(frozen=True)
class EncoderConfig:
    d: int = 64
    heads: int = 4
    n_sp: int = 2          # spatial layers
    n_tp: int = 2          # temporal layers
    mlp_hidden: int = 128

    def __post_init__(self):
        if self.d % self.heads != 0:
            raise ValueError(f"d={self.d} not divisible by heads={self.heads}")
        if self.n_sp < 1 or self.n_tp < 1:
            raise ValueError("need at least one spatial and one temporal layer")


@dataclass
class AttentionParams:
    ln_gain: Tensor
    ln_bias: Tensor
    wq: Tensor
    bq: Tensor
    wk: Tensor
    bk: Tensor
    wv: Tensor
    bv: Tensor
    wo: Tensor
    bo: Tensor


@dataclass
class FeedForwardParams:
    ln_gain: Tensor
    ln_bias: Tensor
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor


@dataclass
class LayerParams:
    attn: AttentionParams
    ff: FeedForwardParams


@dataclass
class EncoderParams:
    spatial: list[LayerParams]
    temporal: list[LayerParams]
    temporal_cls: Tensor       # [d]
    temporal_pos: Tensor       # [n_t + 1, d]
    final_ff: FeedForwardParams


def _param(rng, shape, dtype, std=INIT_STD):
    return Tensor(rng.normal(0.0, std, size=shape).astype(dtype), requires_grad=True)


def _matrix(rng, shape, dtype):
    """Fan-scaled (Glorot) weight draw; a fixed tiny std leaves a desk-scale
    network input-insensitive within the step budgets used here."""
    fan_in, fan_out = shape[-2], shape[-1]
    std = math.sqrt(2.0 / (fan_in + fan_out))
    return Tensor(rng.normal(0.0, std, size=shape).astype(dtype), requires_grad=True)


def _zeros(shape, dtype):
    return Tensor(np.zeros(shape, dtype=dtype), requires_grad=True)


def _ones(shape, dtype):
    return Tensor(np.ones(shape, dtype=dtype), requires_grad=True)


def init_attention_params(d: int, rng, dtype) -> AttentionParams:
    return AttentionParams(
        ln_gain=_ones(d, dtype), ln_bias=_zeros(d, dtype),
        wq=_matrix(rng, (d, d), dtype), bq=_zeros(d, dtype),
        wk=_matrix(rng, (d, d), dtype), bk=_zeros(d, dtype),
        wv=_matrix(rng, (d, d), dtype), bv=_zeros(d, dtype),
        wo=_matrix(rng, (d, d), dtype), bo=_zeros(d, dtype),
    )


def init_feed_forward_params(d: int, hidden: int, rng, dtype) -> FeedForwardParams:
    return FeedForwardParams(
        ln_gain=_ones(d, dtype), ln_bias=_zeros(d, dtype),
        w1=_matrix(rng, (d, hidden), dtype), b1=_zeros(hidden, dtype),
        w2=_matrix(rng, (hidden, d), dtype), b2=_zeros(d, dtype),
    )


def init_layer_params(cfg: EncoderConfig, rng, dtype) -> LayerParams:
    return LayerParams(attn=init_attention_params(cfg.d, rng, dtype),
                       ff=init_feed_forward_params(cfg.d, cfg.mlp_hidden, rng, dtype))


def init_encoder_params(cfg: EncoderConfig, n_t: int, rng, dtype=np.float32) -> EncoderParams:
    return EncoderParams(
        spatial=[init_layer_params(cfg, rng, dtype) for _ in range(cfg.n_sp)],
        temporal=[init_layer_params(cfg, rng, dtype) for _ in range(cfg.n_tp)],
        temporal_cls=_param(rng, (cfg.d,), dtype),
        temporal_pos=_param(rng, (n_t + 1, cfg.d), dtype),
        final_ff=init_feed_forward_params(cfg.d, cfg.mlp_hidden, rng, dtype),
    )


# -- forward passes ---------------------------------------------------------------


def mhsa(x: Tensor, params: AttentionParams, heads: int) -> Tensor:
    """Pre-norm multi-head self-attention with residual; [n,d] or [b,n,d] input."""
    squeeze = x.ndim == 2
    if squeeze:
        x = T.reshape(x, (1,) + x.shape)
    b, n, d = x.shape
    if d % heads != 0:
        raise T.ShapeError(f"model dim {d} not divisible by {heads} heads")
    dh = d // heads

    h = T.layer_norm(x, params.ln_gain, params.ln_bias)
    q = T.linear(h, params.wq, params.bq)
    k = T.linear(h, params.wk, params.bk)
    v = T.linear(h, params.wv, params.bv)

    def split_heads(m):
        return T.transpose(T.reshape(m, (b, n, heads, dh)), (0, 2, 1, 3))

    q4, k4, v4 = split_heads(q), split_heads(k), split_heads(v)
    scores = T.mul(T.matmul(q4, T.transpose(k4, (0, 1, 3, 2))), 1.0 / math.sqrt(dh))
    attn = T.softmax(scores, axis=-1)
    ctx = T.matmul(attn, v4)
    ctx = T.reshape(T.transpose(ctx, (0, 2, 1, 3)), (b, n, d))
    out = T.add(x, T.linear(ctx, params.wo, params.bo))
    return T.reshape(out, (n, d)) if squeeze else out


def feed_forward(x: Tensor, params: FeedForwardParams) -> Tensor:
    """Pre-norm MLP block with residual: x + W2(gelu(W1(LN(x))))."""
    h = T.layer_norm(x, params.ln_gain, params.ln_bias)
    h = T.gelu(T.linear(h, params.w1, params.b1))
    return T.add(x, T.linear(h, params.w2, params.b2))


def transformer_layer(x: Tensor, layer: LayerParams, heads: int) -> Tensor:
    return feed_forward(mhsa(x, layer.attn, heads), layer.ff)


def spatial_encode(seq: TokenSequence, cfg: EncoderConfig, params: EncoderParams) -> Tensor:
    """Per-temporal-index attention over that index's spatial tokens plus the
    shared class token; returns the n_t class-token outputs, one per index."""
    n_t, n_spatial = seq.n_t, seq.n_spatial
    d = seq.tokens.shape[-1]
    cls = T.reshape(seq.tokens[0:1, :], (1, 1, d))
    cls = T.repeat(cls, n_t, axis=0)                              # [n_t, 1, d]
    rest = T.reshape(seq.tokens[1:, :], (n_t, n_spatial, d))      # time-major layout
    x = T.concat([cls, rest], axis=1)                             # [n_t, S+1, d]
    for layer in params.spatial:
        x = transformer_layer(x, layer, cfg.heads)
    return x[:, 0, :]                                             # [n_t, d]


def temporal_encode(steps: Tensor, cfg: EncoderConfig, params: EncoderParams) -> Tensor:
    """Attend across temporal steps [n_t, d] behind a temporal class token."""
    n_t, d = steps.shape
    if params.temporal_pos.shape != (n_t + 1, d):
        raise T.ShapeError(f"temporal position embedding {params.temporal_pos.shape} "
                           f"does not fit {n_t} steps")
    x = T.concat([T.reshape(params.temporal_cls, (1, d)), steps], axis=0)
    x = T.add(x, params.temporal_pos)
    for layer in params.temporal:
        x = transformer_layer(x, layer, cfg.heads)
    return x[0, :]


def encoder_forward(seq: TokenSequence, cfg: EncoderConfig, params: EncoderParams) -> Tensor:
    """Sequence-level feature: spatial stage, temporal stage, residual from the
    mean spatial class token, and a final feed-forward block."""
    spatial_out = spatial_encode(seq, cfg, params)
    temporal_out = temporal_encode(spatial_out, cfg, params)
    fused = T.add(temporal_out, T.tmean(spatial_out, axis=0))
    out = feed_forward(T.reshape(fused, (1, cfg.d)), params.final_ff)
    return T.reshape(out, (cfg.d,))
