"""Masked scaled dot-product attention and multi-mask multi-head attention.

Each head receives its own additive mask matrix; heads are computed
sequentially and concatenated before the shared output projection.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DimensionError
from .params import ParamStore
from .tensor import (
    Tensor,
    add_const,
    concat_cols,
    glorot,
    matmul,
    scale,
    softmax_rows,
    transpose,
)


@dataclass
class AttentionParams:
    """Per-head projections plus the shared output projection."""

    query: list[Tensor]
    key: list[Tensor]
    value: list[Tensor]
    out: Tensor


def init_attention_params(
    store: ParamStore,
    d_e: int,
    n_heads: int,
    rng: np.random.Generator,
    prefix: str = "attention",
) -> AttentionParams:
    if n_heads < 1 or d_e % n_heads:
        raise ConfigurationError(f"model dim {d_e} is not divisible by {n_heads} heads")
    d_k = d_e // n_heads
    query, key, value = [], [], []
    for h in range(n_heads):
        query.append(store.add(f"{prefix}.head{h}.query", glorot(rng, d_e, d_k)))
        key.append(store.add(f"{prefix}.head{h}.key", glorot(rng, d_e, d_k)))
        value.append(store.add(f"{prefix}.head{h}.value", glorot(rng, d_e, d_k)))
    out = store.add(f"{prefix}.out", glorot(rng, d_e, d_e))
    return AttentionParams(query, key, value, out)


def _attend(q: Tensor, k: Tensor, v: Tensor, mask: np.ndarray) -> tuple[Tensor, Tensor]:
    d_k = q.data.shape[1]
    logits = add_const(scale(matmul(q, transpose(k)), 1.0 / math.sqrt(d_k)), mask)
    weights = softmax_rows(logits)
    return matmul(weights, v), weights


def masked_attention(q: Tensor, k: Tensor, v: Tensor, mask: np.ndarray) -> Tensor:
    """softmax(q k^T / sqrt(d_k) + mask) v, with zero weight at masked cells."""
    l = q.data.shape[0]
    if k.data.shape != q.data.shape or v.data.shape != q.data.shape:
        raise DimensionError(
            f"attention operands disagree: {q.shape}, {k.shape}, {v.shape}"
        )
    if mask.shape != (l, l):
        raise DimensionError(f"mask shape {mask.shape} does not fit length {l}")
    out, _ = _attend(q, k, v, mask)
    return out


def _head_outputs(
    x: Tensor, params: AttentionParams, masks: list[np.ndarray], n_heads: int
) -> tuple[list[Tensor], list[Tensor]]:
    l, d_e = x.data.shape
    if len(masks) != n_heads:
        raise ConfigurationError(f"{n_heads} heads need {n_heads} masks, got {len(masks)}")
    if len(params.query) != n_heads:
        raise ConfigurationError(
            f"parameters hold {len(params.query)} heads, expected {n_heads}"
        )
    if d_e % n_heads:
        raise ConfigurationError(f"model dim {d_e} is not divisible by {n_heads} heads")
    outs, weights = [], []
    for h in range(n_heads):
        if masks[h].shape != (l, l):
            raise DimensionError(
                f"mask {h} has shape {masks[h].shape}, expected {(l, l)}"
            )
        q = matmul(x, params.query[h])
        k = matmul(x, params.key[h])
        v = matmul(x, params.value[h])
        o, w = _attend(q, k, v, masks[h])
        outs.append(o)
        weights.append(w)
    return outs, weights


def mm_mh_attention(
    x: Tensor, params: AttentionParams, masks: list[np.ndarray], n_heads: int
) -> Tensor:
    """Self-attention where head h sees only its own mask."""
    outs, _ = _head_outputs(x, params, masks, n_heads)
    return matmul(concat_cols(*outs), params.out)


def attention_weights(
    x: Tensor, params: AttentionParams, masks: list[np.ndarray], n_heads: int
) -> list[np.ndarray]:
    """Post-softmax weight matrix per head, for inspection and heat maps."""
    _, weights = _head_outputs(x, params, masks, n_heads)
    return [w.data for w in weights]
