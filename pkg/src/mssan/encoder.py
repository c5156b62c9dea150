"""The full encoder block and pooling layer.

One layer is: multi-mask multi-head attention over the input, a sigmoid
fusion gate blending the projected input with the projected attention
output, then a position-wise feed-forward network wrapped in a residual
connection and layer normalization. Pooling concatenates an attentive
(per-feature) reduction with a columnwise max.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .attention import AttentionParams, init_attention_params, mm_mh_attention
from .errors import ConfigurationError, DimensionError, EmptyInputError
from .masks import build_schedule, masks_for_sentence, normalize_distance
from .params import ParamStore
from .tensor import (
    Tensor,
    add,
    add_bias,
    concat_cols,
    dropout,
    glorot,
    layer_norm,
    matmul,
    max_rows,
    mul,
    one_minus,
    relu,
    sigmoid,
    softmax_cols,
    softmax_rows,
    sum_rows,
)

POOL_AXES = ("tokens", "features")


@dataclass
class EncoderConfig:
    """Shape and behavior knobs of one encoder stack.

    ``d_h`` of 0 resolves to 4 * d_e. ``distance_cycle`` lists the distance
    kind of each head in the first (forward) half; the backward half repeats
    it. ``pool_softmax_axis`` picks which axis the attentive-pool softmax
    normalizes over: "tokens" (a distribution over tokens per feature) or
    "features" (the transposed reading).
    """

    d_e: int = 300
    n_heads: int = 6
    d_h: int = 0
    n_layers: int = 1
    alpha: float = 1.0
    distance_cycle: tuple[str, ...] = ("word", "dependency", "none")
    swap_direction: bool = False
    eps: float = 1e-5
    pool_softmax_axis: str = "tokens"
    dropout: float = 0.0

    def __post_init__(self) -> None:
        if self.d_h == 0:
            self.d_h = 4 * self.d_e
        self.distance_cycle = tuple(normalize_distance(k) for k in self.distance_cycle)
        if self.d_e < 1 or self.n_heads < 2 or self.n_heads % 2:
            raise ConfigurationError(
                f"need positive d_e and an even head count, got d_e={self.d_e}, n_heads={self.n_heads}"
            )
        if self.d_e % self.n_heads:
            raise ConfigurationError(
                f"d_e={self.d_e} is not divisible by n_heads={self.n_heads}"
            )
        if self.n_layers < 1:
            raise ConfigurationError(f"n_layers must be at least 1, got {self.n_layers}")
        if len(self.distance_cycle) != self.n_heads // 2:
            raise ConfigurationError(
                f"distance cycle length {len(self.distance_cycle)} does not match "
                f"{self.n_heads} heads"
            )
        if self.alpha < 0:
            raise ConfigurationError(f"alpha must be nonnegative, got {self.alpha}")
        if self.pool_softmax_axis not in POOL_AXES:
            raise ConfigurationError(
                f"pool_softmax_axis must be one of {POOL_AXES}, got {self.pool_softmax_axis!r}"
            )
        if not 0 <= self.dropout < 1:
            raise ConfigurationError(f"dropout must lie in [0, 1), got {self.dropout}")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["distance_cycle"] = list(self.distance_cycle)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EncoderConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        kwargs = {k: v for k, v in d.items() if k in names}
        if "distance_cycle" in kwargs:
            kwargs["distance_cycle"] = tuple(kwargs["distance_cycle"])
        return cls(**kwargs)

    @classmethod
    def from_json(cls, path) -> "EncoderConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


@dataclass
class GateParams:
    input_proj: Tensor
    output_proj: Tensor
    gate_input: Tensor
    gate_output: Tensor
    gate_bias: Tensor


@dataclass
class FfnParams:
    inner_w: Tensor
    inner_b: Tensor
    outer_w: Tensor
    outer_b: Tensor


@dataclass
class LayerParams:
    attention: AttentionParams
    gate: GateParams
    ffn: FfnParams
    norm_gain: Tensor
    norm_bias: Tensor


@dataclass
class EncoderParams:
    layers: list[LayerParams] = field(default_factory=list)
    pool: FfnParams | None = None


def _init_ffn(store: ParamStore, d_in: int, d_mid: int, rng, prefix: str) -> FfnParams:
    return FfnParams(
        inner_w=store.add(f"{prefix}.inner_w", glorot(rng, d_in, d_mid)),
        inner_b=store.add(f"{prefix}.inner_b", np.zeros((1, d_mid))),
        outer_w=store.add(f"{prefix}.outer_w", glorot(rng, d_mid, d_in)),
        outer_b=store.add(f"{prefix}.outer_b", np.zeros((1, d_in))),
    )


def init_encoder_params(
    store: ParamStore,
    config: EncoderConfig,
    rng: np.random.Generator,
    prefix: str = "encoder",
) -> EncoderParams:
    d_e, d_h = config.d_e, config.d_h
    layers = []
    for i in range(config.n_layers):
        lp = f"{prefix}.layer{i}"
        attention = init_attention_params(
            store, d_e, config.n_heads, rng, prefix=f"{lp}.attention"
        )
        gate = GateParams(
            input_proj=store.add(f"{lp}.gate.input_proj", glorot(rng, d_e, d_e)),
            output_proj=store.add(f"{lp}.gate.output_proj", glorot(rng, d_e, d_e)),
            gate_input=store.add(f"{lp}.gate.gate_input", glorot(rng, d_e, d_e)),
            gate_output=store.add(f"{lp}.gate.gate_output", glorot(rng, d_e, d_e)),
            gate_bias=store.add(f"{lp}.gate.gate_bias", np.zeros((1, d_e))),
        )
        ffn = _init_ffn(store, d_e, d_h, rng, f"{lp}.ffn")
        norm_gain = store.add(f"{lp}.norm_gain", np.ones((1, d_e)))
        norm_bias = store.add(f"{lp}.norm_bias", np.zeros((1, d_e)))
        layers.append(LayerParams(attention, gate, ffn, norm_gain, norm_bias))
    pool_params = _init_ffn(store, d_e, d_h, rng, f"{prefix}.pool")
    return EncoderParams(layers=layers, pool=pool_params)


def fusion_gate(original: Tensor, attended: Tensor, gate: GateParams) -> Tensor:
    """Sigmoid-gated blend of the projected input and projected attention output."""
    if original.data.shape != attended.data.shape:
        raise DimensionError(
            f"fusion gate inputs disagree: {original.shape} vs {attended.shape}"
        )
    proj_in = matmul(original, gate.input_proj)
    proj_out = matmul(attended, gate.output_proj)
    f = sigmoid(
        add_bias(
            add(matmul(proj_in, gate.gate_input), matmul(proj_out, gate.gate_output)),
            gate.gate_bias,
        )
    )
    return add(mul(f, proj_in), mul(one_minus(f), proj_out))


def feed_forward(x: Tensor, p: FfnParams) -> Tensor:
    """Two affine maps with rectification in between."""
    return add_bias(matmul(relu(add_bias(matmul(x, p.inner_w), p.inner_b)), p.outer_w), p.outer_b)


def position_wise_ffn(
    x: Tensor,
    p: FfnParams,
    norm_gain: Tensor,
    norm_bias: Tensor,
    eps: float = 1e-5,
    drop_rate: float = 0.0,
    rng: np.random.Generator | None = None,
) -> Tensor:
    """Residual feed-forward block followed by row layer normalization."""
    h = relu(add_bias(matmul(x, p.inner_w), p.inner_b))
    if drop_rate > 0 and rng is not None:
        h = dropout(h, drop_rate, rng)
    y = add_bias(matmul(h, p.outer_w), p.outer_b)
    return layer_norm(add(x, y), norm_gain, norm_bias, eps)


def encode(
    x: Tensor,
    config: EncoderConfig,
    params: EncoderParams,
    dep_heads: Sequence[int] | None = None,
    masks: list[np.ndarray] | None = None,
    length: int | None = None,
    rng: np.random.Generator | None = None,
) -> Tensor:
    """Run the encoder stack over embedded tokens; shape-preserving.

    ``length`` marks the number of real tokens when ``x`` carries padded
    rows; padded key columns are blocked for real queries and padded rows
    only see themselves. The same masks are reused at every layer.
    """
    rows = x.data.shape[0]
    if rows == 0:
        raise EmptyInputError("cannot encode an empty sentence")
    l = rows if length is None else length
    if not 1 <= l <= rows:
        raise DimensionError(f"length {l} invalid for {rows} embedded rows")
    if masks is None:
        schedule = build_schedule(config.n_heads, config.distance_cycle)
        masks = masks_for_sentence(
            schedule,
            l,
            heads=dep_heads,
            alpha=config.alpha,
            swap_direction=config.swap_direction,
            pad_to=rows,
        )
    for layer in params.layers:
        attended = mm_mh_attention(x, layer.attention, masks, config.n_heads)
        if config.dropout > 0 and rng is not None:
            attended = dropout(attended, config.dropout, rng)
        gated = fusion_gate(x, attended, layer.gate)
        x = position_wise_ffn(
            gated,
            layer.ffn,
            layer.norm_gain,
            layer.norm_bias,
            config.eps,
            config.dropout,
            rng,
        )
    return x


def attentive_pool(u: Tensor, pool_params: FfnParams, softmax_axis: str = "tokens") -> Tensor:
    """Feature-wise attention over tokens, reduced to a single row.

    Scores come from a feed-forward map of the encoded tokens; each feature
    column is normalized over tokens (default) and the weighted values are
    summed over the token dimension.
    """
    if softmax_axis not in POOL_AXES:
        raise ConfigurationError(f"softmax_axis must be one of {POOL_AXES}")
    scores = feed_forward(u, pool_params)
    if softmax_axis == "tokens":
        weights = softmax_cols(scores)
    else:
        weights = softmax_rows(scores)
    return sum_rows(mul(weights, u))


def pool(u: Tensor, pool_params: FfnParams, softmax_axis: str = "tokens") -> Tensor:
    """Concatenate the attentive reduction with the columnwise max; 1 x 2*d_e."""
    if u.data.shape[0] < 1:
        raise EmptyInputError("cannot pool an empty sentence")
    return concat_cols(attentive_pool(u, pool_params, softmax_axis), max_rows(u))


def param_count(config: EncoderConfig) -> int:
    """Exact number of trainable scalars in one encoder stack."""
    store = ParamStore()
    init_encoder_params(store, config, np.random.default_rng(0))
    return store.param_count()
