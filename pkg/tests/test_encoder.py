import json
import math

import numpy as np
import pytest
from util import numeric_gradient, relative_error

from mssan.encoder import (
    EncoderConfig,
    attentive_pool,
    encode,
    feed_forward,
    fusion_gate,
    init_encoder_params,
    param_count,
    pool,
    position_wise_ffn,
)
from mssan.errors import ConfigurationError, DimensionError
from mssan.params import ParamStore
from mssan.tensor import Tape, Tensor, mean_all, mul


def gate_oracle(I, O, p):
    """Scalar-arithmetic evaluation of the fusion gate."""
    l, d = I.shape
    proj_in = [[sum(I[i][t] * p.input_proj.data[t][j] for t in range(d)) for j in range(d)] for i in range(l)]
    proj_out = [[sum(O[i][t] * p.output_proj.data[t][j] for t in range(d)) for j in range(d)] for i in range(l)]
    out = np.zeros((l, d))
    for i in range(l):
        for j in range(d):
            z = (
                sum(proj_in[i][t] * p.gate_input.data[t][j] for t in range(d))
                + sum(proj_out[i][t] * p.gate_output.data[t][j] for t in range(d))
                + p.gate_bias.data[0][j]
            )
            f = 1.0 / (1.0 + math.exp(-z))
            out[i][j] = f * proj_in[i][j] + (1.0 - f) * proj_out[i][j]
    return out


def ffn_oracle(x, p):
    """Scalar two-layer feed-forward map."""
    l, d = x.shape
    mid = p.inner_w.data.shape[1]
    out = np.zeros((l, d))
    for i in range(l):
        h = [
            max(0.0, sum(x[i][t] * p.inner_w.data[t][j] for t in range(d)) + p.inner_b.data[0][j])
            for j in range(mid)
        ]
        for j in range(d):
            out[i][j] = sum(h[t] * p.outer_w.data[t][j] for t in range(mid)) + p.outer_b.data[0][j]
    return out


def layer_norm_oracle(x, gain, bias, eps):
    l, d = x.shape
    out = np.zeros((l, d))
    for i in range(l):
        mu = sum(x[i]) / d
        var = sum((v - mu) ** 2 for v in x[i]) / d
        for j in range(d):
            out[i][j] = (x[i][j] - mu) / math.sqrt(var + eps) * gain[0][j] + bias[0][j]
    return out


def attentive_pool_oracle(u, p):
    """Column softmax of the FFN scores, elementwise product, token sum."""
    scores = ffn_oracle(u, p)
    l, d = u.shape
    out = np.zeros(d)
    for j in range(d):
        col = scores[:, j]
        m = col.max()
        es = [math.exp(v - m) for v in col]
        s = sum(es)
        out[j] = sum((e / s) * u[i][j] for i, e in enumerate(es))
    return out


def make_gate(d_e, seed=0):
    store = ParamStore()
    cfg = EncoderConfig(d_e=d_e, n_heads=2, d_h=2 * d_e, distance_cycle=("none",))
    params = init_encoder_params(store, cfg, np.random.default_rng(seed))
    return cfg, params, store


class TestFusionGate:
    def test_saturated_bias_returns_projected_input(self):
        cfg, params, _ = make_gate(4, seed=1)
        g = params.layers[0].gate
        g.gate_input.data = np.zeros((4, 4))
        g.gate_output.data = np.zeros((4, 4))
        g.gate_bias.data = np.full((1, 4), 50.0)
        rng = np.random.default_rng(2)
        I, O = Tensor(rng.normal(size=(2, 4))), Tensor(rng.normal(size=(2, 4)))
        out = fusion_gate(I, O, g).data
        proj_in = I.data @ g.input_proj.data
        assert np.abs(out - proj_in).max() < 1e-15

    def test_zero_gate_is_even_blend(self):
        cfg, params, _ = make_gate(4, seed=3)
        g = params.layers[0].gate
        g.gate_input.data = np.zeros((4, 4))
        g.gate_output.data = np.zeros((4, 4))
        rng = np.random.default_rng(4)
        I, O = Tensor(rng.normal(size=(2, 4))), Tensor(rng.normal(size=(2, 4)))
        out = fusion_gate(I, O, g).data
        expected = 0.5 * (I.data @ g.input_proj.data) + 0.5 * (O.data @ g.output_proj.data)
        assert np.array_equal(out, expected)

    def test_matches_scalar_oracle(self):
        cfg, params, _ = make_gate(4, seed=5)
        g = params.layers[0].gate
        rng = np.random.default_rng(6)
        for _ in range(5):
            I, O = rng.normal(size=(3, 4)), rng.normal(size=(3, 4))
            got = fusion_gate(Tensor(I), Tensor(O), g).data
            assert np.abs(got - gate_oracle(I, O, g)).max() < 1e-12

    def test_blend_lies_between_projections(self):
        cfg, params, _ = make_gate(4, seed=7)
        g = params.layers[0].gate
        rng = np.random.default_rng(8)
        I, O = rng.normal(size=(5, 4)), rng.normal(size=(5, 4))
        out = fusion_gate(Tensor(I), Tensor(O), g).data
        pi, po = I @ g.input_proj.data, O @ g.output_proj.data
        assert (out >= np.minimum(pi, po) - 1e-12).all()
        assert (out <= np.maximum(pi, po) + 1e-12).all()

    def test_shape_mismatch(self):
        cfg, params, _ = make_gate(4)
        with pytest.raises(DimensionError):
            fusion_gate(Tensor(np.ones((2, 4))), Tensor(np.ones((3, 4))), params.layers[0].gate)


class TestPositionWiseFfn:
    def test_zero_weights_reduce_to_layer_norm(self):
        cfg, params, _ = make_gate(4, seed=9)
        layer = params.layers[0]
        for t in (layer.ffn.inner_w, layer.ffn.outer_w, layer.ffn.inner_b, layer.ffn.outer_b):
            t.data = np.zeros_like(t.data)
        rng = np.random.default_rng(10)
        x = rng.normal(size=(3, 4))
        got = position_wise_ffn(Tensor(x), layer.ffn, layer.norm_gain, layer.norm_bias, cfg.eps).data
        want = layer_norm_oracle(x, layer.norm_gain.data, layer.norm_bias.data, cfg.eps)
        assert np.abs(got - want).max() < 1e-15

    def test_single_row_scalar_pipeline(self):
        cfg, params, _ = make_gate(2, seed=11)
        layer = params.layers[0]
        rng = np.random.default_rng(12)
        x = rng.normal(size=(1, 2))
        got = position_wise_ffn(Tensor(x), layer.ffn, layer.norm_gain, layer.norm_bias, cfg.eps).data
        want = layer_norm_oracle(
            x + ffn_oracle(x, layer.ffn), layer.norm_gain.data, layer.norm_bias.data, cfg.eps
        )
        assert np.abs(got - want).max() < 1e-12

    def test_rows_standardized_before_affine(self):
        cfg, params, _ = make_gate(8, seed=13)
        layer = params.layers[0]
        layer.norm_gain.data = np.ones((1, 8))
        layer.norm_bias.data = np.zeros((1, 8))
        rng = np.random.default_rng(14)
        out = position_wise_ffn(
            Tensor(rng.normal(size=(5, 8))), layer.ffn, layer.norm_gain, layer.norm_bias, cfg.eps
        ).data
        assert np.abs(out.mean(axis=1)).max() < 1e-12
        assert np.abs(out.var(axis=1) - 1.0).max() < 1e-4


class TestPooling:
    def test_single_token_attentive_pool_is_identity(self):
        cfg, params, _ = make_gate(4, seed=15)
        u = np.random.default_rng(16).normal(size=(1, 4))
        out = attentive_pool(Tensor(u), params.pool).data
        assert np.array_equal(out, u)

    def test_zero_score_map_gives_column_means(self):
        cfg, params, _ = make_gate(4, seed=17)
        for t in (params.pool.inner_w, params.pool.outer_w, params.pool.inner_b, params.pool.outer_b):
            t.data = np.zeros_like(t.data)
        u = np.random.default_rng(18).normal(size=(5, 4))
        out = attentive_pool(Tensor(u), params.pool).data
        assert np.abs(out - u.mean(axis=0)).max() < 1e-12

    def test_matches_scalar_oracle(self):
        cfg, params, _ = make_gate(2, seed=19)
        rng = np.random.default_rng(20)
        for _ in range(5):
            u = rng.normal(size=(3, 2))
            got = attentive_pool(Tensor(u), params.pool).data[0]
            assert np.abs(got - attentive_pool_oracle(u, params.pool)).max() < 1e-12

    def test_pool_concatenates_attentive_and_max(self):
        cfg, params, _ = make_gate(4, seed=21)
        rng = np.random.default_rng(22)
        u = rng.normal(size=(6, 4))
        out = pool(Tensor(u), params.pool).data
        assert out.shape == (1, 8)
        assert np.array_equal(out[0, 4:], u.max(axis=0))
        assert np.abs(out[0, :4] - attentive_pool(Tensor(u), params.pool).data[0]).max() == 0.0

    def test_single_token_pool_doubles_row(self):
        cfg, params, _ = make_gate(4, seed=23)
        u = np.random.default_rng(24).normal(size=(1, 4))
        out = pool(Tensor(u), params.pool).data
        assert np.array_equal(out, np.concatenate([u, u], axis=1))

    def test_dominant_row_wins_max(self):
        cfg, params, _ = make_gate(4, seed=25)
        u = np.array([[0.0, 1.0, 0.0, 2.0], [5.0, 6.0, 7.0, 8.0], [1.0, 0.0, 1.0, 0.0]])
        out = pool(Tensor(u), params.pool).data
        assert out[0, 4:].tolist() == [5.0, 6.0, 7.0, 8.0]

    def test_sentence_vector_dimension_at_300(self):
        cfg = EncoderConfig(d_e=300, n_heads=6)
        store = ParamStore()
        params = init_encoder_params(store, cfg, np.random.default_rng(0))
        u = np.random.default_rng(1).normal(size=(4, 300))
        assert pool(Tensor(u), params.pool).data.shape == (1, 600)

    def test_attentive_weight_columns_sum_to_one(self):
        cfg, params, _ = make_gate(4, seed=26)
        rng = np.random.default_rng(27)
        u = rng.normal(size=(7, 4))
        scores = feed_forward(Tensor(u), params.pool).data
        e = np.exp(scores - scores.max(axis=0, keepdims=True))
        w = e / e.sum(axis=0, keepdims=True)
        assert np.abs(w.sum(axis=0) - 1.0).max() < 1e-9
        manual = (w * u).sum(axis=0)
        assert np.abs(attentive_pool(Tensor(u), params.pool).data[0] - manual).max() < 1e-12

    def test_alternate_softmax_axis_differs(self):
        cfg, params, _ = make_gate(4, seed=28)
        u = np.random.default_rng(29).normal(size=(3, 4))
        tok = attentive_pool(Tensor(u), params.pool, "tokens").data
        feat = attentive_pool(Tensor(u), params.pool, "features").data
        assert not np.allclose(tok, feat)


class TestEncode:
    def chain(self, l):
        return list(range(l))

    def test_shape_preserving(self):
        for d_e, n_heads in ((4, 2), (8, 2), (300, 6)):
            cycle = ("word",) if n_heads == 2 else ("word", "dependency", "none")
            cfg = EncoderConfig(d_e=d_e, n_heads=n_heads, d_h=2 * d_e, distance_cycle=cycle)
            store = ParamStore()
            params = init_encoder_params(store, cfg, np.random.default_rng(0))
            for l in (1, 2, 3, 8, 32):
                x = Tensor(np.random.default_rng(l).normal(size=(l, d_e)))
                out = encode(x, cfg, params, dep_heads=self.chain(l))
                assert out.data.shape == (l, d_e)
                assert np.isfinite(out.data).all()

    def test_direction_only_configuration(self):
        cfg = EncoderConfig(d_e=4, n_heads=2, d_h=8, distance_cycle=("none",), alpha=0.0)
        store = ParamStore()
        params = init_encoder_params(store, cfg, np.random.default_rng(3))
        x = Tensor(np.random.default_rng(4).normal(size=(5, 4)))
        out = encode(x, cfg, params)
        assert out.data.shape == (5, 4)

    def test_single_token_sentence(self):
        cfg = EncoderConfig(d_e=4, n_heads=2, d_h=8, distance_cycle=("dependency",))
        store = ParamStore()
        params = init_encoder_params(store, cfg, np.random.default_rng(5))
        out = encode(Tensor(np.ones((1, 4))), cfg, params, dep_heads=[0])
        assert out.data.shape == (1, 4)
        assert np.isfinite(out.data).all()

    def test_deterministic_given_seeded_params(self):
        cfg = EncoderConfig(d_e=8, n_heads=2, d_h=16, distance_cycle=("word",))
        outs = []
        for _ in range(2):
            store = ParamStore()
            params = init_encoder_params(store, cfg, np.random.default_rng(7))
            x = Tensor(np.random.default_rng(8).normal(size=(4, 8)))
            outs.append(encode(x, cfg, params).data)
        assert np.array_equal(outs[0], outs[1])

    def test_stacked_layers_reuse_masks(self):
        cfg = EncoderConfig(d_e=4, n_heads=2, d_h=8, n_layers=3, distance_cycle=("word",))
        store = ParamStore()
        params = init_encoder_params(store, cfg, np.random.default_rng(9))
        assert len(params.layers) == 3
        x = Tensor(np.random.default_rng(10).normal(size=(4, 4)))
        assert encode(x, cfg, params).data.shape == (4, 4)

    def test_padded_rows_do_not_change_real_rows(self):
        cfg = EncoderConfig(d_e=4, n_heads=2, d_h=8, distance_cycle=("dependency",))
        store = ParamStore()
        params = init_encoder_params(store, cfg, np.random.default_rng(11))
        rng = np.random.default_rng(12)
        x = rng.normal(size=(3, 4))
        garbage = rng.normal(size=(2, 4)) * 100
        heads = [0, 1, 1]
        plain = encode(Tensor(x), cfg, params, dep_heads=heads).data
        padded = encode(
            Tensor(np.vstack([x, garbage])), cfg, params, dep_heads=heads, length=3
        ).data
        assert np.abs(padded[:3] - plain).max() < 1e-12

    def test_whole_encoder_gradient_check(self):
        cfg = EncoderConfig(d_e=8, n_heads=2, d_h=16, distance_cycle=("word",))
        store = ParamStore()
        params = init_encoder_params(store, cfg, np.random.default_rng(13))
        rng = np.random.default_rng(14)
        x = Tensor(rng.normal(size=(4, 8)))
        proj = Tensor(rng.normal(size=(4, 8)))

        def build():
            return mean_all(mul(encode(x, cfg, params), proj))

        with Tape() as tape:
            tape.watch(x)
            sources = [x] + [store[n] for n in store.names()]
            analytic = tape.gradient(build(), sources)
        for src, a in zip(sources, analytic):
            numeric = numeric_gradient(lambda: build().item(), src, step=1e-5)
            assert relative_error(a, numeric) < 1e-3


class TestConfigAndCounts:
    def test_param_count_matches_hand_sum(self):
        cfg = EncoderConfig(d_e=4, n_heads=2, d_h=8, distance_cycle=("word",))
        # attention 2*(3*4*2)+16 = 64; gate 4*16+4 = 68; ffn 76 + norm 8 = 84; pool 76
        assert param_count(cfg) == 64 + 68 + 84 + 76

    def test_param_count_scales_with_layers(self):
        one = param_count(EncoderConfig(d_e=4, n_heads=2, d_h=8, distance_cycle=("word",)))
        two = param_count(
            EncoderConfig(d_e=4, n_heads=2, d_h=8, n_layers=2, distance_cycle=("word",))
        )
        pool_part = 76
        assert two - pool_part == 2 * (one - pool_part)

    def test_d_h_defaults_to_four_times_d_e(self):
        cfg = EncoderConfig(d_e=8, n_heads=2, distance_cycle=("none",))
        assert cfg.d_h == 32

    def test_invalid_configs_rejected(self):
        with pytest.raises(ConfigurationError):
            EncoderConfig(d_e=5, n_heads=2, distance_cycle=("none",))
        with pytest.raises(ConfigurationError):
            EncoderConfig(d_e=4, n_heads=3, distance_cycle=("none",))
        with pytest.raises(ConfigurationError):
            EncoderConfig(d_e=4, n_heads=2, distance_cycle=("none", "word"))
        with pytest.raises(ConfigurationError):
            EncoderConfig(d_e=4, n_heads=2, distance_cycle=("none",), n_layers=0)
        with pytest.raises(ConfigurationError):
            EncoderConfig(d_e=4, n_heads=2, distance_cycle=("none",), pool_softmax_axis="x")

    def test_json_round_trip_uses_flat_field_names(self, tmp_path):
        cfg = EncoderConfig(d_e=12, n_heads=6, d_h=24, alpha=0.5,
                            distance_cycle=("word", "dep", "none"), swap_direction=True)
        path = tmp_path / "enc.json"
        path.write_text(json.dumps(cfg.to_dict()))
        loaded = EncoderConfig.from_json(path)
        assert loaded == cfg
        keys = set(json.loads(path.read_text()))
        assert {"d_e", "n_heads", "d_h", "n_layers", "alpha", "distance_cycle",
                "swap_direction", "eps"} <= keys
