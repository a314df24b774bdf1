import math

import numpy as np
import pytest

from delaycast import (
    DelayConfig,
    EncoderConfig,
    ForecastModel,
    LatentSequence,
    build_hankel,
    embed_tokens,
    encoder_forward,
    forecast_head,
    high_attention_tokens,
    load_model,
    partition_patches,
    pool_tokens,
    positional_encoding,
    save_model,
)


def tiny_model(n_layers=1, n_heads=1, d_model=8, pool=1, horizon=3, seed=1, head="affine"):
    delay = DelayConfig(m=6, tau=1, p=2, q=2)
    cfg = EncoderConfig(
        d_model=d_model, n_layers=n_layers, n_heads=n_heads, d_ff=8,
        pool_kernel=pool, pool_stride=pool, horizon=horizon, seed=seed, head=head,
    )
    return ForecastModel(delay, cfg, lookback=9)  # 6 tokens pre-pooling


def grid_for(model, seed=0):
    x = np.random.default_rng(seed).normal(size=model.lookback)
    return partition_patches(build_hankel(x, model.delay), model.delay)


class TestEmbedTokens:
    def test_zero_projection_gives_bias(self):
        model = tiny_model()
        model.params["W_e"][...] = 0.0
        model.params["b_e"][...] = np.arange(8.0)
        toks = embed_tokens(grid_for(model), model)
        assert toks.shape == (6, 8)
        np.testing.assert_array_equal(toks, np.tile(np.arange(8.0), (6, 1)))

    def test_identity_projection(self):
        # d_model = p*q = 4 so W_e can be the identity
        delay = DelayConfig(m=6, tau=1, p=2, q=2)
        cfg = EncoderConfig(d_model=4, n_layers=0, n_heads=1, d_ff=4,
                            pool_kernel=1, pool_stride=1, horizon=2, seed=0)
        model = ForecastModel(delay, cfg, lookback=9)
        model.params["W_e"][...] = np.eye(4)
        model.params["b_e"][...] = 0.0
        grid = grid_for(model)
        np.testing.assert_allclose(embed_tokens(grid, model), grid.flattened())

    def test_matches_triple_loop_oracle(self):
        model = tiny_model()
        grid = grid_for(model, seed=5)
        toks = embed_tokens(grid, model)
        W, b = model.params["W_e"], model.params["b_e"]
        flats = grid.flattened()
        for j in range(grid.patch_count):
            for d in range(8):
                acc = b[d]
                for k in range(flats.shape[1]):
                    acc += flats[j, k] * W[k, d]
                assert abs(toks[j, d] - acc) < 1e-12

    def test_dimension_mismatch(self):
        model = tiny_model()
        delay = DelayConfig(m=6, tau=1, p=3, q=2)
        x = np.random.default_rng(0).normal(size=12)
        bad = partition_patches(build_hankel(x, delay), delay)
        with pytest.raises(ValueError, match="does not match"):
            embed_tokens(bad, model)


class TestPositionalEncoding:
    def test_pos_zero_row(self):
        pe = positional_encoding(4, 8)
        np.testing.assert_array_equal(pe[0, 0::2], 0.0)
        np.testing.assert_array_equal(pe[0, 1::2], 1.0)

    def test_direct_evaluation(self):
        pe = positional_encoding(3, 8)
        assert abs(pe[1, 0] - math.sin(1.0)) < 1e-15
        assert abs(pe[1, 1] - math.cos(1.0)) < 1e-15
        assert abs(pe[2, 2] - math.sin(2.0 / 10000 ** (2 / 8))) < 1e-15

    def test_range(self):
        pe = positional_encoding(50, 16)
        assert pe.min() >= -1.0 and pe.max() <= 1.0


class TestPoolTokens:
    def test_identity(self):
        x = np.random.default_rng(0).normal(size=(5, 3))
        np.testing.assert_array_equal(pool_tokens(x, 1, 1), x)

    def test_constant_tokens(self):
        tok = np.full((4, 6), 2.5)
        out = pool_tokens(tok, 2, 2)
        assert out.shape == (2, 6)
        np.testing.assert_allclose(out, 2.5)

    def test_windowed_mean_oracle(self):
        x = np.random.default_rng(1).normal(size=(7, 4))
        out = pool_tokens(x, 3, 2)
        assert out.shape == (3, 4)
        for w in range(3):
            np.testing.assert_allclose(out[w], x[2 * w : 2 * w + 3].mean(axis=0))

    def test_kernel_longer_than_input(self):
        x = np.random.default_rng(2).normal(size=(3, 4))
        out = pool_tokens(x, 5, 5)
        assert out.shape == (1, 4)
        np.testing.assert_allclose(out[0], x.mean(axis=0))


class TestEncoderForward:
    def test_single_token_identity_projections(self):
        model = tiny_model()
        pre = "layer0."
        for nm in ("W_q", "W_k", "W_v", "W_o"):
            model.params[pre + nm][...] = np.eye(8)
        for nm in ("b_q", "b_v", "b_o"):
            model.params[pre + nm][...] = 0.0
        model.params[pre + "W_ff1"][...] = 0.0
        model.params[pre + "W_ff2"][...] = 0.0
        model.params[pre + "b_ff1"][...] = 0.0
        model.params[pre + "b_ff2"][...] = 0.0
        token = np.random.default_rng(3).normal(size=(1, 8))
        out = encoder_forward(token, model, retain_attention=True)
        A = out.attention_maps[0]
        assert A.shape == (1, 1, 1)
        assert A[0, 0, 0] == 1.0  # softmax over a single key
        two = 2.0 * token[0]
        ln = (two - two.mean()) / math.sqrt(two.var() + 1e-5)
        np.testing.assert_allclose(out.tokens[0], ln, atol=1e-4)

    def test_zero_layers_identity(self):
        model = tiny_model(n_layers=0)
        x = np.random.default_rng(4).normal(size=(6, 8))
        np.testing.assert_array_equal(encoder_forward(x, model).tokens, x)

    def test_rows_stochastic_and_replay(self):
        model = tiny_model(n_layers=2, n_heads=2)
        x = np.random.default_rng(5).normal(size=(5, 8))
        out = encoder_forward(x, model, retain_attention=True)
        for A in out.attention_maps:
            assert np.all(A >= 0) and np.all(A <= 1)
            np.testing.assert_allclose(A.sum(axis=-1), 1.0, atol=1e-6)
        # independent step-by-step replay with plain numpy
        replay = x.copy()
        for l in range(2):
            replay = _replay_layer(model, l, replay)
        np.testing.assert_allclose(out.tokens, replay, atol=1e-12)

    def test_permutation_equivariance(self):
        model = tiny_model(n_layers=2, n_heads=2)
        x = np.random.default_rng(6).normal(size=(6, 8))
        perm = np.random.default_rng(7).permutation(6)
        out = encoder_forward(x, model).tokens
        out_p = encoder_forward(x[perm], model).tokens
        np.testing.assert_allclose(out_p, out[perm], atol=1e-12)


def _replay_layer(model, l, x):
    # deliberately independent re-derivation of one post-norm layer
    p = model.params
    pre = f"layer{l}."
    H = model.cfg.n_heads
    D = model.cfg.d_model
    Dh = D // H
    Q = x @ p[pre + "W_q"] + p[pre + "b_q"]
    K = x @ p[pre + "W_k"]
    V = x @ p[pre + "W_v"] + p[pre + "b_v"]
    heads = []
    for h in range(H):
        sl = slice(h * Dh, (h + 1) * Dh)
        S = Q[:, sl] @ K[:, sl].T / math.sqrt(Dh)
        S = S - S.max(axis=1, keepdims=True)
        A = np.exp(S) / np.exp(S).sum(axis=1, keepdims=True)
        heads.append(A @ V[:, sl])
    M = np.concatenate(heads, axis=1) @ p[pre + "W_o"] + p[pre + "b_o"]
    r1 = x + M

    def ln(v, gname, bname):
        mu = v.mean(axis=-1, keepdims=True)
        var = v.var(axis=-1, keepdims=True)
        return (v - mu) / np.sqrt(var + 1e-5) * p[pre + gname] + p[pre + bname]

    a1 = ln(r1, "ln1_g", "ln1_b")
    u = a1 @ p[pre + "W_ff1"] + p[pre + "b_ff1"]
    from scipy.special import erf

    gelu = 0.5 * u * (1 + erf(u / math.sqrt(2)))
    f = gelu @ p[pre + "W_ff2"] + p[pre + "b_ff2"]
    return ln(a1 + f, "ln2_g", "ln2_b")


class TestForecastHead:
    def test_zero_weights_give_bias(self):
        model = tiny_model()
        model.params["W_head"][...] = 0.0
        model.params["b_head"][...] = [1.0, -2.0, 3.0]
        latent = LatentSequence(tokens=np.random.default_rng(0).normal(size=(6, 8)))
        np.testing.assert_array_equal(forecast_head(latent, model), [1.0, -2.0, 3.0])

    def test_one_hot_selector(self):
        model = tiny_model(horizon=1)
        model.params["W_head"][...] = 0.0
        model.params["W_head"][13, 0] = 1.0
        model.params["b_head"][...] = 0.5
        latent = LatentSequence(tokens=np.random.default_rng(1).normal(size=(6, 8)))
        expected = latent.tokens.reshape(-1)[13] + 0.5
        assert forecast_head(latent, model)[0] == pytest.approx(expected, abs=1e-15)

    def test_matvec_oracle(self):
        model = tiny_model()
        latent = LatentSequence(tokens=np.random.default_rng(2).normal(size=(6, 8)))
        got = forecast_head(latent, model)
        flat = latent.tokens.reshape(-1)
        W, b = model.params["W_head"], model.params["b_head"]
        for k in range(3):
            acc = b[k]
            for i in range(flat.shape[0]):
                acc += flat[i] * W[i, k]
            assert abs(got[k] - acc) < 1e-12

    def test_dimension_mismatch(self):
        model = tiny_model()
        latent = LatentSequence(tokens=np.zeros((4, 8)))
        with pytest.raises(ValueError, match="head input"):
            forecast_head(latent, model)


class TestChannelSharedHead:
    def test_identical_windows_identical_forecasts(self):
        model = tiny_model(n_layers=2, n_heads=2)
        w = np.random.default_rng(8).normal(size=9)
        a = model.predict_window(w)
        b = model.predict_window(w.copy())  # "another channel" with equal values
        np.testing.assert_array_equal(a, b)


class TestHighAttention:
    def test_uniform_attention_flags_nothing(self):
        maps = [np.full((2, 5, 5), 0.2)]
        flags = high_attention_tokens(LatentSequence(tokens=np.zeros((5, 8)), attention_maps=maps))
        assert all(len(f) == 0 for _, _, f in flags.per_head)
        assert flags.histogram.sum() == 0

    def test_dominant_column_flagged(self):
        A = np.full((5, 5), 0.025)
        A[:, 2] = 0.9
        flags = high_attention_tokens(
            LatentSequence(tokens=np.zeros((5, 8)), attention_maps=[A[None]])
        )
        layer, head, idx = flags.per_head[0]
        assert (layer, head) == (0, 0)
        np.testing.assert_array_equal(idx, [2])
        assert flags.histogram[2] == 1

    def test_matches_direct_recomputation(self):
        rng = np.random.default_rng(9)
        raw = rng.random((3, 4, 7, 7))
        maps = [m / m.sum(axis=-1, keepdims=True) for m in raw]
        flags = high_attention_tokens(
            LatentSequence(tokens=np.zeros((7, 8)), attention_maps=maps)
        )
        hist = np.zeros(7, dtype=int)
        k = 0
        for l in range(3):
            for h in range(4):
                cm = maps[l][h].mean(axis=0)
                expect = np.flatnonzero(cm > cm.mean() + 2 * cm.std())
                np.testing.assert_array_equal(flags.per_head[k][2], expect)
                hist[expect] += 1
                k += 1
        np.testing.assert_array_equal(flags.histogram, hist)

    def test_requires_retained_maps(self):
        with pytest.raises(ValueError, match="not retained"):
            high_attention_tokens(LatentSequence(tokens=np.zeros((3, 8))))


class TestDeterminismAndCheckpoints:
    def test_same_seed_bit_identical_forward_backward(self):
        a = tiny_model(seed=42)
        b = tiny_model(seed=42)
        for k in a.params:
            np.testing.assert_array_equal(a.params[k], b.params[k])
        X = np.random.default_rng(0).normal(size=(4, 9))
        pa = a.forward_batch(X, retain_cache=True)
        pb = b.forward_batch(X, retain_cache=True)
        np.testing.assert_array_equal(pa, pb)
        d = np.random.default_rng(1).normal(size=pa.shape)
        a.zero_grads(); a.backward(d)
        b.zero_grads(); b.backward(d)
        for k in a.grads:
            np.testing.assert_array_equal(a.grads[k], b.grads[k])

    def test_checkpoint_round_trip_bit_exact(self, tmp_path):
        model = tiny_model(n_layers=2, n_heads=2, seed=7)
        path = tmp_path / "model.ckpt"
        save_model(model, path)
        back = load_model(path)
        assert back.param_names() == model.param_names()
        for k in model.params:
            np.testing.assert_array_equal(back.params[k], model.params[k])
        assert back.cfg == model.cfg and back.delay == model.delay
        # two saves of the same model produce identical bytes
        path2 = tmp_path / "model2.ckpt"
        save_model(model, path2)
        assert path.read_bytes() == path2.read_bytes()

    def test_backward_requires_forward(self):
        model = tiny_model()
        with pytest.raises(RuntimeError, match="retained forward"):
            model.backward(np.zeros((1, 3)))

    def test_window_length_validation(self):
        model = tiny_model()
        with pytest.raises(ValueError, match="lookback"):
            model.predict_batch(np.zeros((2, 11)))


def test_config_validation():
    with pytest.raises(ValueError, match="divisible"):
        EncoderConfig(d_model=10, n_heads=4)
    with pytest.raises(ValueError, match="dropout"):
        EncoderConfig(dropout=1.0)
    with pytest.raises(ValueError, match="head"):
        EncoderConfig(head="linear")
