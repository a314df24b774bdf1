"""Reverse-mode gradient checks: trivial cases, a closed-form linear oracle,
and central finite differences over every parameter of a tiny model."""

import numpy as np

from delaycast import DelayConfig, EncoderConfig, ForecastModel, mse_loss
from delaycast.embedding import windows_to_tokens

STEP = 1e-5
REL_TOL = 1e-4


def build(n_layers=1, n_heads=1, d_model=8, d_ff=8, horizon=3, seed=1, head="affine",
          pool=1):
    delay = DelayConfig(m=6, tau=1, p=2, q=2)
    cfg = EncoderConfig(
        d_model=d_model, n_layers=n_layers, n_heads=n_heads, d_ff=d_ff,
        pool_kernel=pool, pool_stride=pool, horizon=horizon, seed=seed, head=head,
    )
    return ForecastModel(delay, cfg, lookback=9)


def rel_errors(model, X, Y, step=STEP):
    pred = model.forward_batch(X, retain_cache=True)
    _, dpred = mse_loss(pred, Y)
    model.zero_grads()
    model.backward(dpred)
    worst = {}
    for name, w in model.params.items():
        errs = np.zeros(w.shape)
        it = np.nditer(w, flags=["multi_index"])
        for _ in it:
            ix = it.multi_index
            orig = w[ix]
            w[ix] = orig + step
            lp = mse_loss(model.forward_batch(X), Y)[0]
            w[ix] = orig - step
            lm = mse_loss(model.forward_batch(X), Y)[0]
            w[ix] = orig
            cd = (lp - lm) / (2 * step)
            an = model.grads[name][ix]
            errs[ix] = abs(an - cd) / max(abs(an), abs(cd), 1e-8)
        worst[name] = float(errs.max())
    return worst


def test_zero_loss_gradient_gives_zero_grads():
    model = build()
    X = np.random.default_rng(0).normal(size=(2, 9))
    model.forward_batch(X, retain_cache=True)
    model.zero_grads()
    model.backward(np.zeros((2, 3)))
    for name, grad in model.grads.items():
        assert np.all(grad == 0.0), name


def test_linear_model_matches_least_squares_gradient():
    # zero encoder layers: prediction is affine in the head weights, so the
    # MSE gradient has the closed linear-regression form 2 * Phi^T r / N
    model = build(n_layers=0)
    rng = np.random.default_rng(1)
    X = rng.normal(size=(5, 9))
    Y = rng.normal(size=(5, 3))
    pred = model.forward_batch(X, retain_cache=True)
    _, dpred = mse_loss(pred, Y)
    model.zero_grads()
    model.backward(dpred)

    from delaycast.encoder import positional_encoding

    flats = windows_to_tokens(X, model.delay)
    tokens = flats @ model.params["W_e"] + model.params["b_e"]
    phi = (tokens + positional_encoding(model.n_pooled, 8)[None]).reshape(5, -1)
    resid = phi @ model.params["W_head"] + model.params["b_head"] - Y
    n = resid.size
    np.testing.assert_allclose(model.grads["W_head"], 2.0 * phi.T @ resid / n, atol=1e-12)
    np.testing.assert_allclose(model.grads["b_head"], 2.0 * resid.sum(axis=0) / n, atol=1e-12)


def test_finite_differences_single_head():
    model = build(n_layers=1, n_heads=1)
    rng = np.random.default_rng(2)
    X = rng.normal(size=(2, 9))
    Y = rng.normal(size=(2, 3))
    worst = rel_errors(model, X, Y)
    for name, err in worst.items():
        assert err < REL_TOL, f"{name}: rel err {err:.3g}"


def test_finite_differences_multihead_pooled_mlp_head():
    model = build(n_layers=2, n_heads=2, d_ff=12, head="mlp_gelu", pool=2, horizon=4)
    rng = np.random.default_rng(3)
    X = rng.normal(size=(3, 9))
    Y = rng.normal(size=(3, 4))
    worst = rel_errors(model, X, Y)
    for name, err in worst.items():
        assert err < REL_TOL, f"{name}: rel err {err:.3g}"


def test_gradients_accumulate_across_backwards():
    model = build()
    rng = np.random.default_rng(4)
    X = rng.normal(size=(2, 9))
    Y = rng.normal(size=(2, 3))
    pred = model.forward_batch(X, retain_cache=True)
    _, dpred = mse_loss(pred, Y)
    model.zero_grads()
    model.backward(dpred)
    once = {k: v.copy() for k, v in model.grads.items()}
    model.forward_batch(X, retain_cache=True)
    model.backward(dpred)  # no zero_grads: accumulates
    for k in once:
        np.testing.assert_allclose(model.grads[k], 2.0 * once[k], rtol=1e-12)


def test_dropout_masks_are_consistent_between_forward_and_backward():
    delay = DelayConfig(m=6, tau=1, p=2, q=2)
    cfg = EncoderConfig(d_model=8, n_layers=1, n_heads=1, d_ff=8, pool_kernel=1,
                        pool_stride=1, horizon=3, seed=1, dropout=0.4)
    model = ForecastModel(delay, cfg, lookback=9)
    rng = np.random.default_rng(5)
    X = rng.normal(size=(2, 9))
    Y = rng.normal(size=(2, 3))
    pred = model.forward_batch(X, train_mode=True, retain_cache=True)
    _, dpred = mse_loss(pred, Y)
    model.zero_grads()
    grads = model.backward(dpred)
    for name, gr in grads.items():
        assert np.all(np.isfinite(gr)), name
    # eval mode ignores dropout entirely: deterministic and repeatable
    a = model.predict_batch(X)
    b = model.predict_batch(X)
    np.testing.assert_array_equal(a, b)
