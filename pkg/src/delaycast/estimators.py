"""Scikit-learn style wrappers around the forecasting pipeline.

HankelPatchTokenizer turns raw windows into flattened patch tokens
(fit/transform); DelayForecaster trains the encoder + shared head on
(window, horizon) pairs (fit/predict) and composes with sklearn pipelines
and model selection through get_params/set_params.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin, TransformerMixin
from sklearn.exceptions import NotFittedError

from .data import WindowSpec
from .embedding import DelayConfig, windows_to_tokens
from .encoder import EncoderConfig, ForecastModel
from .training import TrainConfig, run_training


def _check_windows(X, name="X") -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None]
    if X.ndim != 2:
        raise ValueError(f"{name} must be (n_windows, length), got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise ValueError(f"{name} contains NaN or Inf")
    return X


class HankelPatchTokenizer(BaseEstimator, TransformerMixin):
    """Delay-embed windows and emit flattened p x q patch tokens.

    transform maps (n_windows, T) to (n_windows, n_patches * p * q); tokens
    of one window are concatenated in patch order.  Stateless apart from
    input validation, so fit only records the expected window length.
    """

    def __init__(self, m=9, tau=1, p=3, q=3):
        self.m = m
        self.tau = tau
        self.p = p
        self.q = q

    def fit(self, X, y=None):
        X = _check_windows(X)
        self._delay = DelayConfig(m=self.m, tau=self.tau, p=self.p, q=self.q)
        self._delay.rows_for(X.shape[1])  # validates length
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        if not hasattr(self, "_delay"):
            raise NotFittedError("HankelPatchTokenizer is not fitted; call fit first")
        X = _check_windows(X)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(
                f"window length {X.shape[1]} differs from fitted length "
                f"{self.n_features_in_}"
            )
        toks = windows_to_tokens(X, self._delay)
        return toks.reshape(X.shape[0], -1)


class DelayForecaster(BaseEstimator, RegressorMixin):
    """Forecast h future samples from a lookback window.

    fit(X, y) expects X of shape (n_windows, lookback) and y of shape
    (n_windows, horizon); both are used as-is (normalize beforehand if the
    channels have heterogeneous scales).  predict returns (n, horizon).
    """

    def __init__(
        self,
        m=9,
        tau=1,
        p=3,
        q=3,
        d_model=64,
        n_layers=2,
        n_heads=4,
        d_ff=128,
        pool_kernel=4,
        pool_stride=4,
        dropout=0.0,
        head="affine",
        lr=1e-3,
        batch_size=64,
        epochs=100,
        anneal=True,
        seed=0,
    ):
        self.m = m
        self.tau = tau
        self.p = p
        self.q = q
        self.d_model = d_model
        self.n_layers = n_layers
        self.n_heads = n_heads
        self.d_ff = d_ff
        self.pool_kernel = pool_kernel
        self.pool_stride = pool_stride
        self.dropout = dropout
        self.head = head
        self.lr = lr
        self.batch_size = batch_size
        self.epochs = epochs
        self.anneal = anneal
        self.seed = seed

    def _build(self, lookback: int, horizon: int) -> ForecastModel:
        delay = DelayConfig(m=self.m, tau=self.tau, p=self.p, q=self.q)
        enc = EncoderConfig(
            d_model=self.d_model,
            n_layers=self.n_layers,
            n_heads=self.n_heads,
            d_ff=self.d_ff,
            pool_kernel=self.pool_kernel,
            pool_stride=self.pool_stride,
            horizon=horizon,
            dropout=self.dropout,
            seed=self.seed,
            head=self.head,
        )
        return ForecastModel(delay, enc, lookback)

    def fit(self, X, y):
        X = _check_windows(X)
        y = _check_windows(np.asarray(y), "y")
        if len(X) != len(y):
            raise ValueError(f"X has {len(X)} windows but y has {len(y)} targets")
        self.model_ = self._build(X.shape[1], y.shape[1])
        cfg = TrainConfig(
            lr=self.lr,
            batch_size=self.batch_size,
            epochs=self.epochs,
            anneal=self.anneal,
            seed=self.seed,
        )
        self.report_ = run_training(self.model_, (X, y), None, cfg)
        return self

    def finetune(self, X, y, lr=5e-5, epochs=50, data_fraction=1.0):
        """Head-only adaptation of an already-fitted forecaster."""
        self._require_fitted()
        X = _check_windows(X)
        y = _check_windows(np.asarray(y), "y")
        cfg = TrainConfig(
            lr=lr, batch_size=self.batch_size, epochs=epochs, anneal=self.anneal,
            seed=self.seed, freeze_encoder=True, data_fraction=data_fraction,
        )
        if data_fraction < 1.0:
            rng = np.random.default_rng(np.random.SeedSequence([self.seed, 0xF2]))
            keep = np.sort(
                rng.choice(len(X), size=max(1, int(round(data_fraction * len(X)))),
                           replace=False)
            )
            X, y = X[keep], y[keep]
        self.report_ = run_training(
            self.model_, (X, y), None, cfg, trainable=self.model_.head_param_names()
        )
        return self

    def predict(self, X):
        self._require_fitted()
        X = _check_windows(X)
        if X.shape[1] != self.model_.lookback:
            raise ValueError(
                f"window length {X.shape[1]} differs from fitted lookback "
                f"{self.model_.lookback}"
            )
        return self.model_.predict_batch(X)

    def window_spec(self) -> WindowSpec:
        self._require_fitted()
        return WindowSpec(lookback=self.model_.lookback, horizon=self.model_.cfg.horizon)

    def _require_fitted(self):
        if not hasattr(self, "model_"):
            raise NotFittedError("DelayForecaster is not fitted; call fit first")
