"""MSE training with Adam and cosine annealing; full training and head-only
fine-tuning over per-channel sliding windows.

Each series in a corpus is z-scored with its own training-split statistics;
windows are assembled channel-independently and shuffled with a seeded RNG,
so identical (seed, config, data) runs produce bit-identical parameters and
reports.  Fine-tuning freezes every encoder parameter and updates only the
channel-shared head.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, asdict

import numpy as np

from .data import DataError, Series, WindowSpec, make_windows, zscore_apply, zscore_fit
from .encoder import ForecastModel

ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8

# Full-scale presets; desk defaults live on TrainConfig below.  Two
# pretraining rates are in circulation for this architecture; neither is
# canonical here.
PRETRAIN_LR_METHODS = 1e-3
PRETRAIN_LR_ABLATION = 1e-4
FINETUNE_LR = 5e-5
PRETRAIN_BATCH_SIZE = 16384


@dataclass(frozen=True)
class TrainConfig:
    """Optimization settings.

    data_fraction uniformly subsamples training windows (0 keeps none and
    skips training entirely: the zero-shot endpoint of a data-efficiency
    sweep).  stride is the window-assembly step.
    """

    lr: float = 1e-3
    batch_size: int = 64
    epochs: int = 100
    anneal: bool = True
    freeze_encoder: bool = False
    seed: int = 0
    data_fraction: float = 1.0
    stride: int = 1
    lr_min: float = 0.0
    patience: int = 20

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError(f"lr must be positive, got {self.lr}")
        if not 0.0 <= self.data_fraction <= 1.0:
            raise ValueError(f"data_fraction must be in [0, 1], got {self.data_fraction}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 0:
            raise ValueError(f"epochs must be >= 0, got {self.epochs}")


@dataclass
class TrainReport:
    """Per-epoch losses plus final test metrics and run metadata.

    Epoch 0 is the untrained model; epoch k >= 1 follows the k-th pass.
    wall_clock is informational only and excluded from the CSV export so
    identically seeded runs write identical report files.
    """

    epochs: list[int] = field(default_factory=list)
    train_mse: list[float] = field(default_factory=list)
    train_mae: list[float] = field(default_factory=list)
    val_mse: list[float] = field(default_factory=list)
    val_mae: list[float] = field(default_factory=list)
    test_mse: float = math.nan
    test_mae: float = math.nan
    wall_clock: float = 0.0
    param_count: int = 0
    config: dict = field(default_factory=dict)

    def to_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("record,epoch,mse,mae\n")
            for i, ep in enumerate(self.epochs):
                fh.write(
                    f"train,{ep},{self.train_mse[i]:.17g},{self.train_mae[i]:.17g}\n"
                )
                if not math.isnan(self.val_mse[i]):
                    fh.write(
                        f"val,{ep},{self.val_mse[i]:.17g},{self.val_mae[i]:.17g}\n"
                    )
            if not math.isnan(self.test_mse):
                fh.write(f"test,final,{self.test_mse:.17g},{self.test_mae:.17g}\n")

    def summary(self) -> str:
        lines = [
            f"parameters: {self.param_count}",
            f"epochs run: {max(self.epochs) if self.epochs else 0}",
            f"wall clock: {self.wall_clock:.2f}s",
        ]
        if self.epochs:
            lines.append(f"final train MSE: {self.train_mse[-1]:.6g}")
            if not math.isnan(self.val_mse[-1]):
                lines.append(f"final val MSE: {self.val_mse[-1]:.6g}")
        if not math.isnan(self.test_mse):
            lines.append(f"test MSE: {self.test_mse:.6g}  test MAE: {self.test_mae:.6g}")
        return "\n".join(lines)


def mse_loss(pred: np.ndarray, target: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean squared error and its gradient 2*(pred - target)/N w.r.t. pred."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {target.shape}")
    diff = pred - target
    return float(np.mean(diff**2)), 2.0 * diff / diff.size


def mae(pred: np.ndarray, target: np.ndarray) -> float:
    return float(np.mean(np.abs(np.asarray(pred) - np.asarray(target))))


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0

    @classmethod
    def init(cls, params: dict[str, np.ndarray]) -> "AdamState":
        return cls(
            m={k: np.zeros_like(p) for k, p in params.items()},
            v={k: np.zeros_like(p) for k, p in params.items()},
        )


def adam_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: AdamState,
    lr: float,
    betas: tuple[float, float] = ADAM_BETAS,
    eps: float = ADAM_EPS,
    names=None,
) -> None:
    """One bias-corrected Adam update, in place, over the named parameters."""
    b1, b2 = betas
    state.t += 1
    bc1 = 1.0 - b1**state.t
    bc2 = 1.0 - b2**state.t
    for name in names if names is not None else params:
        g = grads[name]
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        params[name] -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)


def cosine_lr(step: int, total_steps: int, lr_max: float, lr_min: float = 0.0) -> float:
    """lr_min + 0.5*(lr_max - lr_min)*(1 + cos(pi * step / total_steps))."""
    if not 0 <= step <= total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps}]")
    if total_steps == 0:
        return lr_max
    return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + math.cos(math.pi * step / total_steps))


# ---------------------------------------------------------------------------
# engine


def _batched_metrics(model: ForecastModel, X, Y, batch_size: int) -> tuple[float, float]:
    se = ae = 0.0
    n = 0
    for i in range(0, len(X), batch_size):
        pred = model.predict_batch(X[i : i + batch_size])
        t = Y[i : i + batch_size]
        se += float(np.sum((pred - t) ** 2))
        ae += float(np.sum(np.abs(pred - t)))
        n += t.size
    return se / n, ae / n


def _subsample(X, Y, fraction: float, rng) -> tuple[np.ndarray, np.ndarray]:
    if fraction >= 1.0:
        return X, Y
    n_keep = int(round(fraction * len(X)))
    if n_keep == 0:
        return X[:0], Y[:0]
    idx = np.sort(rng.choice(len(X), size=n_keep, replace=False))
    return X[idx], Y[idx]


def run_training(
    model: ForecastModel,
    train_xy: tuple[np.ndarray, np.ndarray],
    val_xy: tuple[np.ndarray, np.ndarray] | None,
    cfg: TrainConfig,
    trainable: list[str] | None = None,
) -> TrainReport:
    """Mini-batch Adam over explicit (inputs, targets) window arrays.

    Restores the best-validation parameters at the end (patience-limited)
    when a validation set is given.
    """
    X, Y = train_xy
    if len(X) == 0:
        raise DataError("no training windows")
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0x7A]))
    state = AdamState.init(model.params)
    names = trainable if trainable is not None else model.param_names()
    head_only = set(names) <= set(model.head_param_names())

    report = TrainReport(param_count=model.param_count(), config=asdict(cfg))
    t0 = time.perf_counter()

    def record(epoch, train_pair, val_pair):
        report.epochs.append(epoch)
        report.train_mse.append(train_pair[0])
        report.train_mae.append(train_pair[1])
        report.val_mse.append(val_pair[0])
        report.val_mae.append(val_pair[1])

    init_val = (
        _batched_metrics(model, *val_xy, cfg.batch_size) if val_xy else (math.nan, math.nan)
    )
    record(0, _batched_metrics(model, X, Y, cfg.batch_size), init_val)

    best_val = report.val_mse[0]
    best_params = None
    since_best = 0
    train_mode = model.cfg.dropout > 0.0

    for epoch in range(1, cfg.epochs + 1):
        lr = cosine_lr(epoch - 1, max(cfg.epochs, 1), cfg.lr, cfg.lr_min) if cfg.anneal else cfg.lr
        order = rng.permutation(len(X))
        ep_se = ep_ae = 0.0
        seen = 0
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            pred = model.forward_batch(X[idx], train_mode=train_mode, retain_cache=True)
            loss, dpred = mse_loss(pred, Y[idx])
            if not math.isfinite(loss):
                raise FloatingPointError(
                    f"training diverged: non-finite loss at epoch {epoch}, "
                    f"batch starting at window {start}"
                )
            ep_se += float(np.sum((pred - Y[idx]) ** 2))
            ep_ae += float(np.sum(np.abs(pred - Y[idx])))
            seen += pred.size
            model.zero_grads()
            model.backward(dpred, head_only=head_only)
            adam_step(model.params, model.grads, state, lr, names=names)
            model.check_finite()
        val_pair = (
            _batched_metrics(model, *val_xy, cfg.batch_size) if val_xy else (math.nan, math.nan)
        )
        record(epoch, (ep_se / seen, ep_ae / seen), val_pair)
        if val_xy:
            if val_pair[0] < best_val:
                best_val = val_pair[0]
                best_params = {k: v.copy() for k, v in model.params.items()}
                since_best = 0
            else:
                since_best += 1
                if since_best >= cfg.patience:
                    break

    if best_params is not None:
        for k in model.params:
            model.params[k][...] = best_params[k]
    report.wall_clock = time.perf_counter() - t0
    return report


def _corpus_windows(corpus, window: WindowSpec, split: str):
    xs, ys = [], []
    for series in corpus:
        stats = zscore_fit(series)
        norm = zscore_apply(series, stats)
        try:
            X, Y = make_windows(norm, window, split=split)
        except DataError:
            continue
        xs.append(X)
        ys.append(Y)
    if not xs:
        return None
    return np.concatenate(xs), np.concatenate(ys)


def train(
    model: ForecastModel,
    corpus: list[Series],
    cfg: TrainConfig,
    window: WindowSpec | None = None,
) -> TrainReport:
    """Full-parameter training over the train splits of a multi-series corpus.

    Windows are built per channel on z-scored values (each series' own
    training statistics); validation selects the checkpoint, and the test
    split of the corpus provides the final metrics.
    """
    if isinstance(corpus, Series):
        corpus = [corpus]
    if window is None:
        window = WindowSpec(model.lookback, model.cfg.horizon, cfg.stride)
    if window.lookback != model.lookback or window.horizon != model.cfg.horizon:
        raise ValueError(
            f"window ({window.lookback},{window.horizon}) does not match model "
            f"({model.lookback},{model.cfg.horizon})"
        )
    train_xy = _corpus_windows(corpus, window, "train")
    if train_xy is None:
        raise DataError("corpus has no usable training windows")
    frac_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0xF2]))
    train_xy = _subsample(*train_xy, cfg.data_fraction, frac_rng)
    if len(train_xy[0]) == 0:
        raise DataError("data_fraction left no training windows")
    val_xy = _corpus_windows(corpus, window, "val")
    trainable = model.head_param_names() if cfg.freeze_encoder else None
    report = run_training(model, train_xy, val_xy, cfg, trainable=trainable)
    test_xy = _corpus_windows(corpus, window, "test")
    if test_xy is not None:
        report.test_mse, report.test_mae = _batched_metrics(
            model, *test_xy, cfg.batch_size
        )
    return report


def finetune(
    model: ForecastModel,
    target: Series,
    cfg: TrainConfig,
    window: WindowSpec | None = None,
) -> TrainReport:
    """Head-only adaptation to a target series; encoder parameters frozen.

    data_fraction subsamples the target's training windows uniformly;
    fraction 0 skips all updates (pure zero-shot evaluation).
    """
    if window is None:
        window = WindowSpec(model.lookback, model.cfg.horizon, cfg.stride)
    stats = zscore_fit(target)
    norm = zscore_apply(target, stats)
    t0 = time.perf_counter()
    if cfg.data_fraction > 0.0:
        X, Y = make_windows(norm, window, split="train")
        frac_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0xF2]))
        X, Y = _subsample(X, Y, cfg.data_fraction, frac_rng)
    else:
        X = Y = None
    if X is not None and len(X) > 0:
        try:
            val_xy = make_windows(norm, window, split="val")
        except DataError:
            val_xy = None
        report = run_training(model, (X, Y), val_xy, cfg, trainable=model.head_param_names())
    else:
        report = TrainReport(param_count=model.param_count(), config=asdict(cfg))
    try:
        Xt, Yt = make_windows(norm, window, split="test")
        report.test_mse, report.test_mae = _batched_metrics(model, Xt, Yt, cfg.batch_size)
    except DataError:
        pass
    report.wall_clock = time.perf_counter() - t0
    return report


@dataclass
class EvalResult:
    channel_mse: dict[str, float]
    channel_mae: dict[str, float]
    mse: float
    mae: float

    def to_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("channel,mse,mae\n")
            for name in self.channel_mse:
                fh.write(
                    f"{name},{self.channel_mse[name]:.17g},{self.channel_mae[name]:.17g}\n"
                )
            fh.write(f"average,{self.mse:.17g},{self.mae:.17g}\n")


def evaluate(model, series: Series, spec: WindowSpec, batch_size: int = 256) -> EvalResult:
    """Per-channel MSE/MAE over the test split, in z-scored space.

    model is duck-typed: anything with predict_batch((n, lookback)) ->
    (n, horizon) works.
    """
    stats = zscore_fit(series)
    norm = zscore_apply(series, stats)
    channel_mse: dict[str, float] = {}
    channel_mae: dict[str, float] = {}
    for name in series.names:
        X, Y = make_windows(norm, spec, split="test", channels=[name])
        se = ae = 0.0
        n = 0
        for i in range(0, len(X), batch_size):
            pred = model.predict_batch(X[i : i + batch_size])
            t = Y[i : i + batch_size]
            se += float(np.sum((pred - t) ** 2))
            ae += float(np.sum(np.abs(pred - t)))
            n += t.size
        channel_mse[name] = se / n
        channel_mae[name] = ae / n
    values = list(channel_mse.values())
    return EvalResult(
        channel_mse=channel_mse,
        channel_mae=channel_mae,
        mse=float(np.mean(values)),
        mae=float(np.mean(list(channel_mae.values()))),
    )
