"""Mutual-information-guided late aggregation of per-channel forecasts.

A target channel's forecast is blended with the forecasts of its top-k
most dependent neighbor channels (histogram NMI on the z-scored training
split), after aligning each neighbor to the target's scale with a z-score
operator built from training statistics only:

    aligned_j = (yhat_j - mu_j) / sigma_j * sigma_target + mu_target
    blended  = w_self * yhat_target + w_neighbor * sum_j aligned_j

No calibrator is learned; the blend runs at test time and never touches
non-target channels.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from ._validation import as_1d_floats
from .data import Series, zscore_fit


@dataclass(frozen=True)
class MIConfig:
    """Histogram and blend parameters; w_self + top_k * w_neighbor must be 1."""

    n_bins: int = 16
    top_k: int = 5
    w_self: float = 0.9
    w_neighbor: float = 0.02

    def __post_init__(self):
        if self.n_bins < 2:
            raise ValueError(f"n_bins must be >= 2, got {self.n_bins}")
        if self.top_k < 1:
            raise ValueError(f"top_k must be >= 1, got {self.top_k}")
        total = self.w_self + self.top_k * self.w_neighbor
        if abs(total - 1.0) > 1e-12:
            raise ValueError(
                f"blend weights must sum to 1: w_self + top_k*w_neighbor = {total}"
            )


@dataclass
class AlignmentStats:
    """Raw training-split mean/std per channel, used by the alignment operator.

    std entries may be zero for flat channels; blend() excludes those
    neighbors rather than dividing by zero.
    """

    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def from_series(cls, series: Series) -> "AlignmentStats":
        train = series.values[: series.train_end]
        return cls(mean=train.mean(axis=0), std=train.std(axis=0))

    def mean_std(self, idx: int) -> tuple[float, float]:
        if not 0 <= idx < len(self.mean):
            raise ValueError(f"no alignment statistics for channel index {idx}")
        return float(self.mean[idx]), float(self.std[idx])


def _entropy_from_probs(probs: np.ndarray) -> float:
    """Shannon entropy in nats over sorted nonzero probabilities.

    Sorting before summation makes the result independent of histogram
    orientation, which keeps nmi exactly symmetric and nmi(x, x) exactly 1.
    """
    p = probs[probs > 0]
    if p.size <= 1:
        return 0.0
    p = np.sort(p)
    return float(-(p * np.log(p)).sum())


def histogram_entropy(x, n_bins: int) -> float:
    """Entropy of an equal-width histogram over [min, max]; constant -> 0."""
    x = as_1d_floats(x, "x")
    if x.size < 2:
        raise ValueError("need at least 2 samples")
    if not np.all(np.isfinite(x)):
        raise ValueError("samples must be finite")
    if x.min() == x.max():
        return 0.0
    counts, _ = np.histogram(x, bins=n_bins)
    return _entropy_from_probs(counts / counts.sum())


def nmi(x, y, n_bins: int = 16) -> float:
    """Normalized mutual information I(X;Y)/sqrt(H(X)H(Y)) in [0, 1].

    Marginal entropies come from the joint histogram's row/column sums, so
    identical inputs give exactly 1.  A constant input has zero entropy and
    the value is defined as 0 (flagged with a warning).
    """
    x = as_1d_floats(x, "x")
    y = as_1d_floats(y, "y")
    if x.shape != y.shape:
        raise ValueError(f"length mismatch: {x.shape} vs {y.shape}")
    if x.size < 2:
        raise ValueError("need at least 2 samples")
    if x.min() == x.max() or y.min() == y.max():
        warnings.warn("constant channel has zero entropy; NMI defined as 0", stacklevel=2)
        return 0.0
    joint, _, _ = np.histogram2d(x, y, bins=n_bins)
    total = joint.sum()
    h_x = _entropy_from_probs(joint.sum(axis=1) / total)
    h_y = _entropy_from_probs(joint.sum(axis=0) / total)
    h_xy = _entropy_from_probs(joint.ravel() / total)
    if h_x == 0.0 or h_y == 0.0:
        warnings.warn("degenerate binning gave zero entropy; NMI defined as 0", stacklevel=2)
        return 0.0
    mi = h_x + h_y - h_xy
    denom = h_x if h_x == h_y else math.sqrt(h_x * h_y)
    return float(min(max(mi / denom, 0.0), 1.0))


def select_neighbors(series: Series, target, cfg: MIConfig) -> list[int]:
    """Indices of the top_k channels by NMI with the target, descending.

    NMI is computed on the z-scored training split only; ties break toward
    the lower channel index.
    """
    t_idx = series.channel_index(target)
    if series.n_channels < cfg.top_k + 1:
        raise ValueError(
            f"need at least top_k + 1 = {cfg.top_k + 1} channels, have {series.n_channels}"
        )
    stats = zscore_fit(series)
    train = (series.values[: series.train_end] - stats.mean) / stats.std
    target_col = train[:, t_idx]
    scored = []
    for idx in range(series.n_channels):
        if idx == t_idx:
            continue
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            score = nmi(target_col, train[:, idx], n_bins=cfg.n_bins)
        scored.append((-score, idx))
    scored.sort()
    return [idx for _, idx in scored[: cfg.top_k]]


def align_forecast(
    forecast: np.ndarray, stats: AlignmentStats, neighbor: int, target: int
) -> np.ndarray:
    """Z-score a neighbor forecast with its own training stats, then rescale
    to the target's training stats."""
    mu_j, sd_j = stats.mean_std(neighbor)
    mu_k, sd_k = stats.mean_std(target)
    return (np.asarray(forecast, dtype=np.float64) - mu_j) / sd_j * sd_k + mu_k


def blend(
    target_forecast,
    neighbor_forecasts: dict[int, np.ndarray],
    stats: AlignmentStats,
    cfg: MIConfig,
    target: int,
) -> np.ndarray:
    """Fixed-weight blend of the target forecast with aligned neighbors.

    Zero-variance neighbors are dropped and their weight returned to the
    target so the combination stays convex.
    """
    yk = as_1d_floats(target_forecast, "target_forecast")
    if len(neighbor_forecasts) != cfg.top_k:
        raise ValueError(
            f"expected {cfg.top_k} neighbor forecasts, got {len(neighbor_forecasts)}"
        )
    out = np.zeros_like(yk)
    w_self = cfg.w_self
    for j, yj in neighbor_forecasts.items():
        yj = as_1d_floats(yj, f"neighbor forecast {j}")
        if yj.shape != yk.shape:
            raise ValueError(
                f"neighbor {j} forecast length {yj.shape[0]} != target {yk.shape[0]}"
            )
        _, sd_j = stats.mean_std(j)
        if sd_j <= 0.0:
            # flat channel: no scale to align from; return its weight to the target
            w_self += cfg.w_neighbor
            continue
        out += cfg.w_neighbor * align_forecast(yj, stats, j, target)
    return w_self * yk + out
