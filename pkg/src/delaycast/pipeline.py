"""End-to-end conveniences: forecast a channel from the end of a series,
optionally enhanced by mutual-information-guided aggregation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .aggregation import AlignmentStats, MIConfig, blend, nmi, select_neighbors
from .data import Series, zscore_apply, zscore_fit
from .encoder import ForecastModel


def forecast_channel(model: ForecastModel, series: Series, channel) -> np.ndarray:
    """h-step forecast from the last lookback window, in original units.

    The window is z-scored with the series' training statistics before the
    model sees it and the prediction is mapped back.
    """
    idx = series.channel_index(channel)
    stats = zscore_fit(series)
    norm = zscore_apply(series, stats)
    x = norm.channel(idx)
    if len(x) < model.lookback:
        raise ValueError(
            f"series length {len(x)} shorter than model lookback {model.lookback}"
        )
    pred = model.predict_window(x[-model.lookback :])
    mu, sd = stats.for_channel(idx)
    return pred * sd + mu


@dataclass
class AggregatedForecast:
    forecast: np.ndarray
    baseline: np.ndarray
    neighbors: list[int]
    neighbor_nmi: list[float]
    weights: dict[str, float]


def aggregate_forecast(
    model: ForecastModel, series: Series, target, cfg: MIConfig | None = None
) -> AggregatedForecast:
    """Blend the target forecast with its top-k NMI neighbors' forecasts.

    Only the target's output changes; neighbor forecasts are computed
    internally and aligned to the target's training-split scale.
    """
    cfg = cfg or MIConfig()
    t_idx = series.channel_index(target)
    neighbors = select_neighbors(series, t_idx, cfg)
    stats = zscore_fit(series)
    train = (series.values[: series.train_end] - stats.mean) / stats.std
    scores = [nmi(train[:, t_idx], train[:, j], n_bins=cfg.n_bins) for j in neighbors]
    baseline = forecast_channel(model, series, t_idx)
    neighbor_fc = {j: forecast_channel(model, series, j) for j in neighbors}
    align = AlignmentStats.from_series(series)
    blended = blend(baseline, neighbor_fc, align, cfg, target=t_idx)
    return AggregatedForecast(
        forecast=blended,
        baseline=baseline,
        neighbors=neighbors,
        neighbor_nmi=scores,
        weights={"self": cfg.w_self, "neighbor": cfg.w_neighbor},
    )
