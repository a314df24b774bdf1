"""delaycast: delay-embedding time-series forecasting.

Per-channel Hankel delay matrices are cut into 2-D patches, tokenized, and
run through a small self-attention encoder with a channel-shared forecast
head; latent trajectories admit a linear (Koopman-style) evolution fit, patch
tokens carry persistent-homology signatures, and forecasts can be blended
across channels by mutual information.
"""

from .aggregation import (
    AlignmentStats,
    MIConfig,
    blend,
    histogram_entropy,
    nmi,
    select_neighbors,
)
from .data import (
    DataError,
    NormStats,
    Series,
    WindowSpec,
    gen_lorenz,
    gen_periodic,
    gen_random_walk,
    gen_sparse_pulse,
    load_csv,
    make_windows,
    save_csv,
    zscore_apply,
    zscore_fit,
    zscore_invert,
)
from .embedding import (
    DelayConfig,
    HankelMatrix,
    PatchGrid,
    build_hankel,
    delay_vector,
    flatten_patch,
    partition_patches,
    takens_min_dimension,
)
from .encoder import (
    AttentionFlags,
    EncoderConfig,
    ForecastModel,
    LatentSequence,
    embed_tokens,
    encoder_forward,
    forecast_head,
    high_attention_tokens,
    load_model,
    pool_tokens,
    positional_encoding,
    save_model,
)
from .estimators import DelayForecaster, HankelPatchTokenizer
from .koopman import (
    KoopmanFit,
    LatentTrajectory,
    extract_latent_trajectory,
    fit_koopman,
    rollout,
    spectrum,
)
from .pipeline import AggregatedForecast, aggregate_forecast, forecast_channel
from .topology import (
    DistanceMatrix,
    PersistenceDiagram,
    PointCloud,
    bottleneck,
    cluster_tokens,
    rips_persistence,
    token_distance_matrix,
    twwd,
    wasserstein,
)
from .training import (
    AdamState,
    TrainConfig,
    TrainReport,
    adam_step,
    cosine_lr,
    evaluate,
    finetune,
    mse_loss,
    train,
)

__version__ = "0.1.0"

__all__ = [
    "AdamState",
    "AggregatedForecast",
    "AlignmentStats",
    "AttentionFlags",
    "DataError",
    "DelayConfig",
    "DelayForecaster",
    "DistanceMatrix",
    "EncoderConfig",
    "ForecastModel",
    "HankelMatrix",
    "HankelPatchTokenizer",
    "KoopmanFit",
    "LatentSequence",
    "LatentTrajectory",
    "MIConfig",
    "NormStats",
    "PatchGrid",
    "PersistenceDiagram",
    "PointCloud",
    "Series",
    "TrainConfig",
    "TrainReport",
    "WindowSpec",
    "adam_step",
    "aggregate_forecast",
    "blend",
    "bottleneck",
    "build_hankel",
    "cluster_tokens",
    "cosine_lr",
    "delay_vector",
    "embed_tokens",
    "encoder_forward",
    "evaluate",
    "extract_latent_trajectory",
    "finetune",
    "fit_koopman",
    "flatten_patch",
    "forecast_channel",
    "forecast_head",
    "gen_lorenz",
    "gen_periodic",
    "gen_random_walk",
    "gen_sparse_pulse",
    "high_attention_tokens",
    "histogram_entropy",
    "load_csv",
    "load_model",
    "make_windows",
    "mse_loss",
    "nmi",
    "partition_patches",
    "pool_tokens",
    "positional_encoding",
    "rips_persistence",
    "rollout",
    "save_csv",
    "save_model",
    "select_neighbors",
    "spectrum",
    "takens_min_dimension",
    "token_distance_matrix",
    "train",
    "twwd",
    "wasserstein",
    "zscore_apply",
    "zscore_fit",
    "zscore_invert",
]
