"""Synthetic generators, CSV ingestion, normalization, and window assembly.

All generators are pure functions of (params, seed) and return double
precision throughout.  CSV files carry one header row of channel names and
one row per time step; an optional leading timestamp column can be skipped.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from ._validation import check_finite, check_positive_int


class DataError(ValueError):
    """Malformed input data (file contents, shapes, policies)."""


@dataclass
class Series:
    """Equal-length named channels with train/val split boundaries.

    values has shape (T, n_channels); splits are (train_end, val_end) with
    0 < train_end < val_end <= T.  Test range is [val_end, T).
    """

    names: list[str]
    values: np.ndarray
    dt: float = 1.0
    train_end: int = 0
    val_end: int = 0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise DataError(f"series values must be (T, channels), got {self.values.shape}")
        T, C = self.values.shape
        if len(self.names) != C:
            raise DataError(f"{len(self.names)} names for {C} channels")
        if len(set(self.names)) != C:
            raise DataError("duplicate channel names")
        if self.train_end == 0 and self.val_end == 0:
            self.train_end, self.val_end = default_splits(T)
        if not (0 < self.train_end < self.val_end <= T):
            raise DataError(
                f"invalid splits (train_end={self.train_end}, val_end={self.val_end}) "
                f"for length {T}"
            )
        check_finite(self.values, "series values")

    @property
    def length(self) -> int:
        return self.values.shape[0]

    @property
    def n_channels(self) -> int:
        return self.values.shape[1]

    def channel(self, key) -> np.ndarray:
        return self.values[:, self.channel_index(key)]

    def channel_index(self, key) -> int:
        if isinstance(key, str):
            try:
                return self.names.index(key)
            except ValueError:
                raise DataError(f"unknown channel {key!r}; have {self.names}") from None
        idx = int(key)
        if not 0 <= idx < self.n_channels:
            raise DataError(f"channel index {idx} out of range [0, {self.n_channels})")
        return idx

    def with_values(self, values: np.ndarray) -> "Series":
        return replace(self, values=values)

    def split_range(self, split: str) -> tuple[int, int]:
        return {
            "train": (0, self.train_end),
            "val": (self.train_end, self.val_end),
            "test": (self.val_end, self.length),
        }[split]


def default_splits(length: int, train_frac: float = 0.7, val_frac: float = 0.1) -> tuple[int, int]:
    """70/10/20 train/val/test boundaries by default."""
    train_end = max(1, int(length * train_frac))
    val_end = max(train_end + 1, int(length * (train_frac + val_frac)))
    return train_end, min(val_end, length)


@dataclass(frozen=True)
class WindowSpec:
    """Sliding lookback/horizon layout for supervised forecasting windows."""

    lookback: int = 512
    horizon: int = 96
    stride: int = 1

    def __post_init__(self):
        check_positive_int(self.lookback, "lookback")
        check_positive_int(self.horizon, "horizon")
        check_positive_int(self.stride, "stride")


# ---------------------------------------------------------------------------
# generators


def _series_from(values: np.ndarray, names: list[str], dt: float) -> Series:
    return Series(names=names, values=values, dt=dt)


def gen_periodic(
    length: int,
    seed: int = 0,
    freqs=(0.01,),
    amps=(1.0,),
    phases=None,
    noise_std: float = 0.0,
    dt: float = 1.0,
) -> Series:
    """Sum of sinusoids: sum_k amps[k] * sin(2*pi*freqs[k]*t*dt + phase_k)."""
    if length < 2:
        raise DataError(f"length must be >= 2, got {length}")
    if len(freqs) != len(amps):
        raise DataError("freqs and amps must have equal lengths")
    rng = np.random.default_rng(seed)
    if phases is None:
        phases = rng.uniform(0.0, 2 * math.pi, size=len(freqs))
    t = np.arange(length) * dt
    x = np.zeros(length)
    for f, a, ph in zip(freqs, amps, phases):
        x += a * np.sin(2 * math.pi * f * t + ph)
    if noise_std > 0:
        x += rng.normal(0.0, noise_std, size=length)
    return _series_from(x[:, None], ["periodic"], dt)


def gen_random_walk(length: int, seed: int = 0, step_std: float = 1.0, dt: float = 1.0) -> Series:
    """Cumulative sum of i.i.d. normal steps (unit variance by default)."""
    if length < 2:
        raise DataError(f"length must be >= 2, got {length}")
    if step_std <= 0:
        raise DataError(f"step_std must be positive, got {step_std}")
    rng = np.random.default_rng(seed)
    x = np.cumsum(rng.normal(0.0, step_std, size=length))
    return _series_from(x[:, None], ["walk"], dt)


def _lorenz_rhs(state: np.ndarray, sigma: float, rho: float, beta: float) -> np.ndarray:
    x, y, z = state
    return np.array([sigma * (y - x), x * (rho - z) - y, x * y - beta * z])


def gen_lorenz(
    length: int,
    seed: int = 0,
    sigma: float = 10.0,
    rho: float = 28.0,
    beta: float = 8.0 / 3.0,
    dt: float = 0.01,
    x0=(1.0, 1.0, 1.05),
    transient: int = 0,
) -> Series:
    """Lorenz-63 trajectory integrated with fixed-step RK4; channels x, y, z.

    seed only perturbs the initial condition when transient > 0 is not used;
    the integration itself is deterministic.
    """
    if length < 2:
        raise DataError(f"length must be >= 2, got {length}")
    state = np.asarray(x0, dtype=np.float64).copy()
    if seed:
        state = state + np.random.default_rng(seed).normal(0.0, 1e-3, size=3)
    out = np.empty((length, 3))
    for i in range(-transient, length):
        if i >= 0:
            out[i] = state
        k1 = _lorenz_rhs(state, sigma, rho, beta)
        k2 = _lorenz_rhs(state + 0.5 * dt * k1, sigma, rho, beta)
        k3 = _lorenz_rhs(state + 0.5 * dt * k2, sigma, rho, beta)
        k4 = _lorenz_rhs(state + dt * k3, sigma, rho, beta)
        state = state + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
    return _series_from(out, ["x", "y", "z"], dt)


def gen_sparse_pulse(
    length: int,
    seed: int = 0,
    rate: float = 0.05,
    amplitude: float = 5.0,
    dt: float = 1.0,
) -> Series:
    """Zero baseline with Bernoulli(rate) pulses of fixed amplitude."""
    if length < 2:
        raise DataError(f"length must be >= 2, got {length}")
    if not 0.0 < rate < 1.0:
        raise DataError(f"pulse rate must be in (0, 1), got {rate}")
    rng = np.random.default_rng(seed)
    x = np.where(rng.random(length) < rate, amplitude, 0.0)
    return _series_from(x[:, None], ["pulse"], dt)


GENERATORS = {
    "periodic": gen_periodic,
    "random-walk": gen_random_walk,
    "lorenz": gen_lorenz,
    "sparse-pulse": gen_sparse_pulse,
}


# ---------------------------------------------------------------------------
# CSV ingestion / export

NAN_POLICIES = ("reject", "forward-fill", "drop-row")


def load_csv(
    path,
    nan_policy: str = "reject",
    train_frac: float = 0.7,
    val_frac: float = 0.1,
    skip_first_column: bool = False,
    dt: float = 1.0,
) -> Series:
    """Parse a header+rows CSV into a Series.

    nan_policy: 'reject' errors on the first NaN (naming row/column),
    'forward-fill' copies the previous valid sample, 'drop-row' removes
    rows containing NaN.  Split boundaries come from the given fractions.
    """
    if nan_policy not in NAN_POLICIES:
        raise DataError(f"unknown NaN policy {nan_policy!r}; choose from {NAN_POLICIES}")
    with open(path, "r", encoding="utf-8", newline="") as fh:
        lines = [ln.rstrip("\r\n") for ln in fh]
    lines = [ln for ln in lines if ln.strip() != ""]
    if not lines:
        raise DataError(f"{path}: empty file")
    header = [h.strip() for h in lines[0].split(",")]
    if skip_first_column:
        header = header[1:]
    if not header:
        raise DataError(f"{path}: no channel columns in header")
    rows = []
    for lineno, ln in enumerate(lines[1:], start=2):
        cells = [c.strip() for c in ln.split(",")]
        if skip_first_column:
            cells = cells[1:]
        if len(cells) != len(header):
            raise DataError(
                f"{path}:{lineno}: expected {len(header)} columns, got {len(cells)}"
            )
        row = np.empty(len(cells))
        for col, cell in enumerate(cells):
            if cell.lower() in ("nan", ""):
                row[col] = np.nan
                continue
            try:
                row[col] = float(cell)
            except ValueError:
                raise DataError(
                    f"{path}:{lineno}: non-numeric cell {cell!r} in column "
                    f"{header[col]!r}"
                ) from None
        rows.append(row)
    if not rows:
        raise DataError(f"{path}: no data rows")
    values = np.vstack(rows)

    nan_mask = np.isnan(values)
    if nan_mask.any():
        if nan_policy == "reject":
            r, c = np.argwhere(nan_mask)[0]
            raise DataError(
                f"{path}: NaN at row {r + 2} column {header[c]!r} (policy 'reject')"
            )
        if nan_policy == "drop-row":
            values = values[~nan_mask.any(axis=1)]
            if values.shape[0] < 2:
                raise DataError(f"{path}: fewer than 2 rows remain after dropping NaNs")
        else:  # forward-fill
            for c in range(values.shape[1]):
                col = values[:, c]
                if np.isnan(col[0]):
                    first = np.flatnonzero(~np.isnan(col))
                    if first.size == 0:
                        raise DataError(f"{path}: column {header[c]!r} is all NaN")
                    col[: first[0]] = col[first[0]]
                for r in range(1, len(col)):
                    if np.isnan(col[r]):
                        col[r] = col[r - 1]

    train_end, val_end = default_splits(values.shape[0], train_frac, val_frac)
    return Series(names=header, values=values, dt=dt, train_end=train_end, val_end=val_end)


def save_csv(series: Series, path) -> None:
    """Write a Series back to CSV with 17-significant-digit floats."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(series.names) + "\n")
        for row in series.values:
            fh.write(",".join(format(v, ".17g") for v in row) + "\n")


# ---------------------------------------------------------------------------
# normalization


@dataclass
class NormStats:
    """Per-channel mean/std estimated on the training split only."""

    mean: np.ndarray
    std: np.ndarray
    names: list[str] = field(default_factory=list)

    def for_channel(self, idx: int) -> tuple[float, float]:
        return float(self.mean[idx]), float(self.std[idx])


def zscore_fit(series: Series, strict: bool = False) -> NormStats:
    """Estimate mean/std on [0, train_end); zero-variance channels get std=1.

    With strict=True a zero-variance channel raises instead of being passed
    through unscaled.
    """
    train = series.values[: series.train_end]
    mean = train.mean(axis=0)
    std = train.std(axis=0)
    flat = std == 0
    if flat.any():
        bad = [series.names[i] for i in np.flatnonzero(flat)]
        if strict:
            raise DataError(f"zero-variance channels on the training split: {bad}")
        std = np.where(flat, 1.0, std)
    return NormStats(mean=mean, std=std, names=list(series.names))


def zscore_apply(series: Series, stats: NormStats) -> Series:
    return series.with_values((series.values - stats.mean) / stats.std)


def zscore_invert(series: Series, stats: NormStats) -> Series:
    return series.with_values(series.values * stats.std + stats.mean)


# ---------------------------------------------------------------------------
# window assembly


def window_starts(series: Series, spec: WindowSpec, split: str | None = None) -> np.ndarray:
    """Start indices of windows fully contained in the chosen split.

    A window occupies [i, i+lookback) with target [i+lookback,
    i+lookback+horizon); both parts must fit inside the split range, so
    split windows never read samples from another split.
    """
    lo, hi = (0, series.length) if split is None else series.split_range(split)
    span = spec.lookback + spec.horizon
    if hi - lo < span:
        raise DataError(
            f"split {split or 'full'} has {hi - lo} samples; "
            f"needs lookback + horizon = {span}"
        )
    return np.arange(lo, hi - span + 1, spec.stride)


def make_windows(
    series: Series, spec: WindowSpec, split: str | None = None, channels=None
) -> tuple[np.ndarray, np.ndarray]:
    """Assemble (inputs, targets) pairs for every channel at the given stride.

    Returns inputs (n_windows, lookback) and targets (n_windows, horizon),
    channel-major: all windows of channel 0 first.  Targets never overlap
    their inputs by construction.
    """
    starts = window_starts(series, spec, split)
    if channels is None:
        channels = range(series.n_channels)
    xs, ys = [], []
    for ch in channels:
        col = series.values[:, series.channel_index(ch)]
        idx = starts[:, None] + np.arange(spec.lookback)[None, :]
        tidx = starts[:, None] + spec.lookback + np.arange(spec.horizon)[None, :]
        xs.append(col[idx])
        ys.append(col[tidx])
    return np.concatenate(xs, axis=0), np.concatenate(ys, axis=0)
