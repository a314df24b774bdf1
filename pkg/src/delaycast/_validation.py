"""Small input-validation helpers shared across the package."""

from __future__ import annotations

import numpy as np


def as_1d_floats(x, name: str) -> np.ndarray:
    """Coerce to a 1-D float64 array; reject higher-rank or empty input."""
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 1:
        arr = np.squeeze(arr)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be 1-D, got shape {np.asarray(x).shape}")
    if arr.size == 0:
        raise ValueError(f"{name} is empty")
    return arr


def check_positive_int(value, name: str) -> int:
    if not isinstance(value, (int, np.integer)) or isinstance(value, bool):
        raise ValueError(f"{name} must be an integer, got {value!r}")
    if value < 1:
        raise ValueError(f"{name} must be >= 1, got {value}")
    return int(value)


def check_finite(arr: np.ndarray, name: str) -> np.ndarray:
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains NaN or Inf")
    return arr
