"""Delay-coordinate embedding and 2-D patch tokenization.

A scalar series x of length T is mapped to delay vectors

    y_t = [x[t-(m-1)*tau], ..., x[t-tau], x[t]]

stacked into an L x m delay matrix (L = T - (m-1)*tau), which for tau=1 is a
strict Hankel matrix (constant anti-diagonals).  The matrix is then cut into
non-overlapping p x q blocks, each a local subspace view of the reconstructed
trajectory; flattened blocks are the tokens consumed by the encoder.

Indices are 0-based internally.  Error messages use the 1-based convention of
the standard delay-embedding literature where it helps readability.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._validation import as_1d_floats, check_positive_int


@dataclass(frozen=True)
class DelayConfig:
    """Delay-embedding and patching parameters.

    m    -- embedding dimension (number of delayed coordinates), >= 1
    tau  -- delay step in samples, >= 1 (1 gives the strict Hankel form)
    p    -- patch rows (consecutive time steps per patch)
    q    -- patch columns (delayed coordinates per patch), q <= m
    """

    m: int
    tau: int = 1
    p: int = 1
    q: int = 1

    def __post_init__(self):
        check_positive_int(self.m, "m")
        check_positive_int(self.tau, "tau")
        check_positive_int(self.p, "p")
        check_positive_int(self.q, "q")
        if self.q > self.m:
            raise ValueError(f"q={self.q} exceeds embedding dimension m={self.m}")

    def rows_for(self, length: int) -> int:
        """Number of delay vectors L = T - (m-1)*tau available in a series."""
        L = length - (self.m - 1) * self.tau
        if L < 1:
            raise ValueError(
                f"series too short: need at least (m-1)*tau + 1 = "
                f"{(self.m - 1) * self.tau + 1} samples, got {length}"
            )
        if self.p > L:
            raise ValueError(f"p={self.p} exceeds delay-matrix row count L={L}")
        return L

    def patch_count_for(self, length: int) -> int:
        L = self.rows_for(length)
        return (L // self.p) * (self.m // self.q)


@dataclass(frozen=True)
class HankelMatrix:
    """Delay matrix of one channel: row r is the delay vector at time r+(m-1)*tau."""

    values: np.ndarray  # (L, m)
    m: int
    tau: int
    source_channel: int = 0

    @property
    def L(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class PatchGrid:
    """Non-overlapping p x q blocks of a delay matrix, row-major order.

    patches[j] (0-based) is block (u, v) with 1-based j = (u-1)*V + v, i.e.
    u = j // V + 1, v = j % V + 1.  Rows beyond U*p and columns beyond V*q are
    discarded; their counts are kept so callers can warn about coverage loss.
    """

    patches: np.ndarray  # (U*V, p, q)
    U: int
    V: int
    p: int
    q: int
    leftover_rows: int
    leftover_cols: int

    @property
    def patch_count(self) -> int:
        return self.U * self.V

    def patch(self, u: int, v: int) -> np.ndarray:
        """Block at 1-based grid position (u, v)."""
        if not (1 <= u <= self.U and 1 <= v <= self.V):
            raise ValueError(f"patch position ({u},{v}) outside grid {self.U}x{self.V}")
        return self.patches[(u - 1) * self.V + (v - 1)]

    def flattened(self) -> np.ndarray:
        """All patches flattened row-major, shape (patch_count, p*q)."""
        return self.patches.reshape(self.patch_count, self.p * self.q)


# Full-scale preset: 500 delayed coordinates cut into 25x50 patches.  Desk
# work uses much smaller m; nothing in the library assumes this size.
FULL_SCALE_PRESET = DelayConfig(m=500, tau=1, p=25, q=50)


def delay_vector(x, t: int, cfg: DelayConfig) -> np.ndarray:
    """Delay vector at time index t (0-based), oldest sample first.

    Returns [x[t-(m-1)*tau], ..., x[t-tau], x[t]].
    """
    x = as_1d_floats(x, "x")
    span = (cfg.m - 1) * cfg.tau
    if t < span:
        raise ValueError(
            f"time index {t} out of range: delay vector needs t >= (m-1)*tau = {span}"
        )
    if t >= len(x):
        raise ValueError(f"time index {t} out of range for series of length {len(x)}")
    return x[t - span : t + 1 : cfg.tau].copy()


def build_hankel(x, cfg: DelayConfig, source_channel: int = 0) -> HankelMatrix:
    """Stack all delay vectors of a series into the L x m delay matrix.

    Row r equals delay_vector(x, r + (m-1)*tau); for tau=1 the result is a
    strict Hankel matrix with values[r, c] = x[r + c].
    """
    x = as_1d_floats(x, "x")
    L = cfg.rows_for(len(x))
    idx = np.arange(L)[:, None] + np.arange(cfg.m)[None, :] * cfg.tau
    return HankelMatrix(values=x[idx], m=cfg.m, tau=cfg.tau, source_channel=source_channel)


def partition_patches(H: HankelMatrix, cfg: DelayConfig) -> PatchGrid:
    """Cut a delay matrix into U*V non-overlapping p x q patches.

    U = floor(L/p), V = floor(m/q); patch (u, v) covers rows
    (u-1)*p .. u*p-1 and columns (v-1)*q .. v*q-1 (1-based u, v).  Leftover
    rows (L mod p) and columns (m mod q) are excluded.
    """
    L, m = H.values.shape
    if cfg.p > L or cfg.q > m:
        raise ValueError(
            f"patch {cfg.p}x{cfg.q} larger than delay matrix {L}x{m}"
        )
    U, V = L // cfg.p, m // cfg.q
    core = H.values[: U * cfg.p, : V * cfg.q]
    patches = (
        core.reshape(U, cfg.p, V, cfg.q)
        .transpose(0, 2, 1, 3)
        .reshape(U * V, cfg.p, cfg.q)
    )
    return PatchGrid(
        patches=patches,
        U=U,
        V=V,
        p=cfg.p,
        q=cfg.q,
        leftover_rows=L % cfg.p,
        leftover_cols=m % cfg.q,
    )


def flatten_patch(P) -> np.ndarray:
    """Row-major flattening of a patch; reshape(p, q) inverts it exactly."""
    P = np.asarray(P, dtype=np.float64)
    if P.ndim != 2:
        raise ValueError(f"patch must be 2-D, got shape {P.shape}")
    return P.reshape(-1).copy()


def patch_position(j: int, V: int) -> tuple[int, int]:
    """1-based (u, v) grid position of 1-based patch index j = (u-1)*V + v."""
    if j < 1:
        raise ValueError(f"patch index must be >= 1, got {j}")
    return (j - 1) // V + 1, (j - 1) % V + 1


def takens_min_dimension(attractor_dim: float) -> int:
    """Smallest embedding dimension 2*d+1 guaranteeing a generic embedding.

    Validation helper only; m and tau are fixed configuration here, never
    auto-selected.
    """
    if attractor_dim < 0:
        raise ValueError("attractor dimension must be nonnegative")
    return int(np.floor(2 * attractor_dim)) + 1


def window_to_tokens(x, cfg: DelayConfig) -> np.ndarray:
    """Series window -> flattened patch tokens, shape (patch_count, p*q).

    Convenience composition of build_hankel + partition_patches + flatten,
    used by the encoder pipeline.
    """
    return partition_patches(build_hankel(x, cfg), cfg).flattened()


def windows_to_tokens(X, cfg: DelayConfig) -> np.ndarray:
    """Batched window_to_tokens: (B, T) -> (B, patch_count, p*q).

    Vectorized over the batch; all windows must share one length.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError(f"expected a (batch, length) array, got shape {X.shape}")
    B, T = X.shape
    L = cfg.rows_for(T)
    idx = np.arange(L)[:, None] + np.arange(cfg.m)[None, :] * cfg.tau
    H = X[:, idx]  # (B, L, m)
    U, V = L // cfg.p, cfg.m // cfg.q
    core = H[:, : U * cfg.p, : V * cfg.q]
    return (
        core.reshape(B, U, cfg.p, V, cfg.q)
        .transpose(0, 1, 3, 2, 4)
        .reshape(B, U * V, cfg.p * cfg.q)
    )
