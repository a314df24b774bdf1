"""Linear evolution operators on latent trajectories.

Given latent states z^0..z^T, the one-step operator is the least-squares
minimizer of sum_t ||z^{t+1} - K z^t||^2, computed as K = Z_plus pinv(Z_minus)
with an SVD pseudoinverse (singular values below 1e-12 * sigma_max dropped,
so rank-deficient trajectories get the minimum-norm solution).  Eigenvalue
moduli and arguments classify each mode as stable, marginal, or unstable.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .data import Series
from .encoder import ForecastModel

_SVD_RCOND = 1e-12
_STABILITY_EPS = 1e-6


@dataclass
class LatentTrajectory:
    """Ordered latent states (n_states, latent_dim)."""

    states: np.ndarray

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=np.float64)
        if self.states.ndim != 2:
            raise ValueError(f"states must be (n_states, dim), got {self.states.shape}")
        if self.states.shape[0] < 1:
            raise ValueError("need at least 1 state")
        if self.states.shape[0] - 1 < self.states.shape[1]:
            warnings.warn(
                "fewer transitions than latent dimensions; the operator fit is "
                "under-determined (minimum-norm solution)",
                stacklevel=2,
            )

    @property
    def latent_dim(self) -> int:
        return self.states.shape[1]


@dataclass
class KoopmanFit:
    K: np.ndarray
    residual: float
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    diagonalizable: bool


def _pinv(A: np.ndarray) -> np.ndarray:
    U, s, Vt = np.linalg.svd(A, full_matrices=False)
    cutoff = _SVD_RCOND * (s[0] if s.size else 0.0)
    inv = np.where(s > cutoff, 1.0 / np.where(s > cutoff, s, 1.0), 0.0)
    return Vt.T @ (inv[:, None] * U.T)


def _snapshot_pairs(trajectories, lag: int) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(trajectories, LatentTrajectory):
        trajectories = [trajectories]
    zs, zp = [], []
    for traj in trajectories:
        s = traj.states
        if s.shape[0] <= lag:
            continue
        zs.append(s[:-lag])
        zp.append(s[lag:])
    if not zs:
        raise ValueError(f"no snapshot pairs available at lag {lag}")
    return np.concatenate(zs).T, np.concatenate(zp).T  # (dim, n_pairs) each


def fit_koopman(trajectories, lag: int = 1) -> KoopmanFit:
    """Least-squares one-step operator over one or more trajectories.

    lag > 1 fits the lag-step map directly instead of composing one-step
    fits (both readings of h-step latent propagation are supported).
    """
    Z_minus, Z_plus = _snapshot_pairs(trajectories, lag)
    K = Z_plus @ _pinv(Z_minus)
    err = Z_plus - K @ Z_minus
    residual = float(np.sqrt(np.mean(err**2)))
    with np.errstate(all="raise"):
        try:
            eigvals, eigvecs = np.linalg.eig(K)
        except (np.linalg.LinAlgError, FloatingPointError) as exc:
            raise RuntimeError(f"eigendecomposition of fitted operator failed: {exc}")
    order = np.argsort(-np.abs(eigvals), kind="stable")
    eigvals, eigvecs = eigvals[order], eigvecs[:, order]
    diagonalizable = True
    try:
        recon = eigvecs @ np.diag(eigvals) @ np.linalg.inv(eigvecs)
        rel = np.linalg.norm(recon - K) / max(np.linalg.norm(K), 1e-300)
        diagonalizable = bool(rel < 1e-8)
    except np.linalg.LinAlgError:
        diagonalizable = False
    return KoopmanFit(
        K=K,
        residual=residual,
        eigenvalues=eigvals,
        eigenvectors=eigvecs,
        diagonalizable=diagonalizable,
    )


def rollout(K: np.ndarray, z0: np.ndarray, steps: int) -> np.ndarray:
    """Iterated propagation [K z0, K^2 z0, ..., K^steps z0], shape (steps, dim)."""
    K = np.asarray(K, dtype=np.float64)
    z = np.asarray(z0, dtype=np.float64)
    if K.ndim != 2 or K.shape[0] != K.shape[1]:
        raise ValueError(f"K must be square, got {K.shape}")
    if z.shape != (K.shape[0],):
        raise ValueError(f"z0 shape {z.shape} does not match operator size {K.shape[0]}")
    if steps < 0:
        raise ValueError("steps must be >= 0")
    out = np.empty((steps, K.shape[0]))
    for k in range(steps):
        z = K @ z
        out[k] = z
    return out


@dataclass(frozen=True)
class EigenMode:
    value: complex
    modulus: float
    argument: float
    label: str  # stable | marginal | unstable


def spectrum(K: np.ndarray, eps: float = _STABILITY_EPS) -> list[EigenMode]:
    """Eigenvalues sorted by modulus (descending) with stability labels.

    |lambda| < 1-eps is stable, | |lambda|-1 | <= eps marginal, > 1+eps
    unstable.
    """
    K = np.asarray(K, dtype=np.float64)
    if K.ndim != 2 or K.shape[0] != K.shape[1]:
        raise ValueError(f"K must be square, got {K.shape}")
    with np.errstate(all="raise"):
        try:
            eigvals = np.linalg.eigvals(K)
        except (np.linalg.LinAlgError, FloatingPointError) as exc:
            raise RuntimeError(f"eigenvalue solver failed: {exc}")
    modes = []
    for lam in sorted(eigvals, key=lambda v: -abs(v)):
        mod = abs(lam)
        if abs(mod - 1.0) <= eps:
            label = "marginal"
        elif mod < 1.0:
            label = "stable"
        else:
            label = "unstable"
        modes.append(
            EigenMode(value=complex(lam), modulus=float(mod),
                      argument=float(np.angle(lam)), label=label)
        )
    return modes


def extract_latent_trajectory(
    series: Series, channel, model: ForecastModel, window_stride: int = 1
) -> LatentTrajectory:
    """Slide a lookback window over one channel and record one latent state
    per window: the mean over the final-layer token vectors."""
    if window_stride < 1:
        raise ValueError("window_stride must be >= 1")
    x = series.channel(channel)
    T, w = len(x), model.lookback
    if T < w:
        raise ValueError(f"series length {T} shorter than model lookback {w}")
    starts = range(0, T - w + 1, window_stride)
    states = np.empty((len(starts), model.cfg.d_model))
    for i, s in enumerate(starts):
        latent = model.encode_window(x[s : s + w])
        states[i] = latent.tokens.mean(axis=0)
    return LatentTrajectory(states=states)


def export_latents_csv(traj: LatentTrajectory, path) -> None:
    """One row per state, columns z0..z{dim-1}, 17 significant digits."""
    dim = traj.latent_dim
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(f"z{i}" for i in range(dim)) + "\n")
        for row in traj.states:
            fh.write(",".join(format(v, ".17g") for v in row) + "\n")


def export_spectrum_csv(modes: list[EigenMode], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("re,im,modulus,argument,label\n")
        for m in modes:
            fh.write(
                f"{m.value.real:.17g},{m.value.imag:.17g},"
                f"{m.modulus:.17g},{m.argument:.17g},{m.label}\n"
            )
