"""Patch-token encoder with a channel-shared forecast head.

Pipeline for one input window:

    patches --W_e,b_e--> tokens --AvgPool1D--> pooled --+PE--> encoder stack
    --flatten--> shared head --> h-step forecast

The encoder stack is post-norm: A = LayerNorm(X + MHA(X)) followed by
X' = LayerNorm(A + FF(A)).  Everything is double precision numpy with exact
reverse-mode gradients; a single model instance serves every channel (the
head is one shared parameter set, never copied per channel).

Checkpoints are a deterministic binary format (JSON header with config,
seed, and the tensor manifest in declared order, then raw little-endian
float64 bytes) so identical runs produce identical files.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy.special import erf

from .embedding import DelayConfig, PatchGrid, windows_to_tokens

_LN_EPS = 1e-5
_PE_CACHE: dict[tuple[int, int], np.ndarray] = {}

HEAD_KINDS = ("affine", "mlp_gelu")


@dataclass(frozen=True)
class EncoderConfig:
    """Encoder and head hyperparameters.

    pool_kernel/pool_stride control the AvgPool1D token reduction applied
    before positional encoding; horizon is the forecast length h.  Dropout
    is applied after the attention and feed-forward projections during
    training only.
    """

    d_model: int = 64
    n_layers: int = 2
    n_heads: int = 4
    d_ff: int = 128
    pool_kernel: int = 4
    pool_stride: int = 4
    horizon: int = 96
    dropout: float = 0.0
    seed: int = 0
    head: str = "affine"
    head_hidden: int = 0  # 0 -> d_model, used only for head="mlp_gelu"

    def __post_init__(self):
        if self.d_model % self.n_heads != 0:
            raise ValueError(
                f"d_model={self.d_model} not divisible by n_heads={self.n_heads}"
            )
        if self.pool_kernel < 1 or self.pool_stride < 1:
            raise ValueError("pool_kernel and pool_stride must be >= 1")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.head not in HEAD_KINDS:
            raise ValueError(f"head must be one of {HEAD_KINDS}, got {self.head!r}")
        if self.n_layers < 0:
            raise ValueError("n_layers must be >= 0")


# Full-scale preset: 6 layers, 8 heads, 512 wide, pool 30.
SMALL_PRESET = EncoderConfig(
    d_model=512, n_layers=6, n_heads=8, d_ff=2048, pool_kernel=30, pool_stride=30
)


@dataclass
class LatentSequence:
    """Final-layer token matrix plus optionally retained attention maps.

    attention_maps[l] has shape (n_heads, n_tokens, n_tokens) with
    row-stochastic rows (queries attend over keys).
    """

    tokens: np.ndarray
    attention_maps: list[np.ndarray] | None = None


def positional_encoding(n_tokens: int, d_model: int) -> np.ndarray:
    """Fixed sinusoidal table: PE[pos, 2i] = sin(pos / 10000^(2i/d)),
    PE[pos, 2i+1] = cos(pos / 10000^(2i/d))."""
    if n_tokens < 1:
        raise ValueError(f"n_tokens must be >= 1, got {n_tokens}")
    key = (n_tokens, d_model)
    cached = _PE_CACHE.get(key)
    if cached is not None:
        return cached
    pos = np.arange(n_tokens, dtype=np.float64)[:, None]
    i2 = np.arange(0, d_model, 2, dtype=np.float64)[None, :]
    angle = pos / np.power(10000.0, i2 / d_model)
    pe = np.zeros((n_tokens, d_model))
    pe[:, 0::2] = np.sin(angle)
    pe[:, 1::2] = np.cos(angle)[:, : pe[:, 1::2].shape[1]]
    pe.setflags(write=False)
    _PE_CACHE[key] = pe
    return pe


def pooled_length(n_tokens: int, kernel: int, stride: int) -> int:
    if n_tokens < kernel:
        return 1
    return (n_tokens - kernel) // stride + 1


def pool_tokens(tokens: np.ndarray, kernel: int, stride: int) -> np.ndarray:
    """1-D average pooling along the token axis of an (n_tokens, d) matrix.

    Window w averages rows [w*stride, w*stride + kernel); when the matrix is
    shorter than the kernel the output is the single mean over all rows.
    """
    tokens = np.asarray(tokens, dtype=np.float64)
    squeeze = tokens.ndim == 2
    if squeeze:
        tokens = tokens[None]
    out = _pool_forward(tokens, kernel, stride)
    return out[0] if squeeze else out


def _pool_forward(x: np.ndarray, kernel: int, stride: int) -> np.ndarray:
    B, N, D = x.shape
    if kernel == 1 and stride == 1:
        return x.copy()
    n_out = pooled_length(N, kernel, stride)
    if N < kernel:
        return x.mean(axis=1, keepdims=True)
    out = np.empty((B, n_out, D))
    for w in range(n_out):
        out[:, w] = x[:, w * stride : w * stride + kernel].mean(axis=1)
    return out


def _pool_backward(dout: np.ndarray, n_tokens: int, kernel: int, stride: int) -> np.ndarray:
    B, n_out, D = dout.shape
    if kernel == 1 and stride == 1:
        return dout.copy()
    dx = np.zeros((B, n_tokens, D))
    if n_tokens < kernel:
        dx += dout[:, 0:1] / n_tokens
        return dx
    for w in range(n_out):
        dx[:, w * stride : w * stride + kernel] += dout[:, w : w + 1] / kernel
    return dx


def _gelu(u: np.ndarray) -> np.ndarray:
    return 0.5 * u * (1.0 + erf(u / math.sqrt(2.0)))


def _gelu_grad(u: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + erf(u / math.sqrt(2.0))) + u * np.exp(-0.5 * u * u) / math.sqrt(
        2.0 * math.pi
    )


def _layernorm(x: np.ndarray, g: np.ndarray, b: np.ndarray):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    sigma = np.sqrt(xc.var(axis=-1, keepdims=True) + _LN_EPS)
    xhat = xc / sigma
    return xhat * g + b, (xhat, sigma)


def _layernorm_backward(dy: np.ndarray, cache, g: np.ndarray):
    xhat, sigma = cache
    dxhat = dy * g
    dg = (dy * xhat).sum(axis=tuple(range(dy.ndim - 1)))
    db = dy.sum(axis=tuple(range(dy.ndim - 1)))
    mean_dxhat = dxhat.mean(axis=-1, keepdims=True)
    mean_dxhat_xhat = (dxhat * xhat).mean(axis=-1, keepdims=True)
    dx = (dxhat - mean_dxhat - xhat * mean_dxhat_xhat) / sigma
    return dx, dg, db


def _softmax(s: np.ndarray) -> np.ndarray:
    s = s - s.max(axis=-1, keepdims=True)
    e = np.exp(s)
    return e / e.sum(axis=-1, keepdims=True)


class ForecastModel:
    """Parameters, gradient buffers, and forward/backward for the pipeline.

    Built for a fixed input window length (lookback): the head's flattened
    input width depends on the post-pooling token count, which depends on
    lookback through the delay/patch geometry.
    """

    def __init__(self, delay: DelayConfig, cfg: EncoderConfig, lookback: int):
        self.delay = delay
        self.cfg = cfg
        self.lookback = int(lookback)
        L = delay.rows_for(self.lookback)
        self.n_tokens = (L // delay.p) * (delay.m // delay.q)
        if self.n_tokens < 1:
            raise ValueError("configuration yields zero patches per window")
        self.n_pooled = pooled_length(self.n_tokens, cfg.pool_kernel, cfg.pool_stride)
        self.head_in = self.n_pooled * cfg.d_model
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self._cache = None
        self._init_params()

    # -- construction ------------------------------------------------------

    def _add_param(self, rng, name: str, shape, kind: str):
        if kind == "weight":
            fan_in, fan_out = shape
            limit = math.sqrt(6.0 / (fan_in + fan_out))
            value = rng.uniform(-limit, limit, size=shape)
        elif kind == "zeros":
            value = np.zeros(shape)
        else:  # ones
            value = np.ones(shape)
        self.params[name] = value
        self.grads[name] = np.zeros(shape)

    def _init_params(self):
        rng = np.random.default_rng(self.cfg.seed)
        D, F = self.cfg.d_model, self.cfg.d_ff
        pq = self.delay.p * self.delay.q
        self._add_param(rng, "W_e", (pq, D), "weight")
        self._add_param(rng, "b_e", (D,), "zeros")
        for l in range(self.cfg.n_layers):
            pre = f"layer{l}."
            for nm in ("W_q", "W_k", "W_v", "W_o"):
                self._add_param(rng, pre + nm, (D, D), "weight")
            # no key bias: softmax is invariant to per-row constant score
            # shifts, so b_k would be an unidentifiable null direction
            for nm in ("b_q", "b_v", "b_o"):
                self._add_param(rng, pre + nm, (D,), "zeros")
            self._add_param(rng, pre + "W_ff1", (D, F), "weight")
            self._add_param(rng, pre + "b_ff1", (F,), "zeros")
            self._add_param(rng, pre + "W_ff2", (F, D), "weight")
            self._add_param(rng, pre + "b_ff2", (D,), "zeros")
            self._add_param(rng, pre + "ln1_g", (D,), "ones")
            self._add_param(rng, pre + "ln1_b", (D,), "zeros")
            self._add_param(rng, pre + "ln2_g", (D,), "ones")
            self._add_param(rng, pre + "ln2_b", (D,), "zeros")
        h = self.cfg.horizon
        if self.cfg.head == "affine":
            self._add_param(rng, "W_head", (self.head_in, h), "weight")
            self._add_param(rng, "b_head", (h,), "zeros")
        else:
            hidden = self.cfg.head_hidden or D
            self._add_param(rng, "W_head1", (self.head_in, hidden), "weight")
            self._add_param(rng, "b_head1", (hidden,), "zeros")
            self._add_param(rng, "W_head2", (hidden, h), "weight")
            self._add_param(rng, "b_head2", (h,), "zeros")
        self._dropout_rng = np.random.default_rng(
            np.random.SeedSequence([self.cfg.seed, 0xD0]))

    def param_names(self) -> list[str]:
        return list(self.params.keys())

    def param_count(self) -> int:
        return sum(v.size for v in self.params.values())

    def encoder_param_names(self) -> list[str]:
        return [n for n in self.params if not n.startswith(("W_head", "b_head"))]

    def head_param_names(self) -> list[str]:
        return [n for n in self.params if n.startswith(("W_head", "b_head"))]

    def zero_grads(self):
        for g in self.grads.values():
            g[...] = 0.0

    def check_finite(self):
        for name, v in self.params.items():
            if not np.all(np.isfinite(v)):
                raise FloatingPointError(f"parameter {name} contains NaN/Inf")

    # -- forward -----------------------------------------------------------

    def _split_heads(self, x: np.ndarray) -> np.ndarray:
        B, N, D = x.shape
        H = self.cfg.n_heads
        return x.reshape(B, N, H, D // H).transpose(0, 2, 1, 3)

    def _merge_heads(self, x: np.ndarray) -> np.ndarray:
        B, H, N, Dh = x.shape
        return x.transpose(0, 2, 1, 3).reshape(B, N, H * Dh)

    def _dropout_mask(self, shape) -> np.ndarray:
        rate = self.cfg.dropout
        keep = self._dropout_rng.random(shape) >= rate
        return keep / (1.0 - rate)

    def forward_batch(
        self,
        windows: np.ndarray,
        train_mode: bool = False,
        retain_cache: bool = False,
        retain_attention: bool = False,
    ) -> np.ndarray:
        """Windows (B, lookback) -> forecasts (B, horizon).

        With retain_cache=True all intermediates needed by backward() are
        kept on the model (single-writer; do not share across threads).
        """
        windows = np.asarray(windows, dtype=np.float64)
        if windows.ndim == 1:
            windows = windows[None]
        if windows.shape[1] != self.lookback:
            raise ValueError(
                f"window length {windows.shape[1]} does not match model lookback "
                f"{self.lookback}"
            )
        flats = windows_to_tokens(windows, self.delay)  # (B, M, pq)
        return self._forward_from_tokens(
            flats, train_mode=train_mode, retain_cache=retain_cache,
            retain_attention=retain_attention,
        )

    def _forward_from_tokens(self, flats, train_mode, retain_cache, retain_attention):
        p = self.params
        cache = {"flats": flats} if retain_cache else None
        tokens = flats @ p["W_e"] + p["b_e"]  # (B, M, D)
        pooled = _pool_forward(tokens, self.cfg.pool_kernel, self.cfg.pool_stride)
        x = pooled + positional_encoding(self.n_pooled, self.cfg.d_model)[None]
        if retain_cache:
            cache["n_raw_tokens"] = tokens.shape[1]
            cache["layers"] = []
        attn_maps = [] if retain_attention else None
        drop = train_mode and self.cfg.dropout > 0.0
        for l in range(self.cfg.n_layers):
            x, lcache, maps = self._layer_forward(
                x, l, drop=drop, keep_cache=retain_cache, keep_attn=retain_attention
            )
            if retain_cache:
                cache["layers"].append(lcache)
            if retain_attention:
                attn_maps.append(maps)
        B = x.shape[0]
        flat = x.reshape(B, self.head_in)
        if self.cfg.head == "affine":
            pred = flat @ p["W_head"] + p["b_head"]
            head_cache = (flat,)
        else:
            u = flat @ p["W_head1"] + p["b_head1"]
            g = _gelu(u)
            pred = g @ p["W_head2"] + p["b_head2"]
            head_cache = (flat, u, g)
        if retain_cache:
            cache["head"] = head_cache
            self._cache = cache
        self._last_attention = attn_maps
        return pred

    def _layer_forward(self, x, l, drop, keep_cache, keep_attn):
        p = self.params
        pre = f"layer{l}."
        Dh = self.cfg.d_model // self.cfg.n_heads
        scale = 1.0 / math.sqrt(Dh)
        Q = x @ p[pre + "W_q"] + p[pre + "b_q"]
        K = x @ p[pre + "W_k"]
        V = x @ p[pre + "W_v"] + p[pre + "b_v"]
        Qh, Kh, Vh = map(self._split_heads, (Q, K, V))
        S = (Qh @ Kh.transpose(0, 1, 3, 2)) * scale
        A = _softmax(S)
        O = self._merge_heads(A @ Vh)  # (B, N, D)
        M = O @ p[pre + "W_o"] + p[pre + "b_o"]
        mask_attn = self._dropout_mask(M.shape) if drop else None
        if mask_attn is not None:
            M = M * mask_attn
        r1 = x + M
        a1, ln1_cache = _layernorm(r1, p[pre + "ln1_g"], p[pre + "ln1_b"])
        u = a1 @ p[pre + "W_ff1"] + p[pre + "b_ff1"]
        g = _gelu(u)
        f = g @ p[pre + "W_ff2"] + p[pre + "b_ff2"]
        mask_ff = self._dropout_mask(f.shape) if drop else None
        if mask_ff is not None:
            f = f * mask_ff
        r2 = a1 + f
        out, ln2_cache = _layernorm(r2, p[pre + "ln2_g"], p[pre + "ln2_b"])
        lcache = None
        if keep_cache:
            lcache = {
                "x": x, "Qh": Qh, "Kh": Kh, "Vh": Vh, "A": A, "O": O,
                "mask_attn": mask_attn, "ln1": ln1_cache, "a1": a1, "u": u,
                "g": g, "mask_ff": mask_ff, "ln2": ln2_cache,
            }
        maps = A[0].copy() if keep_attn else None
        return out, lcache, maps

    # -- backward ----------------------------------------------------------

    def backward(self, dpred: np.ndarray, head_only: bool = False) -> dict[str, np.ndarray]:
        """Accumulate d(loss)/d(theta) into the gradient buffers.

        dpred is the loss gradient w.r.t. the (B, horizon) forecasts of the
        most recent forward pass with retain_cache=True.  head_only stops
        after the head parameters (used when the encoder is frozen).
        """
        if self._cache is None:
            raise RuntimeError(
                "backward called without a retained forward pass; run "
                "forward_batch(..., retain_cache=True) first"
            )
        cache, self._cache = self._cache, None
        p, g = self.params, self.grads
        dpred = np.asarray(dpred, dtype=np.float64)
        if dpred.ndim == 1:
            dpred = dpred[None]
        B = dpred.shape[0]

        if self.cfg.head == "affine":
            (flat,) = cache["head"]
            g["W_head"] += flat.T @ dpred
            g["b_head"] += dpred.sum(axis=0)
            if head_only:
                return self.grads
            dflat = dpred @ p["W_head"].T
        else:
            flat, u, gl = cache["head"]
            g["W_head2"] += gl.T @ dpred
            g["b_head2"] += dpred.sum(axis=0)
            dgl = dpred @ p["W_head2"].T
            du = dgl * _gelu_grad(u)
            g["W_head1"] += flat.T @ du
            g["b_head1"] += du.sum(axis=0)
            if head_only:
                return self.grads
            dflat = du @ p["W_head1"].T

        dx = dflat.reshape(B, self.n_pooled, self.cfg.d_model)
        for l in range(self.cfg.n_layers - 1, -1, -1):
            dx = self._layer_backward(dx, l, cache["layers"][l])
        # positional encoding is constant: gradient passes through unchanged
        dtokens = _pool_backward(
            dx, cache["n_raw_tokens"], self.cfg.pool_kernel, self.cfg.pool_stride
        )
        flats = cache["flats"]
        pq = flats.shape[2]
        g["W_e"] += flats.reshape(-1, pq).T @ dtokens.reshape(-1, self.cfg.d_model)
        g["b_e"] += dtokens.sum(axis=(0, 1))
        return self.grads

    def _layer_backward(self, dout, l, c):
        p, g = self.params, self.grads
        pre = f"layer{l}."
        Dh = self.cfg.d_model // self.cfg.n_heads
        scale = 1.0 / math.sqrt(Dh)
        D = self.cfg.d_model

        dr2, dg2, db2 = _layernorm_backward(dout, c["ln2"], p[pre + "ln2_g"])
        g[pre + "ln2_g"] += dg2
        g[pre + "ln2_b"] += db2
        da1 = dr2.copy()
        df = dr2
        if c["mask_ff"] is not None:
            df = df * c["mask_ff"]
        g[pre + "W_ff2"] += c["g"].reshape(-1, c["g"].shape[-1]).T @ df.reshape(-1, D)
        g[pre + "b_ff2"] += df.sum(axis=(0, 1))
        dgl = df @ p[pre + "W_ff2"].T
        du = dgl * _gelu_grad(c["u"])
        g[pre + "W_ff1"] += c["a1"].reshape(-1, D).T @ du.reshape(-1, du.shape[-1])
        g[pre + "b_ff1"] += du.sum(axis=(0, 1))
        da1 += du @ p[pre + "W_ff1"].T

        dr1, dg1, db1 = _layernorm_backward(da1, c["ln1"], p[pre + "ln1_g"])
        g[pre + "ln1_g"] += dg1
        g[pre + "ln1_b"] += db1
        dx = dr1.copy()
        dM = dr1
        if c["mask_attn"] is not None:
            dM = dM * c["mask_attn"]
        g[pre + "W_o"] += c["O"].reshape(-1, D).T @ dM.reshape(-1, D)
        g[pre + "b_o"] += dM.sum(axis=(0, 1))
        dO = self._split_heads(dM @ p[pre + "W_o"].T)
        A, Vh, Qh, Kh = c["A"], c["Vh"], c["Qh"], c["Kh"]
        dA = dO @ Vh.transpose(0, 1, 3, 2)
        dVh = A.transpose(0, 1, 3, 2) @ dO
        dS = A * (dA - (dA * A).sum(axis=-1, keepdims=True))
        dQh = (dS @ Kh) * scale
        dKh = (dS.transpose(0, 1, 3, 2) @ Qh) * scale
        x = c["x"]
        for dXh, wname, bname in ((dQh, "W_q", "b_q"), (dKh, "W_k", None), (dVh, "W_v", "b_v")):
            dX = self._merge_heads(dXh)
            g[pre + wname] += x.reshape(-1, D).T @ dX.reshape(-1, D)
            if bname is not None:
                g[pre + bname] += dX.sum(axis=(0, 1))
            dx += dX @ p[pre + wname].T
        return dx

    # -- inference helpers ---------------------------------------------------

    def predict_batch(self, windows: np.ndarray) -> np.ndarray:
        return self.forward_batch(windows, train_mode=False)

    def predict_window(self, window: np.ndarray) -> np.ndarray:
        return self.predict_batch(np.asarray(window)[None])[0]

    def encode_window(self, window: np.ndarray, retain_attention: bool = False) -> LatentSequence:
        """Final-layer token matrix (n_pooled, d_model) for one window."""
        self.forward_batch(
            np.asarray(window)[None], retain_cache=True, retain_attention=retain_attention
        )
        flat = self._cache["head"][0]
        self._cache = None
        tokens = flat.reshape(self.n_pooled, self.cfg.d_model)
        return LatentSequence(tokens=tokens, attention_maps=self._last_attention)

    def copy(self) -> "ForecastModel":
        clone = ForecastModel(self.delay, self.cfg, self.lookback)
        for name in self.params:
            clone.params[name][...] = self.params[name]
        return clone


# ---------------------------------------------------------------------------
# module-level operations over a model


def embed_tokens(grid: PatchGrid, model: ForecastModel) -> np.ndarray:
    """Project flattened patches into token space: token_j = flat_j . W_e + b_e.

    W_e is stored input-major with shape (p*q, d_model); row k holds the
    weights multiplying patch component k across all model dimensions.
    """
    flats = grid.flattened()
    pq = model.params["W_e"].shape[0]
    if flats.shape[1] != pq:
        raise ValueError(
            f"patch size {flats.shape[1]} does not match projection input width {pq}"
        )
    return flats @ model.params["W_e"] + model.params["b_e"]


def encoder_forward(
    x: np.ndarray, model: ForecastModel, retain_attention: bool = False
) -> LatentSequence:
    """Run the layer stack on an (n_tokens, d_model) matrix (PE already added)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != model.cfg.d_model:
        raise ValueError(
            f"expected (n_tokens, {model.cfg.d_model}) input, got shape {x.shape}"
        )
    out = x[None]
    maps = [] if retain_attention else None
    for l in range(model.cfg.n_layers):
        out, _, A = model._layer_forward(
            out, l, drop=False, keep_cache=False, keep_attn=retain_attention
        )
        if retain_attention:
            maps.append(A)
    if not np.all(np.isfinite(out)):
        raise FloatingPointError("non-finite activation in encoder stack")
    return LatentSequence(tokens=out[0], attention_maps=maps)


def forecast_head(latent: LatentSequence, model: ForecastModel) -> np.ndarray:
    """Flatten the token sequence and apply the shared head."""
    flat = latent.tokens.reshape(-1)
    if flat.shape[0] != model.head_in:
        raise ValueError(
            f"flattened latent length {flat.shape[0]} does not match head input "
            f"width {model.head_in}"
        )
    p = model.params
    if model.cfg.head == "affine":
        return flat @ p["W_head"] + p["b_head"]
    return _gelu(flat @ p["W_head1"] + p["b_head1"]) @ p["W_head2"] + p["b_head2"]


@dataclass
class AttentionFlags:
    """Per-head high-attention token sets and the cross-head flag histogram."""

    per_head: list[tuple[int, int, np.ndarray]]  # (layer, head, flagged indices)
    histogram: np.ndarray  # flag count per token over all layers and heads

    def top_token(self) -> int:
        """Most-flagged token index (lowest index wins ties)."""
        return int(np.argmax(self.histogram))


def high_attention_tokens(latent: LatentSequence) -> AttentionFlags:
    """Tokens whose received attention exceeds mean + 2*std within one head.

    Received attention per token is the column mean of the row-stochastic
    attention map; the threshold is strict, so perfectly uniform maps flag
    nothing.
    """
    if latent.attention_maps is None:
        raise ValueError("attention maps were not retained; rerun with retention on")
    per_head = []
    hist = None
    for l, layer_maps in enumerate(latent.attention_maps):
        for h in range(layer_maps.shape[0]):
            col_mean = layer_maps[h].mean(axis=0)
            if hist is None:
                hist = np.zeros(col_mean.shape[0], dtype=np.int64)
            flagged = np.flatnonzero(col_mean > col_mean.mean() + 2.0 * col_mean.std())
            per_head.append((l, h, flagged))
            hist[flagged] += 1
    if hist is None:
        raise ValueError("no attention maps present (zero layers?)")
    return AttentionFlags(per_head=per_head, histogram=hist)


# ---------------------------------------------------------------------------
# checkpoints

_MAGIC = b"DCAST1\n"


def save_model(model: ForecastModel, path) -> None:
    """Write a bit-reproducible checkpoint: JSON header + raw float64 tensors."""
    header = {
        "format": "delaycast-checkpoint",
        "version": 1,
        "delay": asdict(model.delay),
        "encoder": asdict(model.cfg),
        "lookback": model.lookback,
        "seed": model.cfg.seed,
        "tensors": [[n, list(model.params[n].shape)] for n in model.params],
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(len(blob).to_bytes(8, "little"))
        fh.write(blob)
        for name in model.params:
            fh.write(np.ascontiguousarray(model.params[name], dtype="<f8").tobytes())


def load_model(path) -> ForecastModel:
    with open(path, "rb") as fh:
        magic = fh.read(len(_MAGIC))
        if magic != _MAGIC:
            raise ValueError(f"{path}: not a delaycast checkpoint")
        n = int.from_bytes(fh.read(8), "little")
        header = json.loads(fh.read(n).decode("utf-8"))
        model = ForecastModel(
            DelayConfig(**header["delay"]),
            EncoderConfig(**header["encoder"]),
            header["lookback"],
        )
        for name, shape in header["tensors"]:
            count = int(np.prod(shape)) if shape else 1
            raw = fh.read(count * 8)
            if len(raw) != count * 8:
                raise ValueError(f"{path}: truncated tensor {name}")
            model.params[name][...] = np.frombuffer(raw, dtype="<f8").reshape(shape)
    return model
