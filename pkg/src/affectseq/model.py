"""Transformer encoder classifier with hand-written reverse-mode gradients.

The network maps a (T, dim_in) feature window to per-frame predictions:
input projection + sinusoidal positional encoding, a stack of pre-layer-norm
encoder blocks (multi-head self-attention + GELU feed-forward, residual),
and a per-frame linear head. VA outputs pass through tanh.

forward() in train mode records every intermediate needed by backward();
backward() returns an analytic gradient for every parameter tensor,
including the learned mask token when a mask plan is supplied.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np
from scipy.special import erf

from affectseq.errors import NumericError, ValidationError

TASK_HEAD_OUT = {"VA": 2, "EXPR": 8, "AU": 12}

LN_EPS = 1e-5
_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


@dataclass(frozen=True)
class ModelConfig:
    task: str = "EXPR"
    dim_in: int = 768
    d_model: int = 256
    n_heads: int = 8
    n_layers: int = 6
    d_ff: int = 0  # 0 means 4 * d_model
    dropout: float = 0.2
    t_max: int = 100
    use_pe: bool = True  # test hook: False zeroes the positional encoding

    def __post_init__(self):
        if self.task not in TASK_HEAD_OUT:
            raise ValidationError(f"unknown task '{self.task}'")
        if self.d_model % self.n_heads != 0:
            raise ValidationError(
                f"d_model ({self.d_model}) must be divisible by n_heads ({self.n_heads})"
            )
        if not 0.0 <= self.dropout < 1.0:
            raise ValidationError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.d_ff == 0:
            object.__setattr__(self, "d_ff", 4 * self.d_model)

    @property
    def head_out(self) -> int:
        return TASK_HEAD_OUT[self.task]

    @property
    def d_head(self) -> int:
        return self.d_model // self.n_heads

    def to_dict(self) -> dict:
        return {
            "task": self.task,
            "dim_in": self.dim_in,
            "d_model": self.d_model,
            "n_heads": self.n_heads,
            "n_layers": self.n_layers,
            "d_ff": self.d_ff,
            "dropout": self.dropout,
            "t_max": self.t_max,
            "use_pe": self.use_pe,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


@dataclass
class ForwardTrace:
    """Intermediates from a train-mode forward, keyed per layer."""

    features: np.ndarray
    emb_pre_drop: np.ndarray
    emb_drop: np.ndarray | None
    layers: list = field(default_factory=list)
    head_in: np.ndarray | None = None
    yhat: np.ndarray | None = None
    mask_plan: np.ndarray | None = None
    replacement: str | None = None


def param_names(cfg: ModelConfig) -> list[str]:
    names = ["in_proj.w", "in_proj.b", "mask_token"]
    for i in range(cfg.n_layers):
        p = f"layers.{i}"
        names += [f"{p}.ln1.g", f"{p}.ln1.b"]
        for proj in ("q", "k", "v", "o"):
            names += [f"{p}.attn.{proj}.w", f"{p}.attn.{proj}.b"]
        names += [f"{p}.ln2.g", f"{p}.ln2.b"]
        names += [f"{p}.ff.lin1.w", f"{p}.ff.lin1.b", f"{p}.ff.lin2.w", f"{p}.ff.lin2.b"]
    names += ["head.w", "head.b"]
    return names


def init_params(
    cfg: ModelConfig, rng: np.random.Generator, dtype=np.float32
) -> dict[str, np.ndarray]:
    """Scaled-normal weights, zero biases, unit layer-norm scales."""
    D, F = cfg.d_model, cfg.d_ff

    def normal(shape, scale):
        return (rng.standard_normal(shape) * scale).astype(dtype)

    params: dict[str, np.ndarray] = {}
    params["in_proj.w"] = normal((cfg.dim_in, D), 1.0 / math.sqrt(cfg.dim_in))
    params["in_proj.b"] = np.zeros(D, dtype=dtype)
    params["mask_token"] = normal((cfg.dim_in,), 0.02)
    for i in range(cfg.n_layers):
        p = f"layers.{i}"
        params[f"{p}.ln1.g"] = np.ones(D, dtype=dtype)
        params[f"{p}.ln1.b"] = np.zeros(D, dtype=dtype)
        for proj in ("q", "k", "v", "o"):
            params[f"{p}.attn.{proj}.w"] = normal((D, D), 1.0 / math.sqrt(D))
            params[f"{p}.attn.{proj}.b"] = np.zeros(D, dtype=dtype)
        params[f"{p}.ln2.g"] = np.ones(D, dtype=dtype)
        params[f"{p}.ln2.b"] = np.zeros(D, dtype=dtype)
        params[f"{p}.ff.lin1.w"] = normal((D, F), 1.0 / math.sqrt(D))
        params[f"{p}.ff.lin1.b"] = np.zeros(F, dtype=dtype)
        params[f"{p}.ff.lin2.w"] = normal((F, D), 1.0 / math.sqrt(F))
        params[f"{p}.ff.lin2.b"] = np.zeros(D, dtype=dtype)
    params["head.w"] = normal((D, cfg.head_out), 1.0 / math.sqrt(D))
    params["head.b"] = np.zeros(cfg.head_out, dtype=dtype)
    return params


def zeros_like_params(params: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    return {k: np.zeros_like(v) for k, v in params.items()}


def positional_encoding(T: int, d_model: int, dtype=np.float64) -> np.ndarray:
    """Fixed sinusoidal table: sin at even columns, cos at odd columns."""
    pos = np.arange(T, dtype=np.float64)[:, None]
    i2 = np.arange(0, d_model, 2, dtype=np.float64)[None, :]
    angles = pos / np.power(10000.0, i2 / d_model)
    pe = np.empty((T, d_model), dtype=np.float64)
    pe[:, 0::2] = np.sin(angles)
    pe[:, 1::2] = np.cos(angles[:, : d_model // 2])
    return pe.astype(dtype)


def _softmax_rows(s: np.ndarray) -> np.ndarray:
    shifted = s - s.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def attention(q: np.ndarray, k: np.ndarray, v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Scaled dot-product attention for one head; returns (output, probs).

    Softmax is computed with row-max subtraction; each probability row sums
    to 1. Accepts (T, d_head) or batched (..., T, d_head) inputs.
    """
    if q.shape != k.shape or k.shape[:-2] + k.shape[-1:] != v.shape[:-2] + v.shape[-1:]:
        raise ValidationError(f"attention shape mismatch: {q.shape}, {k.shape}, {v.shape}")
    d_head = q.shape[-1]
    scores = q @ np.swapaxes(k, -1, -2) / math.sqrt(d_head)
    probs = _softmax_rows(scores)
    return probs @ v, probs


def _gelu(x: np.ndarray) -> np.ndarray:
    return 0.5 * x * (1.0 + erf(x * _INV_SQRT2))


def _gelu_grad(x: np.ndarray) -> np.ndarray:
    phi = np.exp(-0.5 * x * x) * _INV_SQRT_2PI
    return 0.5 * (1.0 + erf(x * _INV_SQRT2)) + x * phi


def _layer_norm(x: np.ndarray, g: np.ndarray, b: np.ndarray):
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + LN_EPS)
    xhat = (x - mu) * inv_std
    return xhat * g + b, xhat, inv_std


def _layer_norm_backward(dy, xhat, inv_std, g):
    dg = (dy * xhat).sum(axis=0)
    db = dy.sum(axis=0)
    dxhat = dy * g
    m1 = dxhat.mean(axis=-1, keepdims=True)
    m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
    dx = inv_std * (dxhat - m1 - xhat * m2)
    return dx, dg, db


def _split_heads(x: np.ndarray, n_heads: int) -> np.ndarray:
    T, D = x.shape
    return x.reshape(T, n_heads, D // n_heads).transpose(1, 0, 2)


def _merge_heads(x: np.ndarray) -> np.ndarray:
    H, T, dh = x.shape
    return x.transpose(1, 0, 2).reshape(T, H * dh)


def _dropout_mask(shape, rate: float, rng: np.random.Generator, dtype) -> np.ndarray:
    keep = (rng.random(shape) >= rate).astype(dtype)
    return keep / dtype.type(1.0 - rate)


def _check_finite(x: np.ndarray, where: str) -> None:
    if not np.isfinite(x).all():
        raise NumericError(f"non-finite values produced in {where}")


def forward(
    params: dict[str, np.ndarray],
    cfg: ModelConfig,
    masked_features: np.ndarray,
    mode: str = "eval",
    dropout_rng: np.random.Generator | None = None,
    mask_plan: np.ndarray | None = None,
    replacement: str | None = None,
) -> tuple[np.ndarray, ForwardTrace | None]:
    """Run the encoder over one clip of (already masked) features.

    In eval mode dropout is the identity and no trace is returned. In train
    mode inverted dropout is applied and the trace carries everything
    backward() needs, including the mask plan so the learned token can
    receive gradient.
    """
    if mode not in ("train", "eval"):
        raise ValidationError(f"mode must be 'train' or 'eval', got '{mode}'")
    x = np.asarray(masked_features)
    if x.ndim != 2 or x.shape[1] != cfg.dim_in:
        raise ValidationError(f"features must be (T, {cfg.dim_in}), got {x.shape}")
    T = x.shape[0]
    if T > cfg.t_max:
        raise ValidationError(f"clip length {T} exceeds t_max {cfg.t_max}")
    dtype = params["in_proj.w"].dtype
    x = x.astype(dtype, copy=False)
    _check_finite(x, "input features")

    train = mode == "train"
    use_drop = train and cfg.dropout > 0.0
    if use_drop and dropout_rng is None:
        raise ValidationError("train-mode forward with dropout > 0 needs a dropout rng")
    rate = cfg.dropout

    emb = x @ params["in_proj.w"] + params["in_proj.b"]
    if cfg.use_pe:
        emb = emb + positional_encoding(T, cfg.d_model, dtype=dtype)
    m_emb = None
    emb_pre_drop = emb
    if use_drop:
        m_emb = _dropout_mask(emb.shape, rate, dropout_rng, np.dtype(dtype))
        emb = emb * m_emb
    _check_finite(emb, "input embedding")

    trace = None
    if train:
        trace = ForwardTrace(
            features=x,
            emb_pre_drop=emb_pre_drop,
            emb_drop=m_emb,
            mask_plan=None if mask_plan is None else np.asarray(mask_plan, dtype=bool),
            replacement=replacement,
        )

    h = emb
    scale = 1.0 / math.sqrt(cfg.d_head)
    for i in range(cfg.n_layers):
        p = f"layers.{i}"
        u, xhat1, inv1 = _layer_norm(h, params[f"{p}.ln1.g"], params[f"{p}.ln1.b"])
        q = _split_heads(u @ params[f"{p}.attn.q.w"] + params[f"{p}.attn.q.b"], cfg.n_heads)
        k = _split_heads(u @ params[f"{p}.attn.k.w"] + params[f"{p}.attn.k.b"], cfg.n_heads)
        v = _split_heads(u @ params[f"{p}.attn.v.w"] + params[f"{p}.attn.v.b"], cfg.n_heads)
        probs = _softmax_rows(q @ k.transpose(0, 2, 1) * scale)
        o = _merge_heads(probs @ v)
        attn_out = o @ params[f"{p}.attn.o.w"] + params[f"{p}.attn.o.b"]
        m_attn = None
        if use_drop:
            m_attn = _dropout_mask(attn_out.shape, rate, dropout_rng, np.dtype(dtype))
            attn_out = attn_out * m_attn
        a = h + attn_out

        w, xhat2, inv2 = _layer_norm(a, params[f"{p}.ln2.g"], params[f"{p}.ln2.b"])
        f1 = w @ params[f"{p}.ff.lin1.w"] + params[f"{p}.ff.lin1.b"]
        act = _gelu(f1)
        m_ff1 = None
        if use_drop:
            m_ff1 = _dropout_mask(act.shape, rate, dropout_rng, np.dtype(dtype))
            act = act * m_ff1
        f2 = act @ params[f"{p}.ff.lin2.w"] + params[f"{p}.ff.lin2.b"]
        m_ff2 = None
        if use_drop:
            m_ff2 = _dropout_mask(f2.shape, rate, dropout_rng, np.dtype(dtype))
            f2 = f2 * m_ff2
        h_next = a + f2
        _check_finite(h_next, f"encoder layer {i}")

        if train:
            trace.layers.append(
                {
                    "h_in": h,
                    "xhat1": xhat1,
                    "inv1": inv1,
                    "u": u,
                    "q": q,
                    "k": k,
                    "v": v,
                    "probs": probs,
                    "o": o,
                    "m_attn": m_attn,
                    "a": a,
                    "xhat2": xhat2,
                    "inv2": inv2,
                    "w": w,
                    "f1": f1,
                    "act_drop": act,
                    "m_ff1": m_ff1,
                    "m_ff2": m_ff2,
                }
            )
        h = h_next

    logits = h @ params["head.w"] + params["head.b"]
    if cfg.task == "VA":
        yhat = np.tanh(logits)
    else:
        yhat = logits
    _check_finite(yhat, "task head")

    if train:
        trace.head_in = h
        trace.yhat = yhat
    return yhat, trace


def backward(
    trace: ForwardTrace,
    params: dict[str, np.ndarray],
    cfg: ModelConfig,
    dL_dy: np.ndarray,
) -> dict[str, np.ndarray]:
    """Analytic gradients for every parameter given dL/d(yhat).

    For VA the incoming gradient is with respect to the tanh output; for
    EXPR/AU it is with respect to the raw logits, matching forward().
    """
    dL_dy = np.asarray(dL_dy)
    if dL_dy.shape != trace.yhat.shape:
        raise ValidationError(
            f"dL_dy shape {dL_dy.shape} does not match predictions {trace.yhat.shape}"
        )
    dtype = params["in_proj.w"].dtype
    dL_dy = dL_dy.astype(dtype, copy=False)
    grads = zeros_like_params(params)
    scale = 1.0 / math.sqrt(cfg.d_head)

    if cfg.task == "VA":
        dlogits = dL_dy * (1.0 - trace.yhat * trace.yhat)
    else:
        dlogits = dL_dy
    grads["head.b"] = dlogits.sum(axis=0)
    grads["head.w"] = trace.head_in.T @ dlogits
    dh = dlogits @ params["head.w"].T

    for i in reversed(range(cfg.n_layers)):
        p = f"layers.{i}"
        t = trace.layers[i]

        # feed-forward sub-block: h_out = a + drop2(lin2(drop1(gelu(lin1(w)))))
        d_f2 = dh if t["m_ff2"] is None else dh * t["m_ff2"]
        grads[f"{p}.ff.lin2.b"] = d_f2.sum(axis=0)
        grads[f"{p}.ff.lin2.w"] = t["act_drop"].T @ d_f2
        d_act = d_f2 @ params[f"{p}.ff.lin2.w"].T
        if t["m_ff1"] is not None:
            d_act = d_act * t["m_ff1"]
        d_f1 = d_act * _gelu_grad(t["f1"])
        grads[f"{p}.ff.lin1.b"] = d_f1.sum(axis=0)
        grads[f"{p}.ff.lin1.w"] = t["w"].T @ d_f1
        d_w = d_f1 @ params[f"{p}.ff.lin1.w"].T
        d_a_ln, dg2, db2 = _layer_norm_backward(d_w, t["xhat2"], t["inv2"], params[f"{p}.ln2.g"])
        grads[f"{p}.ln2.g"] = dg2
        grads[f"{p}.ln2.b"] = db2
        d_a = dh + d_a_ln

        # attention sub-block: a = h_in + drop(o @ Wo + bo)
        d_attn = d_a if t["m_attn"] is None else d_a * t["m_attn"]
        grads[f"{p}.attn.o.b"] = d_attn.sum(axis=0)
        grads[f"{p}.attn.o.w"] = t["o"].T @ d_attn
        d_o = _split_heads(d_attn @ params[f"{p}.attn.o.w"].T, cfg.n_heads)
        d_probs = d_o @ t["v"].transpose(0, 2, 1)
        d_v = t["probs"].transpose(0, 2, 1) @ d_o
        tmp = (d_probs * t["probs"]).sum(axis=-1, keepdims=True)
        d_scores = t["probs"] * (d_probs - tmp)
        d_q = d_scores @ t["k"] * scale
        d_k = d_scores.transpose(0, 2, 1) @ t["q"] * scale
        d_u = np.zeros_like(t["u"])
        for proj, d_h_split in (("q", d_q), ("k", d_k), ("v", d_v)):
            d_flat = _merge_heads(d_h_split)
            grads[f"{p}.attn.{proj}.b"] = d_flat.sum(axis=0)
            grads[f"{p}.attn.{proj}.w"] = t["u"].T @ d_flat
            d_u += d_flat @ params[f"{p}.attn.{proj}.w"].T
        d_h_ln, dg1, db1 = _layer_norm_backward(d_u, t["xhat1"], t["inv1"], params[f"{p}.ln1.g"])
        grads[f"{p}.ln1.g"] = dg1
        grads[f"{p}.ln1.b"] = db1
        dh = d_a + d_h_ln

    d_emb = dh if trace.emb_drop is None else dh * trace.emb_drop
    grads["in_proj.b"] = d_emb.sum(axis=0)
    grads["in_proj.w"] = trace.features.T @ d_emb
    d_x = d_emb @ params["in_proj.w"].T
    if trace.mask_plan is not None and trace.replacement == "learned_token":
        grads["mask_token"] = d_x[trace.mask_plan].sum(axis=0)
    return grads
