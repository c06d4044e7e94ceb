"""Task losses: focal loss for EXPR/AU classification, CCC loss for VA.

All statistics are computed in float64 regardless of input dtype; gradients
are returned in the dtype of the incoming logits/predictions. Each loss
returns (loss, grad, n_valid); n_valid == 0 means no supervision was
available and the loss/gradient are exactly zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from affectseq.errors import InsufficientDataError, ValidationError

PT_CLAMP = 1e-12
CCC_DENOM_FLOOR = 1e-12


@dataclass(frozen=True)
class FocalConfig:
    alpha: float = 0.25
    gamma: float = 2.0

    def __post_init__(self):
        if not 0.0 < self.alpha <= 1.0:
            raise ValidationError(f"alpha must be in (0, 1], got {self.alpha}")
        if self.gamma < 0.0:
            raise ValidationError(f"gamma must be >= 0, got {self.gamma}")


class LossOutput(NamedTuple):
    loss: float
    grad: np.ndarray
    n_valid: int

    @property
    def no_supervision(self) -> bool:
        return self.n_valid == 0


class CccStats(NamedTuple):
    mean_x: float
    mean_y: float
    var_x: float
    var_y: float
    cov_xy: float
    ccc: float


def _softmax(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def _focal_elements(p_t: np.ndarray, alpha_t, gamma: float) -> np.ndarray:
    """-alpha_t * (1 - p_t)^gamma * log(max(p_t, clamp)), elementwise."""
    return -alpha_t * np.power(1.0 - p_t, gamma) * np.log(np.maximum(p_t, PT_CLAMP))


def _focal_dp_times(p_t: np.ndarray, alpha_t, gamma: float, extra_u_power: float):
    """dL/dp_t premultiplied by p_t * (1-p_t)^extra_u_power.

    extra_u_power is 0 for the softmax chain (which supplies p_t itself) and
    1 for the sigmoid chain (which supplies p_t * (1-p_t)). Written so every
    power of u = 1-p_t is non-negative for gamma >= 0, with p_t == 1 and the
    log clamp handled explicitly.
    """
    u = 1.0 - p_t
    log_pt = np.log(np.maximum(p_t, PT_CLAMP))
    if gamma == 0.0:
        term1 = np.zeros_like(p_t)
    else:
        safe_u = np.where(u > 0.0, u, 1.0)
        term1 = gamma * np.power(safe_u, gamma - 1.0 + extra_u_power) * p_t * log_pt
        term1 = np.where(u > 0.0, term1, 0.0)
    term2 = np.where(p_t >= PT_CLAMP, np.power(u, gamma + extra_u_power), 0.0)
    return alpha_t * (term1 - term2)


def focal_multiclass(
    logits: np.ndarray,
    targets: np.ndarray,
    validity: np.ndarray,
    cfg: FocalConfig,
) -> LossOutput:
    """Softmax focal loss, mean over valid frames.

    grad is dL/dlogits with zero rows at invalid frames.
    """
    logits = np.asarray(logits)
    targets = np.asarray(targets)
    validity = np.asarray(validity, dtype=bool)
    if logits.ndim != 2:
        raise ValidationError(f"logits must be 2-d, got shape {logits.shape}")
    n, c = logits.shape
    if targets.shape != (n,) or validity.shape != (n,):
        raise ValidationError("targets/validity must be 1-d and aligned with logits")
    n_valid = int(validity.sum())
    if n_valid == 0:
        return LossOutput(0.0, np.zeros_like(logits), 0)
    if targets[validity].min() < 0 or targets[validity].max() >= c:
        raise ValidationError(f"target class out of range for {c} classes")

    z = logits[validity].astype(np.float64)
    t = targets[validity].astype(np.int64)
    p = _softmax(z)
    rows = np.arange(z.shape[0])
    p_t = p[rows, t]
    loss = float(_focal_elements(p_t, cfg.alpha, cfg.gamma).sum() / n_valid)

    # softmax jacobian: dp_t/dz_j = p_t * (delta_tj - p_j), so
    # dL/dz_j = (dL/dp_t * p_t) * (delta_tj - p_j)
    delta = np.zeros_like(p)
    delta[rows, t] = 1.0
    coeff = _focal_dp_times(p_t, cfg.alpha, cfg.gamma, extra_u_power=0.0)
    dz = coeff[:, None] * (delta - p) / n_valid

    grad = np.zeros(logits.shape, dtype=np.float64)
    grad[validity] = dz
    return LossOutput(loss, grad.astype(logits.dtype, copy=False), n_valid)


def focal_multilabel(
    logits: np.ndarray,
    targets: np.ndarray,
    validity: np.ndarray,
    cfg: FocalConfig,
) -> LossOutput:
    """Per-unit sigmoid focal loss, mean over valid (frame, unit) pairs.

    Positive targets are weighted by alpha, negatives by 1 - alpha.
    validity may be per frame (n,) or per pair (n, units).
    """
    logits = np.asarray(logits)
    targets = np.asarray(targets)
    validity = np.asarray(validity, dtype=bool)
    if logits.ndim != 2:
        raise ValidationError(f"logits must be 2-d, got shape {logits.shape}")
    if targets.shape != logits.shape:
        raise ValidationError("targets must match logits shape")
    if validity.shape == (logits.shape[0],):
        validity = np.broadcast_to(validity[:, None], logits.shape)
    elif validity.shape != logits.shape:
        raise ValidationError("validity must be per frame or per (frame, unit)")
    n_valid = int(validity.sum())
    if n_valid == 0:
        return LossOutput(0.0, np.zeros_like(logits), 0)
    if not np.isin(targets[validity], (0, 1)).all():
        raise ValidationError("multilabel targets must be 0 or 1")

    z = logits.astype(np.float64)
    y = targets.astype(np.float64)
    p = 1.0 / (1.0 + np.exp(-z))
    p_t = np.where(y == 1.0, p, 1.0 - p)
    alpha_t = np.where(y == 1.0, cfg.alpha, 1.0 - cfg.alpha)
    loss_el = _focal_elements(p_t, alpha_t, cfg.gamma)
    loss = float(loss_el[validity].sum() / n_valid)

    # sigmoid chain: dp_t/dz = sign * p(1-p), and p(1-p) == p_t(1-p_t)
    # for either target value
    sign = np.where(y == 1.0, 1.0, -1.0)
    coeff = _focal_dp_times(p_t, alpha_t, cfg.gamma, extra_u_power=1.0)
    dz = np.where(validity, sign * coeff / n_valid, 0.0)
    return LossOutput(loss, dz.astype(logits.dtype, copy=False), n_valid)


def cross_entropy_multiclass(
    logits: np.ndarray, targets: np.ndarray, validity: np.ndarray
) -> LossOutput:
    """Plain softmax cross-entropy; the alpha=1, gamma=0 focal reduction."""
    return focal_multiclass(logits, targets, validity, FocalConfig(alpha=1.0, gamma=0.0))


def ccc_stats(x: np.ndarray, y: np.ndarray, compat: bool = False) -> CccStats:
    """Population moments and the concordance correlation coefficient.

    compat=True evaluates the numerator as 2*rho*cov instead of 2*cov;
    it exists only for comparison runs and is not the default.
    """
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if x.shape != y.shape:
        raise ValidationError(f"length mismatch: {x.shape} vs {y.shape}")
    n = x.size
    if n < 2:
        raise InsufficientDataError(f"ccc needs >= 2 valid frames, got {n}")
    mean_x = float(x.mean())
    mean_y = float(y.mean())
    dx = x - mean_x
    dy = y - mean_y
    var_x = float((dx * dx).mean())
    var_y = float((dy * dy).mean())
    cov = float((dx * dy).mean())
    denom = max(var_x + var_y + (mean_x - mean_y) ** 2, CCC_DENOM_FLOOR)
    if compat:
        sd = max(math.sqrt(var_x) * math.sqrt(var_y), CCC_DENOM_FLOOR)
        num = 2.0 * cov * cov / sd
    else:
        num = 2.0 * cov
    return CccStats(mean_x, mean_y, var_x, var_y, cov, num / denom)


def ccc_loss(x: np.ndarray, y: np.ndarray, compat: bool = False) -> LossOutput:
    """loss = 1 - ccc(x, y) with its analytic gradient w.r.t. x."""
    xa = np.asarray(x)
    stats = ccc_stats(xa, y, compat=compat)
    xf = np.asarray(xa, dtype=np.float64).reshape(-1)
    yf = np.asarray(y, dtype=np.float64).reshape(-1)
    n = xf.size
    dx = xf - stats.mean_x
    dy = yf - stats.mean_y
    denom = max(stats.var_x + stats.var_y + (stats.mean_x - stats.mean_y) ** 2, CCC_DENOM_FLOOR)
    floored = denom == CCC_DENOM_FLOOR

    if compat:
        sd = max(math.sqrt(stats.var_x) * math.sqrt(stats.var_y), CCC_DENOM_FLOOR)
        num = 2.0 * stats.cov_xy * stats.cov_xy / sd
        if sd > CCC_DENOM_FLOOR:
            d_cov = dy / n
            d_sd = math.sqrt(stats.var_y) / max(math.sqrt(stats.var_x), CCC_DENOM_FLOOR) * dx / n
            d_num = (4.0 * stats.cov_xy * d_cov * sd - 2.0 * stats.cov_xy * stats.cov_xy * d_sd) / (sd * sd)
        else:
            d_num = np.zeros_like(xf)
    else:
        num = 2.0 * stats.cov_xy
        d_num = 2.0 * dy / n
    d_denom = np.zeros_like(xf) if floored else (2.0 * dx + 2.0 * (stats.mean_x - stats.mean_y)) / n
    d_ccc = (d_num * denom - num * d_denom) / (denom * denom)
    grad = (-d_ccc).reshape(np.asarray(x).shape).astype(xa.dtype, copy=False)
    return LossOutput(1.0 - stats.ccc, grad, n)


def va_loss(
    preds: np.ndarray,
    targets: np.ndarray,
    validity: np.ndarray,
    compat: bool = False,
) -> LossOutput:
    """Mean of the valence and arousal CCC losses over valid frames.

    grad rows at invalid frames are zero.
    """
    preds = np.asarray(preds)
    targets = np.asarray(targets)
    validity = np.asarray(validity, dtype=bool)
    if preds.ndim != 2 or preds.shape[1] != 2 or preds.shape != targets.shape:
        raise ValidationError("VA preds/targets must both be (n, 2)")
    if validity.shape != (preds.shape[0],):
        raise ValidationError("validity must be (n,)")
    n_valid = int(validity.sum())
    if n_valid < 2:
        raise InsufficientDataError(f"VA loss needs >= 2 valid frames, got {n_valid}")
    grad = np.zeros(preds.shape, dtype=np.float64)
    total = 0.0
    for d in range(2):
        out = ccc_loss(preds[validity, d], targets[validity, d], compat=compat)
        total += out.loss
        grad[validity, d] = 0.5 * np.asarray(out.grad, dtype=np.float64)
    return LossOutput(total / 2.0, grad.astype(preds.dtype, copy=False), n_valid)
