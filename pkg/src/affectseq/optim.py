"""AdamW with decoupled weight decay.

Decay applies only to weight matrices and the learned mask token;
layer-norm scales/offsets and biases are excluded. The update is
theta -= lr * (m_hat / (sqrt(v_hat) + eps) + wd * theta).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from affectseq.errors import NumericError, ValidationError


@dataclass(frozen=True)
class AdamWConfig:
    lr: float = 1e-4
    weight_decay: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.lr <= 0.0:
            raise ValidationError(f"lr must be > 0, got {self.lr}")
        if not 0.0 <= self.beta1 < 1.0 or not 0.0 <= self.beta2 < 1.0:
            raise ValidationError(f"betas must be in [0, 1), got {self.beta1}, {self.beta2}")
        if self.eps <= 0.0:
            raise ValidationError(f"eps must be > 0, got {self.eps}")
        if self.weight_decay < 0.0:
            raise ValidationError(f"weight_decay must be >= 0, got {self.weight_decay}")

    def to_dict(self) -> dict:
        return {
            "lr": self.lr,
            "weight_decay": self.weight_decay,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "eps": self.eps,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AdamWConfig":
        return cls(**d)


@dataclass
class OptState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


def init_opt_state(params: dict[str, np.ndarray]) -> OptState:
    return OptState(
        m={k: np.zeros_like(p) for k, p in params.items()},
        v={k: np.zeros_like(p) for k, p in params.items()},
        t=0,
    )


def decays(name: str) -> bool:
    return name.endswith(".w") or name == "mask_token"


def step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: OptState,
    cfg: AdamWConfig,
) -> tuple[dict[str, np.ndarray], OptState]:
    """One AdamW update; mutates params and state in place and returns them."""
    if set(grads) != set(params):
        raise ValidationError("grads must cover exactly the parameter set")
    for name, g in grads.items():
        if g.shape != params[name].shape:
            raise ValidationError(f"gradient shape mismatch for '{name}'")
        if not np.isfinite(g).all():
            raise NumericError(f"non-finite gradient for tensor '{name}'")

    state.t += 1
    t = state.t
    bc1 = 1.0 - cfg.beta1**t
    bc2 = 1.0 - cfg.beta2**t
    for name, g in grads.items():
        p = params[name]
        m = state.m[name]
        v = state.v[name]
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * g * g
        update = (m / bc1) / (np.sqrt(v / bc2) + cfg.eps)
        if cfg.weight_decay != 0.0 and decays(name):
            update = update + cfg.weight_decay * p
        p -= cfg.lr * update
    return params, state
