"""AdamW with decoupled weight decay and a warmup + cosine-decay schedule."""

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class TrainConfig:
    base_lr: float = 1e-5
    batch_size: int = 16
    epochs: int = 3
    weight_decay: float = 0.01
    warmup_frac: float = 0.05
    total_steps: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.base_lr <= 0.0:
            raise ValueError(f"base_lr must be > 0, got {self.base_lr}")
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch_size and epochs must be >= 1")
        if not 0.0 <= self.warmup_frac < 1.0:
            raise ValueError(f"warmup_frac must be in [0, 1), got {self.warmup_frac}")
        if self.weight_decay < 0.0:
            raise ValueError(f"weight_decay must be >= 0, got {self.weight_decay}")
        if self.total_steps is not None and self.total_steps < 0:
            raise ValueError(f"total_steps must be >= 0, got {self.total_steps}")


def resolve_total_steps(config: TrainConfig, n_examples: int) -> int:
    """Explicit total_steps wins; otherwise epochs over full batches."""
    if config.total_steps is not None:
        return config.total_steps
    per_epoch = n_examples // config.batch_size
    if per_epoch == 0:
        raise ValueError(
            f"dataset of {n_examples} examples is smaller than one batch of {config.batch_size}")
    return per_epoch * config.epochs


def cosine_schedule(step: int, total_steps: int, warmup_steps: int, base_lr: float) -> float:
    """Learning rate at `step` (0-indexed): linear ramp, then half-cosine to 0.

    The ramp reaches base_lr at step == warmup_steps; the cosine tail spans
    the remaining steps and lands at 0 when step == total_steps.
    """
    if total_steps < 1:
        raise ValueError(f"total_steps must be >= 1, got {total_steps}")
    if not 0 <= warmup_steps < total_steps:
        raise ValueError(f"warmup_steps must be in [0, total_steps), got {warmup_steps}")
    if step < 0:
        raise ValueError(f"step must be >= 0, got {step}")
    if step >= total_steps:
        return 0.0
    if warmup_steps > 0 and step < warmup_steps:
        return base_lr * step / warmup_steps
    progress = (step - warmup_steps) / (total_steps - warmup_steps)
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * progress))


class AdamW:
    """Decoupled weight decay: p *= (1 - lr*wd) before the Adam update.

    Moment buffers are keyed by parameter name and created lazily so the
    optimizer can be constructed before the model.
    """

    def __init__(self, weight_decay: float = 0.01, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        if not 0.0 <= beta1 < 1.0 or not 0.0 <= beta2 < 1.0:
            raise ValueError(f"betas must be in [0, 1), got {beta1}, {beta2}")
        self.weight_decay = weight_decay
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
             lr: float) -> None:
        if lr < 0.0:
            raise ValueError(f"lr must be >= 0, got {lr}")
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for name, p in params.items():
            g = grads[name]
            if name not in self.m:
                self.m[name] = np.zeros_like(p)
                self.v[name] = np.zeros_like(p)
            m, v = self.m[name], self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            if self.weight_decay:
                p *= 1.0 - lr * self.weight_decay
            p -= lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
