"""
Optimizer Module
AdamW with decoupled weight decay and a cosine-annealed learning rate
"""

import math
from dataclasses import dataclass
from typing import Dict

import numpy as np

from config.macmd_config import ADAM_BETA1, ADAM_BETA2, ADAM_EPSILON, WEIGHT_DECAY
from src.numerics.params import ParamStore
from src.utils.errors import AutogradError, ConfigError


def cosine_lr(step: int, total_steps: int, lr_max: float, lr_min: float) -> float:
    """
    Cosine annealing from lr_max at step 0 to lr_min at step total_steps - 1
    """
    if step < 0:
        raise ConfigError(f"schedule step must be non-negative, got {step}")
    if total_steps < 1:
        raise ConfigError(f"schedule needs at least one step, got {total_steps}")
    progress = min(step, total_steps - 1) / max(total_steps - 1, 1)
    return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + math.cos(math.pi * progress))


@dataclass
class AdamState:
    first: np.ndarray
    second: np.ndarray


def adamw_step(store: ParamStore, moments: Dict[str, AdamState], t: int, lr: float,
               weight_decay: float = WEIGHT_DECAY, beta1: float = ADAM_BETA1,
               beta2: float = ADAM_BETA2, eps: float = ADAM_EPSILON):
    """
    One AdamW update of every parameter in the store

    p -= lr * wd * p, then p -= lr * m_hat / (sqrt(v_hat) + eps).

    Args:
        store: Parameters with populated gradients
        moments: Per-parameter moment buffers (created on first use)
        t: 1-based step counter for bias correction
        lr: Learning rate for this step
    """
    if t < 1:
        raise ConfigError(f"AdamW step counter must be >= 1, got {t}")
    correction1 = 1.0 - beta1 ** t
    correction2 = 1.0 - beta2 ** t

    for param in store:
        p = param.value
        if p.grad is None:
            raise AutogradError(f"parameter '{param.name}' has no gradient; run backward first")
        state = moments.get(param.name)
        if state is None:
            state = AdamState(np.zeros_like(p.data), np.zeros_like(p.data))
            moments[param.name] = state

        g = p.grad.astype(p.data.dtype, copy=False)
        state.first = beta1 * state.first + (1.0 - beta1) * g
        state.second = beta2 * state.second + (1.0 - beta2) * g * g

        if weight_decay:
            p.data -= (lr * weight_decay) * p.data
        m_hat = state.first / correction1
        v_hat = state.second / correction2
        p.data -= lr * m_hat / (np.sqrt(v_hat) + eps)


class AdamW:
    """Stateful wrapper keeping the step counter and moment buffers"""

    def __init__(self, store: ParamStore, weight_decay: float = WEIGHT_DECAY,
                 beta1: float = ADAM_BETA1, beta2: float = ADAM_BETA2, eps: float = ADAM_EPSILON):
        self.store = store
        self.weight_decay = weight_decay
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.moments: Dict[str, AdamState] = {}

    def step(self, lr: float):
        self.t += 1
        adamw_step(self.store, self.moments, self.t, lr, self.weight_decay,
                   self.beta1, self.beta2, self.eps)

    def zero_grad(self):
        self.store.zero_grad()
