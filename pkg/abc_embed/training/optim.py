"""AdamW with decoupled weight decay and a linear-warmup schedule."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Collection

import numpy as np

logger = logging.getLogger(__name__)

ADAM_EPS = 1e-8


@dataclass
class AdamState:
    """First and second moment estimates per parameter name."""

    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def lr_schedule(step: int, total_steps: int, lr: float, warmup_frac: float) -> float:
    """Learning rate for 0-based ``step``.

    Linear warmup lr·(step+1)/W over W = ceil(warmup_frac·total_steps)
    steps, constant ``lr`` afterwards.
    """
    warmup = math.ceil(round(warmup_frac * total_steps, 9))
    if warmup == 0 or step >= warmup:
        return lr
    return lr * (step + 1) / warmup


def adamw_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: AdamState,
    t: int,
    lr_t: float,
    betas: tuple[float, float],
    weight_decay: float,
    *,
    no_decay: Collection[str] = (),
    eps: float = ADAM_EPS,
) -> bool:
    """Update every parameter that has a gradient, in place in ``params``.

    θ ← θ − lr·wd·θ − lr·m̂ / (√v̂ + eps), with bias-corrected moments.
    Parameters absent from ``grads`` (frozen leaves) are left untouched.

    Args:
        params: Current values by name; updated arrays are written back
        grads: Gradients by name
        state: Moment estimates, updated in place
        t: 1-based step count for bias correction
        lr_t: Learning rate for this step
        betas: (β₁, β₂)
        weight_decay: Decoupled decay coefficient
        no_decay: Names excluded from weight decay
        eps: Denominator stabilizer

    Returns:
        False (and nothing updated) if any gradient is not finite
    """
    if t < 1:
        raise ValueError("t must be at least 1")
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            logger.warning("non-finite gradient for %s; step %d aborted", name, t)
            return False

    beta1, beta2 = betas
    for name, g in grads.items():
        theta = params[name]
        if g.shape != theta.shape:
            raise ValueError(f"gradient shape {g.shape} does not match {name} {theta.shape}")
        m = beta1 * state.m.get(name, np.zeros_like(theta)) + (1.0 - beta1) * g
        v = beta2 * state.v.get(name, np.zeros_like(theta)) + (1.0 - beta2) * g * g
        state.m[name], state.v[name] = m, v

        m_hat = m / (1.0 - beta1**t)
        v_hat = v / (1.0 - beta2**t)
        decay = 0.0 if name in no_decay else weight_decay
        params[name] = theta - lr_t * decay * theta - lr_t * m_hat / (np.sqrt(v_hat) + eps)
    return True
