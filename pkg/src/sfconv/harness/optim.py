"""Adam with L2 weight decay, and the step learning-rate schedule."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

BETA1 = 0.9
BETA2 = 0.999
EPS = 1e-8


@dataclass
class AdamState:
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict, grads: dict, state: AdamState, lr: float, weight_decay: float = 0.0,
              decay_filter=lambda name: not name.endswith("bias")):
    """One Adam update.  Returns ``(new_params, new_state)``; inputs are left untouched.

    Weight decay is classic L2: ``weight_decay * param`` is added to the
    gradient of every parameter accepted by ``decay_filter``.
    """
    t = state.step + 1
    bc1 = 1.0 - BETA1 ** t
    bc2 = 1.0 - BETA2 ** t
    new_params, m_out, v_out = {}, {}, {}
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            raise KeyError(f"no gradient for parameter {name}")
        if g.shape != p.shape:
            raise ValueError(f"{name}: gradient shape {g.shape} != parameter shape {p.shape}")
        if weight_decay and decay_filter(name):
            g = g + weight_decay * p
        m = BETA1 * state.m.get(name, 0.0) + (1.0 - BETA1) * g
        v = BETA2 * state.v.get(name, 0.0) + (1.0 - BETA2) * (g * g)
        new_params[name] = p - lr * (m / bc1) / (np.sqrt(v / bc2) + EPS)
        m_out[name], v_out[name] = m, v
    return new_params, AdamState(step=t, m=m_out, v=v_out)


def lr_schedule(epoch: int, base_lr: float, step: int, gamma: float) -> float:
    """``base_lr * gamma ** (epoch // step)``."""
    if step < 1:
        raise ValueError("scheduler step must be >= 1")
    return base_lr * gamma ** (epoch // step)
