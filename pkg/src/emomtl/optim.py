"""Adam optimizer and the two learning-rate regimes.

Schedules:
  warmup_peak   - linear 0 -> peak over warmup_steps, then inverse-sqrt
                  decay peak * sqrt(warmup_steps / step).
  plateau_decay - constant lr multiplied by decay_factor (0.85) each epoch
                  the validation score fails to improve by more than 1e-5.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

IMPROVE_TOL = 1e-5


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(state: AdamState, params: dict, grads: dict, lr: float,
              grad_clip: float = 0.0) -> None:
    """Bias-corrected Adam update, in place on the parameter dict.

    A non-finite gradient aborts the step (no parameter is touched) with
    a diagnostic naming the offending tensor.
    """
    for name, g in grads.items():
        if g is None or not np.isfinite(g).all():
            raise FloatingPointError(f"non-finite gradient in tensor {name!r}")
    if grad_clip > 0:
        norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
        if norm > grad_clip:
            grads = {k: g * (grad_clip / norm) for k, g in grads.items()}
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    for name, p in params.items():
        g = grads[name]
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        state.m[name] = b1 * state.m[name] + (1 - b1) * g
        state.v[name] = b2 * state.v[name] + (1 - b2) * g * g
        m_hat = state.m[name] / (1 - b1 ** t)
        v_hat = state.v[name] / (1 - b2 ** t)
        p -= (lr * m_hat / (np.sqrt(v_hat) + state.eps)).astype(p.dtype)


@dataclass
class LrSchedule:
    kind: str = "warmup_peak"       # warmup_peak | plateau_decay
    peak_lr: float = 1e-3
    warmup_steps: int = 15000
    decay_factor: float = 0.85
    patience: int = 5               # early-stop patience, carried with the schedule

    def __post_init__(self):
        if self.kind not in ("warmup_peak", "plateau_decay"):
            raise ValueError(f"unknown schedule kind {self.kind!r}")
        if not 0 < self.decay_factor < 1:
            raise ValueError("decay_factor must be in (0,1)")


def lr_at(s: LrSchedule, step: int, validation_history=()) -> float:
    """Learning rate at a global step, given per-epoch validation scores so far."""
    if step < 0:
        raise ValueError("step must be >= 0")
    if s.kind == "warmup_peak":
        if step <= s.warmup_steps:
            return s.peak_lr * step / s.warmup_steps
        return s.peak_lr * math.sqrt(s.warmup_steps / step)
    # plateau_decay: count epochs whose score failed to beat the running best
    lr = s.peak_lr
    best = -math.inf
    for score in validation_history:
        if score > best + IMPROVE_TOL:
            best = score
        else:
            lr *= s.decay_factor
    return lr
