"""Training recipe: Adam with coupled L2 decay, elementwise gradient value
clipping, the one-cycle cosine learning-rate schedule, and class weights.

Ordering contract: gradients are clipped first, then the weight-decay term
is added inside the Adam step, so decay is never clipped away.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DegenerateClassError, GeometryError


class AdamState:
    """First/second moment buffers plus the shared step counter."""

    __slots__ = ("m", "v", "t", "beta1", "beta2", "eps", "weight_decay")

    def __init__(self, params, weight_decay=1e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]
        self.t = 0
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.weight_decay = float(weight_decay)


def clip_gradients(grads, clip_value=0.1):
    """Clamp every gradient element to [-clip_value, +clip_value], in place."""
    if clip_value <= 0:
        raise ConfigError("clip_value must be > 0")
    for g in grads:
        np.clip(g, -clip_value, clip_value, out=g)
    return grads


def adam_step(params, grads, state, lr):
    """One Adam update: g <- grad + weight_decay * param, moment updates,
    bias correction, and the parameter step. Mutates params and state."""
    if lr <= 0:
        raise ConfigError("learning rate must be > 0")
    if len(params) != len(grads) or len(params) != len(state.m):
        raise GeometryError("params, grads, and optimizer state must align")
    state.t += 1
    bc1 = 1.0 - state.beta1 ** state.t
    bc2 = 1.0 - state.beta2 ** state.t
    for p, grad, m, v in zip(params, grads, state.m, state.v):
        if grad.shape != p.data.shape:
            raise GeometryError(
                f"gradient shape {grad.shape} does not match parameter {p.data.shape}"
            )
        g = grad + state.weight_decay * p.data if state.weight_decay else grad
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)


@dataclass(frozen=True)
class OneCycleConfig:
    """Cosine one-cycle schedule: warm up from max_lr/div_factor to max_lr
    over floor(pct_start * total_steps) steps, then anneal to
    max_lr/(div_factor * final_div_factor) at the last step."""

    total_steps: int
    max_lr: float = 1e-3
    pct_start: float = 0.3
    div_factor: float = 25.0
    final_div_factor: float = 1e4

    def __post_init__(self):
        if not 1e-3 <= self.max_lr <= 1e-1:
            raise ConfigError(f"max_lr must lie in [1e-3, 1e-1], got {self.max_lr}")
        if not 0 < self.pct_start < 1:
            raise ConfigError(f"pct_start must lie in (0, 1), got {self.pct_start}")
        if self.total_steps < 2:
            raise ConfigError(f"total_steps must be >= 2, got {self.total_steps}")
        if self.div_factor <= 1 or self.final_div_factor <= 1:
            raise ConfigError("div_factor and final_div_factor must be > 1")
        warm = self.warmup_steps
        if warm < 1 or warm > self.total_steps - 2:
            raise ConfigError(
                f"total_steps {self.total_steps} is too small for pct_start "
                f"{self.pct_start}: no room for both schedule phases"
            )

    @property
    def warmup_steps(self):
        return int(math.floor(self.pct_start * self.total_steps))

    @property
    def final_lr(self):
        return self.max_lr / (self.div_factor * self.final_div_factor)


def _cos_interp(start, end, p):
    # clamp so the phase boundaries return start/end exactly, not within rounding
    if p <= 0.0:
        return start
    if p >= 1.0:
        return end
    return end + (start - end) * (1.0 + math.cos(math.pi * p)) / 2.0


def one_cycle_lr(step, cfg):
    """Learning rate at ``step`` (0-based): exact boundary values
    max_lr/div_factor at 0, max_lr at the warmup peak, final_lr at the end."""
    if not 0 <= step < cfg.total_steps:
        raise ConfigError(f"step {step} outside [0, {cfg.total_steps})")
    warm = cfg.warmup_steps
    if step <= warm:
        return _cos_interp(cfg.max_lr / cfg.div_factor, cfg.max_lr, step / warm)
    return _cos_interp(cfg.max_lr, cfg.final_lr, (step - warm) / (cfg.total_steps - 1 - warm))


def class_weights(counts):
    """Inverse-frequency weights w_i = N_total / (k * n_i)."""
    counts = [int(c) for c in counts]
    if any(c < 0 for c in counts):
        raise ConfigError(f"class counts must be >= 0, got {counts}")
    if any(c == 0 for c in counts):
        raise DegenerateClassError(f"every class needs at least one sample, got {counts}")
    total = sum(counts)
    k = len(counts)
    return np.array([total / (k * c) for c in counts], dtype=np.float64)
