"""Adam, He-uniform initialisation and step-decay learning rates."""
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidConfig, InvalidFanIn, ShapeMismatch


def he_uniform(shape, fan_in, rng_seed=None):
    """Samples from U(-L, L) with L = sqrt(6 / fan_in)."""
    if fan_in < 1:
        raise InvalidFanIn(f"fan_in must be >= 1, got {fan_in}")
    limit = math.sqrt(6.0 / fan_in)
    rng = np.random.default_rng(rng_seed)
    return rng.uniform(-limit, limit, size=shape)


@dataclass
class LrSchedule:
    initial: float
    halve_every: int

    def __post_init__(self):
        if not self.initial > 0:
            raise InvalidConfig(f"initial learning rate must be > 0, got {self.initial}")
        if self.halve_every < 1:
            raise InvalidConfig(f"halve_every must be >= 1, got {self.halve_every}")


LIVER_SCHEDULE = LrSchedule(1e-5, 15)
LESION_SCHEDULE = LrSchedule(3e-6, 10)


def lr_at(schedule, epoch):
    """Learning rate for the zero-based ``epoch``."""
    if epoch < 0:
        raise ValueError(f"epoch must be >= 0, got {epoch}")
    return schedule.initial * 0.5 ** (epoch // schedule.halve_every)


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params, state, lr):
    """One bias-corrected Adam update.

    ``params`` is an iterable of ``(name, Param)``; each ``Param.grad`` must
    already hold the full gradient (L2 terms included).
    """
    if not lr > 0:
        raise ValueError(f"learning rate must be > 0, got {lr}")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for name, p in params:
        g = p.grad
        if g.shape != p.value.shape:
            raise ShapeMismatch(f"gradient for {name} has shape {g.shape}, expected {p.value.shape}")
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.value)
            state.v[name] = np.zeros_like(p.value)
        v = state.v[name]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * (g * g)
        p.value -= (lr * (m / c1) / (np.sqrt(v / c2) + state.eps)).astype(p.value.dtype)
