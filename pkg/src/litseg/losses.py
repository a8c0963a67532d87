"""Scalar segmentation losses on probability maps.

Every loss returns ``(value, grad)`` where ``grad`` has the shape and dtype
of ``pred``. Soft counts are pooled over the whole batch and accumulated in
float64.
"""
from dataclasses import dataclass

import numpy as np

from .errors import InvalidConfig, ShapeMismatch

BCE_CLAMP = 1e-7


@dataclass
class TverskyParams:
    alpha: float = 0.3  # false-negative weight
    beta: float = 0.7  # false-positive weight
    smooth: float = 1.0

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0 or self.alpha + self.beta <= 0:
            raise InvalidConfig(f"need alpha, beta >= 0 and alpha + beta > 0, got {self}")
        if self.smooth <= 0:
            raise InvalidConfig(f"smooth must be > 0, got {self.smooth}")


def _check(pred, target):
    if pred.shape != target.shape:
        raise ShapeMismatch(f"pred {pred.shape} and target {target.shape} differ")


def soft_counts(pred, target):
    """Pooled soft (TP, FN, FP)."""
    p = np.asarray(pred, dtype=np.float64)
    t = np.asarray(target, dtype=np.float64)
    tp = float(np.sum(p * t))
    return tp, float(np.sum(t)) - tp, float(np.sum(p)) - tp


def bce_loss(pred, target):
    """Mean binary cross-entropy with predictions clamped to [1e-7, 1 - 1e-7]."""
    _check(pred, target)
    p = np.asarray(pred, dtype=np.float64)
    t = np.asarray(target, dtype=np.float64)
    pc = np.clip(p, BCE_CLAMP, 1 - BCE_CLAMP)
    n = p.size
    value = -np.sum(t * np.log(pc) + (1 - t) * np.log1p(-pc)) / n
    grad = (-(t / pc) + (1 - t) / (1 - pc)) / n
    grad[(p < BCE_CLAMP) | (p > 1 - BCE_CLAMP)] = 0.0
    return float(value), grad.astype(np.asarray(pred).dtype)


def tversky_index(pred, target, params=None, smooth=None):
    params = params or TverskyParams()
    s = params.smooth if smooth is None else smooth
    tp, fn, fp = soft_counts(pred, target)
    return (tp + s) / (tp + params.alpha * fn + params.beta * fp + s)


def tversky_loss(pred, target, params=None):
    """Negated Tversky index T = (TP + s) / (TP + alpha*FN + beta*FP + s)."""
    _check(pred, target)
    params = params or TverskyParams()
    a, b, s = params.alpha, params.beta, params.smooth
    t = np.asarray(target, dtype=np.float64)
    tp, fn, fp = soft_counts(pred, target)
    num = tp + s
    den = tp + a * fn + b * fp + s
    # dTP/dp = t, dFN/dp = -t, dFP/dp = 1 - t
    dden = t * (1 - a - b) + b
    grad_t = (t * den - num * dden) / den ** 2
    return -num / den, (-grad_t).astype(np.asarray(pred).dtype)


def dice_loss(pred, target, smooth=1.0):
    """Negated soft Dice (2TP + s) / (2TP + FP + FN + s)."""
    _check(pred, target)
    t = np.asarray(target, dtype=np.float64)
    tp, fn, fp = soft_counts(pred, target)
    num = 2 * tp + smooth
    den = 2 * tp + fp + fn + smooth
    # d(2TP + FP + FN)/dp = 2t + (1 - t) - t = 1
    grad_d = (2 * t * den - num) / den ** 2
    return -num / den, (-grad_d).astype(np.asarray(pred).dtype)


def soft_dice(pred, target):
    """Pooled soft Dice 2TP / (sum p + sum t); 1.0 when both are empty."""
    tp, fn, fp = soft_counts(pred, target)
    den = 2 * tp + fn + fp
    return 1.0 if den == 0 else 2 * tp / den


def make_loss(name, **kwargs):
    """Loss callable from a config id: ``"bce" | "dice" | "tversky"``."""
    if name == "bce":
        return bce_loss
    if name == "dice":
        smooth = kwargs.get("smooth", 1.0)
        return lambda p, t: dice_loss(p, t, smooth)
    if name == "tversky":
        params = TverskyParams(**{k: kwargs[k] for k in ("alpha", "beta", "smooth") if k in kwargs})
        return lambda p, t: tversky_loss(p, t, params)
    raise InvalidConfig(f"unknown loss {name!r}; expected 'bce', 'dice' or 'tversky'")
