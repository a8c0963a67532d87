"""Differentiable layer kernels on (N, C, H, W) arrays.

Each layer is a ``*_forward`` returning ``(out, cache)`` and a ``*_backward``
taking ``(dout, cache)``. Parameter gradients come back as a dict keyed by
slot name. Kernels work in the dtype they are given, so gradient checks run
in float64 and training runs in float32.
"""
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import DegenerateBatch, InvalidRate, ShapeMismatch


@dataclass
class Param:
    """A trainable (or buffered) tensor with its gradient buffer."""

    value: np.ndarray
    grad: np.ndarray = None
    trainable: bool = True

    def __post_init__(self):
        if self.grad is None and self.trainable:
            self.grad = np.zeros_like(self.value)

    def zero_grad(self):
        if self.trainable:
            self.grad[...] = 0


def _check_4d(x, name="x"):
    if x.ndim != 4:
        raise ShapeMismatch(f"{name} must be (N, C, H, W), got shape {x.shape}")


# --- convolution -------------------------------------------------------------


def conv2d_forward(x, weight, bias, stride=1):
    """Same-padded cross-correlation; ``weight`` is (C_out, C_in, k, k) with k odd."""
    _check_4d(x)
    c_out, c_in, kh, kw = weight.shape
    if x.shape[1] != c_in:
        raise ShapeMismatch(f"conv2d expects {c_in} input channels, got {x.shape[1]}")
    if kh != kw or kh % 2 == 0:
        raise ShapeMismatch(f"conv2d needs an odd square kernel, got {kh}x{kw}")
    if stride != 1:
        raise ValueError("only stride 1 is supported")
    n, _, h, w = x.shape
    p = kh // 2
    if p:
        xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
        cols = kernels.im2col(xp, kh)
    else:
        xp = x
        cols = np.ascontiguousarray(x.transpose(1, 0, 2, 3)).reshape(c_in, -1)
    out = weight.reshape(c_out, -1) @ cols
    out += bias[:, None]
    out = out.reshape(c_out, n, h, w).transpose(1, 0, 2, 3)
    return np.ascontiguousarray(out), (cols, xp.shape, weight)


def conv2d_backward(dout, cache):
    cols, padded_shape, weight = cache
    c_out, c_in, k, _ = weight.shape
    n, _, hp, wp = padded_shape
    d2 = np.ascontiguousarray(dout.transpose(1, 0, 2, 3)).reshape(c_out, -1)
    dweight = (d2 @ cols.T).reshape(weight.shape)
    dbias = d2.sum(axis=1, dtype=np.float64).astype(dout.dtype)
    dcols = weight.reshape(c_out, -1).T @ d2
    if k > 1:
        p = k // 2
        dx = kernels.col2im(dcols, padded_shape, k)[:, :, p:hp - p, p:wp - p]
    else:
        dx = dcols.reshape(c_in, n, hp, wp).transpose(1, 0, 2, 3)
    return np.ascontiguousarray(dx), {"weight": np.ascontiguousarray(dweight), "bias": dbias}


def conv2d_transpose_forward(x, weight, bias):
    """Stride-2 transposed convolution with a (C_in, C_out, 2, 2) kernel."""
    _check_4d(x)
    c_in, c_out, kh, kw = weight.shape
    if (kh, kw) != (2, 2):
        raise ShapeMismatch(f"transposed conv kernel must be 2x2, got {kh}x{kw}")
    if x.shape[1] != c_in:
        raise ShapeMismatch(f"conv2d_transpose expects {c_in} input channels, got {x.shape[1]}")
    n, _, h, w = x.shape
    x2 = np.ascontiguousarray(x.transpose(1, 0, 2, 3)).reshape(c_in, -1)
    y = weight.reshape(c_in, -1).T @ x2  # (C_out*4, N*H*W)
    y = y.reshape(c_out, 2, 2, n, h, w).transpose(3, 0, 4, 1, 5, 2).reshape(n, c_out, 2 * h, 2 * w)
    y = y + bias[None, :, None, None]
    return np.ascontiguousarray(y), (x2, x.shape, weight)


def conv2d_transpose_backward(dout, cache):
    x2, x_shape, weight = cache
    n, c_in, h, w = x_shape
    c_out = weight.shape[1]
    dy = dout.reshape(n, c_out, h, 2, w, 2).transpose(1, 3, 5, 0, 2, 4).reshape(c_out * 4, -1)
    dweight = (x2 @ dy.T).reshape(weight.shape)
    dbias = dout.sum(axis=(0, 2, 3), dtype=np.float64).astype(dout.dtype)
    dx = (weight.reshape(c_in, -1) @ dy).reshape(c_in, n, h, w).transpose(1, 0, 2, 3)
    return np.ascontiguousarray(dx), {"weight": dweight, "bias": dbias}


# --- pooling -----------------------------------------------------------------


def maxpool2d_forward(x):
    """2x2 / stride-2 max pooling. Odd H or W is padded right/bottom with -inf."""
    _check_4d(x)
    n, c, h, w = x.shape
    ph, pw = h % 2, w % 2
    if ph or pw:
        x = np.pad(x, ((0, 0), (0, 0), (0, ph), (0, pw)), constant_values=-np.inf)
    out, arg = kernels.maxpool_fwd(x)
    return out, (arg, (h, w))


def maxpool2d_backward(dout, cache):
    arg, (h, w) = cache
    dx = kernels.maxpool_bwd(np.ascontiguousarray(dout), arg)
    return np.ascontiguousarray(dx[:, :, :h, :w]), {}


# --- batch norm --------------------------------------------------------------


def batchnorm2d_forward(x, gamma, beta, running_mean, running_var, mode="train",
                        momentum=0.99, eps=1e-5):
    """Per-channel normalisation; in train mode the running buffers are updated in place."""
    _check_4d(x)
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeMismatch(f"batchnorm parameters must have length {c}")
    if mode == "train":
        m = x.shape[0] * x.shape[2] * x.shape[3]
        if m == 1:
            raise DegenerateBatch("batch norm needs more than one value per channel in train mode")
        mean = x.mean(axis=(0, 2, 3), dtype=np.float64)
        centered = x - mean[None, :, None, None].astype(x.dtype)
        var = np.einsum("nchw,nchw->c", centered, centered, dtype=np.float64) / m
        running_mean *= momentum
        running_mean += (1 - momentum) * mean
        running_var *= momentum
        running_var += (1 - momentum) * var * m / (m - 1)
    else:
        mean = running_mean.astype(np.float64)
        var = running_var.astype(np.float64)
        centered = x - mean[None, :, None, None].astype(x.dtype)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv_std[None, :, None, None].astype(x.dtype)
    out = gamma[None, :, None, None] * xhat + beta[None, :, None, None]
    return out, (xhat, inv_std, gamma, mode)


def batchnorm2d_backward(dout, cache):
    xhat, inv_std, gamma, mode = cache
    dt = dout.dtype
    dgamma = np.einsum("nchw,nchw->c", dout, xhat, dtype=np.float64)
    dbeta = dout.sum(axis=(0, 2, 3), dtype=np.float64)
    g = (gamma.astype(np.float64) * inv_std).astype(dt)[None, :, None, None]
    if mode == "train":
        m = dout.shape[0] * dout.shape[2] * dout.shape[3]
        dx = g * (dout - (dbeta / m).astype(dt)[None, :, None, None]
                  - xhat * (dgamma / m).astype(dt)[None, :, None, None])
    else:
        dx = g * dout
    return dx, {"gamma": dgamma.astype(dt), "beta": dbeta.astype(dt)}


# --- pointwise ---------------------------------------------------------------


def relu_forward(x):
    mask = x > 0
    return x * mask, mask


def relu_backward(dout, mask):
    return dout * mask, {}


def sigmoid(x):
    """Logistic function without overflow for large |x|."""
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(x.dtype, copy=False)


def sigmoid_forward(x):
    y = sigmoid(x)
    return y, y


def sigmoid_backward(dout, y):
    return dout * y * (1 - y), {}


def dropout_forward(x, rate=0.2, mode="train", rng=None):
    """Inverted dropout. ``rng`` is a seed or ``numpy.random.Generator``."""
    if not 0 <= rate < 1:
        raise InvalidRate(f"dropout rate must lie in [0, 1), got {rate}")
    if mode != "train" or rate == 0:
        return x, None
    rng = np.random.default_rng(rng)
    scale = np.asarray(1.0 / (1.0 - rate), dtype=x.dtype)
    mask = (rng.random(x.shape, dtype=np.float32) >= rate) * scale
    return x * mask, mask


def dropout_backward(dout, mask):
    if mask is None:
        return dout, {}
    return dout * mask, {}


def concat_channels(a, b):
    if a.shape[0] != b.shape[0] or a.shape[2:] != b.shape[2:]:
        raise ShapeMismatch(f"cannot concatenate {a.shape} and {b.shape} along channels")
    return np.concatenate([a, b], axis=1), a.shape[1]


def concat_backward(dout, split):
    return dout[:, :split], dout[:, split:]
