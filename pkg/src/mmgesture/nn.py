"""Minimal numpy layers with explicit backward passes.

Every ``*_forward`` returns ``(out, cache)`` and the matching ``*_backward``
takes ``(dout, cache)``. Arrays are NCHW.
"""

from __future__ import annotations

from typing import Callable, Mapping

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def pad_forward(x, pad: int, mode: str):
    if pad == 0:
        return x
    width = ((0, 0), (0, 0), (pad, pad), (pad, pad))
    return np.pad(x, width, mode="reflect" if mode == "reflect" else "constant")


def pad_backward(dxp, pad: int, mode: str):
    if pad == 0:
        return dxp
    if mode != "reflect":
        return dxp[:, :, pad:-pad, pad:-pad]
    if pad != 1:
        raise NotImplementedError("reflection padding backward supports pad=1")
    d = dxp.copy()
    # fold the mirrored border rows/cols back onto their sources
    d[:, :, 2, :] += d[:, :, 0, :]
    d[:, :, -3, :] += d[:, :, -1, :]
    d = d[:, :, 1:-1, :]
    d[:, :, :, 2] += d[:, :, :, 0]
    d[:, :, :, -3] += d[:, :, :, -1]
    return d[:, :, :, 1:-1]


def conv2d_forward(x, w, b, stride: int = 1, pad: int = 1, pad_mode: str = "zero"):
    """3x3 (or any square) convolution, cross-correlation convention."""
    n, c, h, wd = x.shape
    f, c2, kh, kw = w.shape
    if c != c2:
        raise ValueError(f"input has {c} channels, kernel expects {c2}")
    xp = pad_forward(x, pad, pad_mode)
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    ho, wo = win.shape[2:4]
    # im2col with image rows innermost so the copy runs over contiguous memory
    cols = win.transpose(1, 4, 5, 0, 2, 3).reshape(c * kh * kw, n * ho * wo)
    out = (w.reshape(f, -1) @ cols).reshape(f, n, ho, wo).transpose(1, 0, 2, 3)
    out = out + b[None, :, None, None]
    return np.ascontiguousarray(out), (x.shape, xp.shape, cols, w, stride, pad, pad_mode)


def conv2d_backward(dout, cache, input_grad: bool = True):
    """Returns ``(dx, dw, db)``; ``dx`` is None when ``input_grad`` is off (first layer)."""
    x_shape, xp_shape, cols, w, stride, pad, pad_mode = cache
    f, c, kh, kw = w.shape
    n, _, ho, wo = dout.shape
    db = dout.sum(axis=(0, 2, 3))
    dflat = dout.transpose(1, 0, 2, 3).reshape(f, -1)
    dw = (dflat @ cols.T).reshape(w.shape)
    if not input_grad:
        return None, dw, db
    dcols = (w.reshape(f, -1).T @ dflat).reshape(c, kh, kw, n, ho, wo)
    dxp = np.zeros(xp_shape)
    for i in range(kh):
        for j in range(kw):
            dxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += dcols[:, i, j].transpose(1, 0, 2, 3)
    return pad_backward(dxp, pad, pad_mode), dw, db


def linear_forward(x, w, b):
    return x @ w + b, (x, w)


def linear_backward(dout, cache):
    x, w = cache
    return dout @ w.T, x.T @ dout, dout.sum(axis=0)


def relu_forward(x):
    return np.maximum(x, 0), x > 0


def relu_backward(dout, mask):
    return dout * mask


def tanh_forward(x):
    y = np.tanh(x)
    return y, y


def tanh_backward(dout, y):
    return dout * (1 - y * y)


def sigmoid(x):
    return 0.5 * (1 + np.tanh(0.5 * x))


def maxpool2_forward(x):
    n, c, h, w = x.shape
    blocks = x.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h // 2, w // 2, 4)
    idx = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, idx[..., None], axis=-1)[..., 0]
    return out, (x.shape, idx)


def maxpool2_backward(dout, cache):
    shape, idx = cache
    n, c, h, w = shape
    d = np.zeros((n, c, h // 2, w // 2, 4))
    np.put_along_axis(d, idx[..., None], dout[..., None], axis=-1)
    return d.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(shape)


def batchnorm_forward(x, gamma, beta, running_mean, running_var, train: bool,
                      momentum: float = 0.1, eps: float = 1e-5):
    """Per-channel standardization; running statistics are updated in place in train mode."""
    if train:
        mu = x.mean(axis=(0, 2, 3))
        var = x.var(axis=(0, 2, 3))
        running_mean *= 1 - momentum
        running_mean += momentum * mu
        running_var *= 1 - momentum
        running_var += momentum * var
    else:
        mu, var = running_mean, running_var
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x - mu[None, :, None, None]) * inv[None, :, None, None]
    out = gamma[None, :, None, None] * xhat + beta[None, :, None, None]
    return out, (xhat, inv, gamma, train)


def batchnorm_backward(dout, cache):
    xhat, inv, gamma, train = cache
    dgamma = (dout * xhat).sum(axis=(0, 2, 3))
    dbeta = dout.sum(axis=(0, 2, 3))
    dxhat = dout * gamma[None, :, None, None]
    if not train:
        return dxhat * inv[None, :, None, None], dgamma, dbeta
    m = dout.shape[0] * dout.shape[2] * dout.shape[3]
    dx = (inv[None, :, None, None] / m) * (
        m * dxhat
        - dxhat.sum(axis=(0, 2, 3))[None, :, None, None]
        - xhat * (dxhat * xhat).sum(axis=(0, 2, 3))[None, :, None, None])
    return dx, dgamma, dbeta


def dropout_forward(x, rate: float, rng: np.random.Generator | None):
    if rng is None or rate <= 0:
        return x, None
    mask = (rng.random(x.shape) >= rate) / (1 - rate)
    return x * mask, mask


def dropout_backward(dout, mask):
    return dout if mask is None else dout * mask


def softmax(logits):
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy(logits, labels):
    """Mean cross-entropy and its gradient w.r.t. the logits."""
    p = softmax(logits)
    n = len(labels)
    loss = -np.mean(np.log(p[np.arange(n), labels] + 1e-300))
    d = p.copy()
    d[np.arange(n), labels] -= 1
    return loss, d / n


def he_init(rng, shape, fan_in):
    return rng.normal(0, np.sqrt(2.0 / fan_in), shape)


class Adam:
    def __init__(self, params: Mapping[str, np.ndarray], lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for k, g in grads.items():
            self.m[k] = b1 * self.m[k] + (1 - b1) * g
            self.v[k] = b2 * self.v[k] + (1 - b2) * g * g
            mhat = self.m[k] / (1 - b1 ** self.t)
            vhat = self.v[k] / (1 - b2 ** self.t)
            params[k] -= self.lr * mhat / (np.sqrt(vhat) + self.eps)


def numeric_gradient(loss_fn: Callable[[], float], param: np.ndarray, step: float = 1e-4) -> np.ndarray:
    """Central differences of ``loss_fn()`` w.r.t. ``param`` (perturbed in place)."""
    grad = np.zeros_like(param)
    flat = param.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        lp = loss_fn()
        flat[i] = orig - step
        lm = loss_fn()
        flat[i] = orig
        gflat[i] = (lp - lm) / (2 * step)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-10) -> float:
    """Max absolute deviation scaled by the tensor's gradient magnitude."""
    scale = max(np.abs(analytic).max(initial=0.0), np.abs(numeric).max(initial=0.0), floor)
    return float(np.abs(analytic - numeric).max(initial=0.0) / scale)


def gradient_check(params: Mapping[str, np.ndarray],
                   loss_and_grads: Callable[[], tuple[float, Mapping[str, np.ndarray]]],
                   step: float = 1e-4, names=None) -> dict[str, float]:
    """Compare analytic and central-difference gradients for every tensor.

    ``loss_and_grads`` must read ``params`` by reference. Returns the
    relative error per tensor name.
    """
    loss, grads = loss_and_grads()
    grads = {k: np.array(v, copy=True) for k, v in grads.items()}
    # a central difference carries ~eps*|L|/step of rounding noise; gradients
    # within 1e4 of that are compared absolutely, otherwise tensors whose true
    # gradient is zero (e.g. biases ahead of a standardization) score pure noise
    floor = max(1e-10, 1e4 * np.finfo(float).eps * max(1.0, abs(float(loss))) / step)
    errors = {}
    for name in (names or params):
        num = numeric_gradient(lambda: loss_and_grads()[0], params[name], step)
        errors[name] = relative_error(grads[name], num, floor)
    return errors
