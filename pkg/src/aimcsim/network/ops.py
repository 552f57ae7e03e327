"""Forward/backward kernels for the fixed layer vocabulary.

All feature maps are ``C x N x H x W`` float64 arrays.
"""

from __future__ import annotations

import numpy as np

_GELU_C = np.sqrt(2.0 / np.pi)


def sigmoid(z):
    # split by sign to avoid overflow in exp
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def act_forward(kind: str, z):
    if kind == "none":
        return z
    if kind == "relu":
        return np.maximum(z, 0.0)
    if kind == "sigmoid":
        return sigmoid(z)
    if kind == "gelu":
        # tanh approximation
        return 0.5 * z * (1.0 + np.tanh(_GELU_C * (z + 0.044715 * z ** 3)))
    raise ValueError(kind)


def act_backward(kind: str, dy, z, y):
    if kind == "none":
        return dy
    if kind == "relu":
        return dy * (z > 0)
    if kind == "sigmoid":
        return dy * y * (1.0 - y)
    if kind == "gelu":
        t = np.tanh(_GELU_C * (z + 0.044715 * z ** 3))
        dt = (1.0 - t * t) * _GELU_C * (1.0 + 3 * 0.044715 * z * z)
        return dy * (0.5 * (1.0 + t) + 0.5 * z * dt)
    raise ValueError(kind)


def maxpool2_forward(x):
    c, n, h, w = x.shape
    win = x.reshape(c, n, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5)
    win = win.reshape(c, n, h // 2, w // 2, 4)
    arg = np.argmax(win, axis=-1)
    y = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]
    return y, arg


def maxpool2_backward(dy, arg, x_shape):
    c, n, h, w = x_shape
    dwin = np.zeros((c, n, h // 2, w // 2, 4))
    np.put_along_axis(dwin, arg[..., None], dy[..., None], axis=-1)
    dwin = dwin.reshape(c, n, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5)
    return dwin.reshape(c, n, h, w)


def upsample2_forward(x):
    return x.repeat(2, axis=2).repeat(2, axis=3)


def upsample2_backward(dy):
    c, n, h, w = dy.shape
    return dy.reshape(c, n, h // 2, 2, w // 2, 2).sum(axis=(3, 5))


def unpatchify_forward(x, p: int):
    """``(C*p*p) x N x h x w`` -> ``C x N x (h*p) x (w*p)``; channel index is (c, i, j)."""
    cpp, n, h, w = x.shape
    c = cpp // (p * p)
    y = x.reshape(c, p, p, n, h, w).transpose(0, 3, 4, 1, 5, 2)
    return y.reshape(c, n, h * p, w * p)


def unpatchify_backward(dy, p: int):
    c, n, hp, wp = dy.shape
    h, w = hp // p, wp // p
    dx = dy.reshape(c, n, h, p, w, p).transpose(0, 3, 5, 1, 2, 4)
    return dx.reshape(c * p * p, n, h, w)


def layernorm_forward(x, eps: float = 1e-5):
    """Normalise each position over the channel axis (no affine parameters)."""
    mu = x.mean(axis=0, keepdims=True)
    xc = x - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=0, keepdims=True) + eps)
    return xc * inv, inv


def layernorm_backward(dy, y, inv):
    return inv * (dy - dy.mean(axis=0, keepdims=True) - y * (dy * y).mean(axis=0, keepdims=True))


def _tokens(x):
    """``D x N x h x w`` -> ``N x T x D``."""
    d, n, h, w = x.shape
    return x.reshape(d, n, h * w).transpose(1, 2, 0)


def _untokens(t, shape):
    d, n, h, w = shape
    return t.transpose(2, 0, 1).reshape(d, n, h, w)


def attention_forward(q, k, v):
    """Single-head softmax attention over the tokens of each image."""
    qt, kt, vt = _tokens(q), _tokens(k), _tokens(v)
    scale = 1.0 / np.sqrt(q.shape[0])
    s = np.matmul(qt, kt.transpose(0, 2, 1)) * scale
    s = s - s.max(axis=-1, keepdims=True)
    a = np.exp(s)
    a /= a.sum(axis=-1, keepdims=True)
    out = np.matmul(a, vt)
    return _untokens(out, v.shape), (qt, kt, vt, a, scale)


def attention_backward(dy, cache, q_shape, v_shape):
    qt, kt, vt, a, scale = cache
    dout = _tokens(dy)
    dvt = np.matmul(a.transpose(0, 2, 1), dout)
    da = np.matmul(dout, vt.transpose(0, 2, 1))
    ds = a * (da - np.sum(da * a, axis=-1, keepdims=True)) * scale
    dqt = np.matmul(ds, kt)
    dkt = np.matmul(ds.transpose(0, 2, 1), qt)
    return _untokens(dqt, q_shape), _untokens(dkt, q_shape), _untokens(dvt, v_shape)


def bce_with_logits(z, t):
    """Mean binary cross-entropy and its gradient w.r.t. the logits."""
    loss = np.mean(np.logaddexp(0.0, z) - t * z)
    grad = (sigmoid(z) - t) / z.size
    return float(loss), grad


def soft_dice_loss(z, t, smooth: float = 1.0):
    """Mean over images of ``1 - (2*sum(p*t) + s) / (sum(p) + sum(t) + s)``.

    ``z`` and ``t`` are ``1 x N x H x W``.
    """
    p = sigmoid(z)
    axes = (0, 2, 3)
    inter = np.sum(p * t, axis=axes, keepdims=True)
    denom = np.sum(p, axis=axes, keepdims=True) + np.sum(t, axis=axes, keepdims=True) + smooth
    num = 2.0 * inter + smooth
    n = z.shape[1]
    loss = float(np.mean(1.0 - num / denom))
    dp = -(2.0 * t * denom - num) / (denom * denom) / n
    return loss, dp * p * (1.0 - p)


LOSSES = {"bce": bce_with_logits, "dice_loss": soft_dice_loss}
