"""Pure numpy implementation of the per-bag hot kernels.

This module is the fallback used when the compiled ``_ckernel`` extension is
unavailable (or when ``CROCO_PURE_PYTHON`` is set). Both modules expose the
same five functions with identical signatures and semantics.

Activation codes: 0 identity, 1 tanh, 2 sigmoid.
"""

import numpy as np

NAME = "python"

IDENTITY = 0
TANH = 1
SIGMOID = 2


def sigmoid(x):
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def dense_forward(x, W, b, act):
    """Affine map ``x @ W + b`` followed by the activation ``act``."""
    pre = x @ W + b
    if act == TANH:
        return np.tanh(pre)
    if act == SIGMOID:
        return sigmoid(pre)
    return pre


def dense_backward(x, W, out, act, gout):
    """Return ``(gW, gb, gx)`` given the layer input, output and upstream grad."""
    if act == TANH:
        gpre = gout * (1.0 - out * out)
    elif act == SIGMOID:
        gpre = gout * out * (1.0 - out)
    else:
        gpre = gout
    return x.T @ gpre, gpre.sum(axis=0), gpre @ W.T


def softmax(s):
    e = np.exp(s - s.max())
    return e / e.sum()


def attention_forward(z, V, w):
    """Tanh attention: ``u = tanh(z V^T)``, ``a = softmax(u w)``; returns ``(u, a)``."""
    u = np.tanh(z @ V.T)
    return u, softmax(u @ w)


def attention_backward(z, V, w, u, a, ga):
    """Backprop an upstream gradient on ``a`` to ``(gV, gw, gz)``."""
    gs = a * (ga - ga @ a)
    gpre = np.outer(gs, w) * (1.0 - u * u)
    return gpre.T @ z, u.T @ gs, gpre @ V
