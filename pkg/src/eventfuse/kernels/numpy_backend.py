"""Pure-numpy reference implementations of the hot kernels."""

import numpy as np
from scipy.special import erf

_INV_SQRT2 = 0.7071067811865476
_INV_SQRT_2PI = 0.3989422804014327


def gelu_forward(x):
    return 0.5 * x * (1.0 + erf(x * _INV_SQRT2))


def gelu_backward(x, g):
    cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))
    pdf = _INV_SQRT_2PI * np.exp(-0.5 * x * x)
    return g * (cdf + x * pdf)


def sigmoid_forward(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softmax_rows(x):
    m = x.max(axis=-1, keepdims=True)
    e = np.exp(x - m)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_rows_backward(p, g):
    inner = (g * p).sum(axis=-1, keepdims=True)
    return p * (g - inner)


def layernorm_rows(x, eps):
    mu = x.mean(axis=-1, keepdims=True)
    var = np.square(x - mu).mean(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    y = (x - mu) * rstd
    return y, rstd[..., 0]


def layernorm_rows_backward(y, rstd, g):
    gm = g.mean(axis=-1, keepdims=True)
    gym = (g * y).mean(axis=-1, keepdims=True)
    return rstd[..., None] * (g - gm - y * gym)


def adam_update(param, grad, m, v, lr, beta1, beta2, eps, t):
    m *= beta1
    m += (1.0 - beta1) * grad
    v *= beta2
    v += (1.0 - beta2) * grad * grad
    mhat = m / (1.0 - beta1**t)
    vhat = v / (1.0 - beta2**t)
    param -= lr * mhat / (np.sqrt(vhat) + eps)


def ar1_path(eps, drift, phi, sigma):
    """Mean-reverting recursion x_t = phi*x_{t-1} + sigma*eps_t + drift_t."""
    n, d = eps.shape
    out = np.empty((n, d))
    prev = np.zeros(d)
    for t in range(n):
        prev = phi * prev + sigma * eps[t] + drift[t]
        out[t] = prev
    return out


def rolling_stats(values, window):
    """Trailing-inclusive rolling mean and population std of a 1-d series."""
    n = values.shape[0]
    mean = np.empty(n)
    std = np.empty(n)
    for t in range(n):
        lo = max(0, t - window + 1)
        seg = values[lo : t + 1]
        mu = seg.mean()
        mean[t] = mu
        std[t] = np.sqrt(np.square(seg - mu).mean())
    return mean, std
