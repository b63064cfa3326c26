"""Numba-compiled kernels. Loop bodies mirror numpy_backend exactly.

No fastmath and no parallel: results must be reproducible bit-for-bit
between runs, and within one float ulp of the numpy fallback.
"""

import math

import numpy as np
from numba import njit

_INV_SQRT2 = 0.7071067811865476
_INV_SQRT_2PI = 0.3989422804014327


@njit(cache=True)
def _gelu_fwd_flat(x, out):
    for i in range(x.size):
        v = x[i]
        out[i] = 0.5 * v * (1.0 + math.erf(v * _INV_SQRT2))


def gelu_forward(x):
    out = np.empty_like(x)
    _gelu_fwd_flat(x.reshape(-1), out.reshape(-1))
    return out


@njit(cache=True)
def _gelu_bwd_flat(x, g, out):
    for i in range(x.size):
        v = x[i]
        cdf = 0.5 * (1.0 + math.erf(v * _INV_SQRT2))
        pdf = _INV_SQRT_2PI * math.exp(-0.5 * v * v)
        out[i] = g[i] * (cdf + v * pdf)


def gelu_backward(x, g):
    out = np.empty_like(x)
    _gelu_bwd_flat(x.reshape(-1), g.reshape(-1), out.reshape(-1))
    return out


@njit(cache=True)
def _sigmoid_flat(x, out):
    for i in range(x.size):
        v = x[i]
        if v >= 0.0:
            out[i] = 1.0 / (1.0 + math.exp(-v))
        else:
            e = math.exp(v)
            out[i] = e / (1.0 + e)


def sigmoid_forward(x):
    out = np.empty_like(x)
    _sigmoid_flat(x.reshape(-1), out.reshape(-1))
    return out


@njit(cache=True)
def _softmax_rows(x):
    n, d = x.shape
    out = np.empty((n, d))
    for i in range(n):
        m = x[i, 0]
        for j in range(1, d):
            if x[i, j] > m:
                m = x[i, j]
        s = 0.0
        for j in range(d):
            e = math.exp(x[i, j] - m)
            out[i, j] = e
            s += e
        for j in range(d):
            out[i, j] /= s
    return out


def softmax_rows(x):
    if x.ndim == 2:
        return _softmax_rows(x)
    flat = _softmax_rows(x.reshape(-1, x.shape[-1]))
    return flat.reshape(x.shape)


@njit(cache=True)
def _softmax_rows_bwd(p, g):
    n, d = p.shape
    out = np.empty((n, d))
    for i in range(n):
        inner = 0.0
        for j in range(d):
            inner += g[i, j] * p[i, j]
        for j in range(d):
            out[i, j] = p[i, j] * (g[i, j] - inner)
    return out


def softmax_rows_backward(p, g):
    if p.ndim == 2:
        return _softmax_rows_bwd(p, g)
    flat = _softmax_rows_bwd(p.reshape(-1, p.shape[-1]), g.reshape(-1, g.shape[-1]))
    return flat.reshape(p.shape)


@njit(cache=True)
def _layernorm_rows(x, eps):
    n, d = x.shape
    y = np.empty((n, d))
    rstd = np.empty(n)
    for i in range(n):
        mu = 0.0
        for j in range(d):
            mu += x[i, j]
        mu /= d
        var = 0.0
        for j in range(d):
            dlt = x[i, j] - mu
            var += dlt * dlt
        var /= d
        r = 1.0 / math.sqrt(var + eps)
        rstd[i] = r
        for j in range(d):
            y[i, j] = (x[i, j] - mu) * r
    return y, rstd


def layernorm_rows(x, eps):
    return _layernorm_rows(x, eps)


@njit(cache=True)
def _layernorm_rows_bwd(y, rstd, g):
    n, d = y.shape
    out = np.empty((n, d))
    for i in range(n):
        gm = 0.0
        gym = 0.0
        for j in range(d):
            gm += g[i, j]
            gym += g[i, j] * y[i, j]
        gm /= d
        gym /= d
        for j in range(d):
            out[i, j] = rstd[i] * (g[i, j] - gm - y[i, j] * gym)
    return out


def layernorm_rows_backward(y, rstd, g):
    return _layernorm_rows_bwd(y, rstd, g)


@njit(cache=True)
def _adam_flat(param, grad, m, v, lr, beta1, beta2, eps, t):
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    for i in range(param.size):
        gi = grad[i]
        m[i] = beta1 * m[i] + (1.0 - beta1) * gi
        v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi
        param[i] -= lr * (m[i] / c1) / (math.sqrt(v[i] / c2) + eps)


def adam_update(param, grad, m, v, lr, beta1, beta2, eps, t):
    _adam_flat(
        param.reshape(-1), grad.reshape(-1), m.reshape(-1), v.reshape(-1),
        lr, beta1, beta2, eps, t,
    )


@njit(cache=True)
def ar1_path(eps, drift, phi, sigma):
    n, d = eps.shape
    out = np.empty((n, d))
    prev = np.zeros(d)
    for t in range(n):
        for k in range(d):
            prev[k] = phi * prev[k] + sigma * eps[t, k] + drift[t, k]
            out[t, k] = prev[k]
    return out


@njit(cache=True)
def rolling_stats(values, window):
    n = values.shape[0]
    mean = np.empty(n)
    std = np.empty(n)
    for t in range(n):
        lo = max(0, t - window + 1)
        cnt = t + 1 - lo
        mu = 0.0
        for j in range(lo, t + 1):
            mu += values[j]
        mu /= cnt
        var = 0.0
        for j in range(lo, t + 1):
            dlt = values[j] - mu
            var += dlt * dlt
        var /= cnt
        mean[t] = mu
        std[t] = math.sqrt(var)
    return mean, std
