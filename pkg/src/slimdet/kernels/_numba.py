"""Numba-compiled hot kernels.

Loop bodies fuse the elementwise chains that the numpy path spreads over
temporaries. fastmath stays off so every run is bit-reproducible.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def adamw_update(p, g, m, v, step, lr, beta1, beta2, eps, weight_decay):
    bc1 = 1.0 - beta1 ** step
    bc2 = 1.0 - beta2 ** step
    for i in range(p.shape[0]):
        gi = g[i]
        m[i] = beta1 * m[i] + (1.0 - beta1) * gi
        v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi
        denom = np.sqrt(v[i] / bc2) + eps
        p[i] -= lr * (m[i] / bc1) / denom + lr * weight_decay * p[i]


@njit(cache=True)
def softmax_rows(x):
    n, t = x.shape
    out = np.empty((n, t))
    for i in range(n):
        hi = x[i, 0]
        for j in range(1, t):
            if x[i, j] > hi:
                hi = x[i, j]
        total = 0.0
        for j in range(t):
            e = np.exp(x[i, j] - hi)
            out[i, j] = e
            total += e
        for j in range(t):
            out[i, j] /= total
    return out


@njit(cache=True)
def standardize_fwd(x, eps):
    b, c = x.shape
    mean = np.zeros(c)
    std = np.zeros(c)
    live = np.zeros(c)
    out = np.empty((b, c))
    for j in range(c):
        s = 0.0
        for i in range(b):
            s += x[i, j]
        mean[j] = s / b
    for j in range(c):
        s = 0.0
        for i in range(b):
            d = x[i, j] - mean[j]
            s += d * d
        sd = np.sqrt(s / b)
        if sd > eps:
            std[j] = sd
            live[j] = 1.0
        else:
            std[j] = 1.0
            live[j] = 0.0
    for i in range(b):
        for j in range(c):
            out[i, j] = (x[i, j] - mean[j]) / std[j] * live[j]
    return out, mean, std, live


@njit(cache=True)
def weighted_stats_fwd(x, w):
    b, f, t = x.shape
    mu = np.zeros((b, f))
    var = np.zeros((b, f))
    for i in range(b):
        for j in range(f):
            s1 = 0.0
            s2 = 0.0
            for k in range(t):
                xv = x[i, j, k]
                wv = w[i, k]
                s1 += wv * xv
                s2 += wv * xv * xv
            mu[i, j] = s1
            vv = s2 - s1 * s1
            var[i, j] = vv if vv > 0.0 else 0.0
    return mu, var
