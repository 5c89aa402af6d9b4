"""Pure-numpy reference implementations of the hot kernels.

Semantically identical to the numba versions in ``_numba``; results agree
to float64 rounding (summation order differs, so not bit-for-bit).
"""

import numpy as np


def adamw_update(p, g, m, v, step, lr, beta1, beta2, eps, weight_decay):
    """One fused AdamW step, in place on 1-D float64 views p/m/v."""
    m *= beta1
    m += (1.0 - beta1) * g
    v *= beta2
    v += (1.0 - beta2) * g * g
    bc1 = 1.0 - beta1 ** step
    bc2 = 1.0 - beta2 ** step
    denom = np.sqrt(v / bc2) + eps
    p -= lr * (m / bc1) / denom + lr * weight_decay * p


def softmax_rows(x):
    """Row-wise softmax with max subtraction, x shape (N, T)."""
    shifted = x - x.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def standardize_fwd(x, eps):
    """Column standardization over axis 0 with population statistics.

    Returns (out, mean, std, live) where live marks columns whose std
    exceeded eps; dead columns are zeroed in out.
    """
    mean = x.mean(axis=0)
    std = np.sqrt(np.mean((x - mean) ** 2, axis=0))
    live = (std > eps).astype(np.float64)
    safe = np.where(std > eps, std, 1.0)
    out = (x - mean) / safe * live
    return out, mean, safe, live


def weighted_stats_fwd(x, w):
    """Weighted temporal mean and variance.

    x shape (B, F, T), w shape (B, T) with rows summing to 1.
    Returns (mu, var) of shape (B, F); var is clamped at 0.
    """
    mu = np.einsum("bft,bt->bf", x, w)
    ex2 = np.einsum("bft,bt->bf", x * x, w)
    var = np.maximum(ex2 - mu * mu, 0.0)
    return mu, var
