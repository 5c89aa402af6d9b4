"""Reverse-mode automatic differentiation over dense float64 arrays.

A deliberately small engine: just the operation set the detection model
needs, each with a hand-written backward pass verified against central
finite differences. Tensors are immutable values once created; the
computation graph is the web of parent references recorded by each op,
and ``Tensor.backward`` replays it in reverse topological order exactly
once. A graph is confined to one thread for a forward+backward pass.

Forward ops raise NumericalError when they produce non-finite values
(toggle with ``set_finite_checks`` for benchmarking).
"""

from __future__ import annotations

import numpy as np

from . import kernels
from .errors import ConfigError, DimensionError, NumericalError

_FINITE_CHECKS = True


def set_finite_checks(enabled: bool) -> None:
    global _FINITE_CHECKS
    _FINITE_CHECKS = bool(enabled)


def finite_checks_enabled() -> bool:
    return _FINITE_CHECKS


class Tensor:
    """A float64 array plus the bookkeeping reverse mode needs."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False):
        arr = np.asarray(data, dtype=np.float64)
        if _FINITE_CHECKS and not np.all(np.isfinite(arr)):
            raise NumericalError("tensor contains non-finite values")
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def backward(self) -> None:
        """Accumulate gradients of this scalar into every grad-requiring leaf."""
        if self.size != 1:
            raise DimensionError(
                f"backward requires a scalar root, got shape {self.shape}"
            )
        order = _toposort(self)
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def __add__(self, other):
        if isinstance(other, Tensor):
            return add(self, other)
        return shift(self, float(other))

    def __radd__(self, other):
        return shift(self, float(other))

    def __sub__(self, other):
        if isinstance(other, Tensor):
            return sub(self, other)
        return shift(self, -float(other))

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    def __rmul__(self, other):
        return scale(self, float(other))

    def __neg__(self):
        return scale(self, -1.0)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


def _toposort(root):
    order = []
    seen = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def _node(data, parents, backward):
    """Wrap an op result; drops the tape when no parent needs gradients."""
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _accum(t, g):
    if t.requires_grad:
        t.grad = g if t.grad is None else t.grad + g


# ---------------------------------------------------------------------------
# elementwise and structural ops


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise DimensionError(f"add shape mismatch: {a.shape} vs {b.shape}")

    def backward(g):
        _accum(a, g)
        _accum(b, g)

    return _node(a.data + b.data, (a, b), backward)


def sub(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise DimensionError(f"sub shape mismatch: {a.shape} vs {b.shape}")

    def backward(g):
        _accum(a, g)
        _accum(b, -g)

    return _node(a.data - b.data, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise DimensionError(f"mul shape mismatch: {a.shape} vs {b.shape}")

    def backward(g):
        _accum(a, g * b.data)
        _accum(b, g * a.data)

    return _node(a.data * b.data, (a, b), backward)


def scale(a: Tensor, c: float) -> Tensor:
    def backward(g):
        _accum(a, g * c)

    return _node(a.data * c, (a,), backward)


def shift(a: Tensor, c: float) -> Tensor:
    def backward(g):
        _accum(a, g)

    return _node(a.data + c, (a,), backward)


def reshape(a: Tensor, shape) -> Tensor:
    orig = a.shape

    def backward(g):
        _accum(a, g.reshape(orig))

    return _node(a.data.reshape(shape), (a,), backward)


def transpose(a: Tensor, axes) -> Tensor:
    inverse = np.argsort(axes)

    def backward(g):
        _accum(a, g.transpose(inverse))

    return _node(a.data.transpose(axes), (a,), backward)


def concat(parts, axis=1) -> Tensor:
    parts = list(parts)
    if not parts:
        raise DimensionError("concat of zero tensors")
    sizes = [p.shape[axis] for p in parts]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
            index = [slice(None)] * g.ndim
            index[axis] = slice(lo, hi)
            _accum(p, g[tuple(index)])

    return _node(np.concatenate([p.data for p in parts], axis=axis), parts, backward)


def reduce_mean(a: Tensor, axis: int) -> Tensor:
    if not -a.ndim <= axis < a.ndim:
        raise DimensionError(f"mean axis {axis} out of range for shape {a.shape}")
    axis = axis % a.ndim
    n = a.shape[axis]

    def backward(g):
        _accum(a, np.broadcast_to(np.expand_dims(g / n, axis), a.shape))

    return _node(a.data.mean(axis=axis), (a,), backward)


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul shape mismatch: {a.shape} x {b.shape}")

    def backward(g):
        _accum(a, g @ b.data.T)
        _accum(b, a.data.T @ g)

    return _node(a.data @ b.data, (a, b), backward)


def linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """x @ w + b for x (N, F), w (F, M), b (M,)."""
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[0] or b.shape != (w.shape[1],):
        raise DimensionError(
            f"linear shape mismatch: x {x.shape}, w {w.shape}, b {b.shape}"
        )

    def backward(g):
        _accum(x, g @ w.data.T)
        _accum(w, x.data.T @ g)
        _accum(b, g.sum(axis=0))

    return _node(x.data @ w.data + b.data, (x, w, b), backward)


def frobenius_sq(a: Tensor) -> Tensor:
    """Sum of squared entries, as a scalar tensor."""
    flat = a.data.ravel()

    def backward(g):
        _accum(a, (2.0 * float(g)) * a.data)

    return _node(np.dot(flat, flat), (a,), backward)


# ---------------------------------------------------------------------------
# nonlinearities


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)

    def backward(g):
        _accum(a, g * (1.0 - y * y))

    return _node(y, (a,), backward)


def relu(a: Tensor) -> Tensor:
    y = np.maximum(a.data, 0.0)

    def backward(g):
        _accum(a, g * (a.data > 0.0))

    return _node(y, (a,), backward)


def sigmoid(a: Tensor) -> Tensor:
    y = _sigmoid_stable(a.data)

    def backward(g):
        _accum(a, g * y * (1.0 - y))

    return _node(y, (a,), backward)


def _sigmoid_stable(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def dropout(a: Tensor, rate: float, rng, train: bool) -> Tensor:
    """Inverted dropout: scales kept units by 1/keep, identity in eval mode."""
    if not 0.0 <= rate < 1.0:
        raise ConfigError(f"dropout rate must be in [0, 1), got {rate}")
    if not train or rate == 0.0:
        return a
    if rng is None:
        raise ConfigError("training-mode dropout requires an rng")
    keep = 1.0 - rate
    mask = (rng.random(a.shape) < keep) / keep

    def backward(g):
        _accum(a, g * mask)

    return _node(a.data * mask, (a,), backward)


# ---------------------------------------------------------------------------
# normalization, attention, pooling


def batch_standardize(a: Tensor, eps: float = 1e-5) -> Tensor:
    """Standardize each column to zero mean / unit variance over axis 0.

    Population statistics, no learned affine. Axes beyond the first are
    treated as independent columns. Columns whose population std is <= eps
    map to all-zeros. Requires at least 2 rows.
    """
    if a.ndim < 2:
        raise DimensionError(f"batch_standardize needs ndim >= 2, got {a.shape}")
    b = a.shape[0]
    if b < 2:
        raise DimensionError(f"batch_standardize undefined for batch size {b}")
    x2d = a.data.reshape(b, -1)
    out2d, _, std, live = kernels.standardize_fwd(x2d, eps)
    y = out2d.reshape(a.shape)

    def backward(g):
        g2 = g.reshape(b, -1)
        gm = g2.mean(axis=0)
        gy = (g2 * out2d).mean(axis=0)
        gx = (g2 - gm - out2d * gy) / std * live
        _accum(a, gx.reshape(a.shape))

    return _node(y, (a,), backward)


def softmax_over_time(a: Tensor) -> Tensor:
    """Softmax along the last axis (1-D vector or rows of a 2-D array)."""
    if a.ndim == 0:
        raise DimensionError("softmax needs at least one axis")
    rows = a.data.reshape(-1, a.shape[-1])
    y2d = kernels.softmax_rows(rows)
    y = y2d.reshape(a.shape)

    def backward(g):
        g2 = g.reshape(rows.shape)
        dot = (g2 * y2d).sum(axis=1, keepdims=True)
        _accum(a, (y2d * (g2 - dot)).reshape(a.shape))

    return _node(y, (a,), backward)


def frame_scores(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Per-frame scalar scores: x (B, F, T), w (F,), b (1,) -> (B, T)."""
    if x.ndim != 3 or w.shape != (x.shape[1],) or b.shape != (1,):
        raise DimensionError(
            f"frame_scores shape mismatch: x {x.shape}, w {w.shape}, b {b.shape}"
        )

    def backward(g):
        _accum(x, w.data[None, :, None] * g[:, None, :])
        _accum(w, np.einsum("bft,bt->f", x.data, g))
        _accum(b, np.array([g.sum()]))

    return _node(np.einsum("bft,f->bt", x.data, w.data) + b.data[0], (x, w, b), backward)


def weighted_mean(x: Tensor, w: Tensor) -> Tensor:
    """Weighted temporal mean: x (B, F, T), w (B, T) -> (B, F)."""
    _check_pool_shapes(x, w)
    mu, _ = kernels.weighted_stats_fwd(x.data, w.data)

    def backward(g):
        _accum(x, g[:, :, None] * w.data[:, None, :])
        _accum(w, np.einsum("bft,bf->bt", x.data, g))

    return _node(mu, (x, w), backward)


def weighted_std(x: Tensor, w: Tensor) -> Tensor:
    """Weighted temporal standard deviation, variance clamped at 0 before sqrt."""
    _check_pool_shapes(x, w)
    mu, var = kernels.weighted_stats_fwd(x.data, w.data)
    sg = np.sqrt(var)
    # zero-variance entries get zero gradient (subgradient choice)
    inv = np.where(sg > 0.0, 1.0 / np.where(sg > 0.0, sg, 1.0), 0.0)

    def backward(g):
        centered = x.data - mu[:, :, None]
        coef = (g * inv)[:, :, None]
        _accum(x, coef * w.data[:, None, :] * centered)
        gw = 0.5 * np.einsum(
            "bft,bf->bt", x.data * x.data - 2.0 * mu[:, :, None] * x.data, g * inv
        )
        _accum(w, gw)

    return _node(sg, (x, w), backward)


def _check_pool_shapes(x, w):
    if x.ndim != 3 or w.ndim != 2 or x.shape[0] != w.shape[0] or x.shape[2] != w.shape[1]:
        raise DimensionError(
            f"pooling shape mismatch: x {x.shape}, weights {w.shape}"
        )


def l2_normalize_rows(a: Tensor, eps: float = 1e-12) -> Tensor:
    """Scale each row of a (B, D) tensor to unit L2 norm; zero rows stay zero."""
    if a.ndim != 2:
        raise DimensionError(f"l2_normalize_rows expects (B, D), got {a.shape}")
    norms = np.sqrt((a.data * a.data).sum(axis=1, keepdims=True))
    live = norms > eps
    safe = np.where(live, norms, 1.0)
    y = np.where(live, a.data / safe, 0.0)

    def backward(g):
        dot = (g * y).sum(axis=1, keepdims=True)
        _accum(a, np.where(live, (g - y * dot) / safe, 0.0))

    return _node(y, (a,), backward)


# ---------------------------------------------------------------------------
# losses


def bce_with_logits(logits: Tensor, labels) -> Tensor:
    """Mean binary cross-entropy from logits, computed in log space."""
    y = np.asarray(labels, dtype=np.float64).reshape(-1)
    if logits.ndim != 1 or logits.shape[0] != y.shape[0]:
        raise DimensionError(
            f"bce shape mismatch: logits {logits.shape}, labels {y.shape}"
        )
    if not np.all((y == 0.0) | (y == 1.0)):
        raise ConfigError("bce labels must be 0 or 1")
    z = logits.data
    # softplus(z) = max(z, 0) + log1p(exp(-|z|))
    softplus = np.maximum(z, 0.0) + np.log1p(np.exp(-np.abs(z)))
    per_sample = softplus - y * z
    n = y.shape[0]

    def backward(g):
        _accum(logits, (float(g) / n) * (_sigmoid_stable(z) - y))

    return _node(per_sample.mean(), (logits,), backward)


# ---------------------------------------------------------------------------
# finite-difference oracle


def check_gradients(f, inputs, rtol=1e-4, h=1e-5):
    """Compare reverse-mode gradients of a scalar function against central
    finite differences.

    f takes the tensors in ``inputs`` (a Tensor or list of Tensors) and must
    return a scalar Tensor, deterministically. Returns (passed, max relative
    error) where the relative error of each component uses
    |analytic - numeric| / max(1, |analytic|, |numeric|).
    """
    tensors = [inputs] if isinstance(inputs, Tensor) else list(inputs)
    for t in tensors:
        t.data = np.ascontiguousarray(t.data)  # ravel below must be a view
        t.requires_grad = True
        t.grad = None

    out = f(*tensors)
    if not np.isfinite(out.data).all():
        raise NumericalError("function value is not finite at the test point")
    out.backward()
    analytic = [
        t.grad.copy() if t.grad is not None else np.zeros_like(t.data)
        for t in tensors
    ]

    max_err = 0.0
    for idx, t in enumerate(tensors):
        flat = t.data.ravel()
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            hi = float(f(*tensors).data)
            flat[i] = orig - h
            lo = float(f(*tensors).data)
            flat[i] = orig
            numeric = (hi - lo) / (2.0 * h)
            a = analytic[idx].ravel()[i]
            err = abs(a - numeric) / max(1.0, abs(a), abs(numeric))
            if err > max_err:
                max_err = err
    return max_err < rtol, max_err
