"""A small deterministic neural-network toolkit with hand-written backward passes.

Tensors are plain numpy arrays laid out as ``(batch, time, channels)`` for
sequences and ``(batch, features)`` for vectors. Each layer caches what its
backward pass needs during ``forward``; a layer instance therefore serves one
forward/backward pair at a time.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import FeatshiftError, ShapeError

LEAKY_SLOPE = 0.2
NORM_EPS = 1e-5


class NonFiniteError(FeatshiftError, FloatingPointError):
    pass


class Param:
    """A named parameter array with its gradient accumulator."""

    __slots__ = ("name", "data", "grad")

    def __init__(self, name: str, data: np.ndarray):
        self.name = name
        self.data = data
        self.grad = np.zeros_like(data)

    def zero_grad(self) -> None:
        self.grad[...] = 0.0

    def __repr__(self):
        return f"Param({self.name!r}, shape={self.data.shape}, dtype={self.data.dtype})"


# --------------------------------------------------------------------------- functional ops


def conv1d_same(x, weights, bias):
    """Stride-1 1-D convolution with zero 'same' padding.

    ``x`` is ``(T, Cin)`` or ``(B, T, Cin)``, ``weights`` is ``(k, Cin, Cout)``
    with odd ``k``, ``bias`` is ``(Cout,)``.
    """
    y, _ = conv1d_forward(x, weights, bias)
    return y


def conv1d_forward(x, weights, bias):
    x = np.asarray(x)
    squeeze = x.ndim == 2
    if squeeze:
        x = x[None]
    k, cin, cout = weights.shape
    if k % 2 == 0:
        raise ShapeError(f"kernel size must be odd, got {k}")
    if x.ndim != 3 or x.shape[2] != cin or bias.shape != (cout,):
        raise ShapeError(f"conv1d: input {x.shape}, weights {weights.shape}, bias {bias.shape}")
    b, t, _ = x.shape
    pad = (k - 1) // 2
    if k == 1:
        cols = x.reshape(b * t, cin)
    else:
        # im2col with zero padding: tap j reads x[t + j - pad]
        cols = np.zeros((b, t, k, cin), dtype=np.result_type(x, weights))
        for j in range(k):
            s = j - pad
            cols[:, max(0, -s) : min(t, t - s), j] = x[:, max(0, s) : min(t, t + s)]
        cols = cols.reshape(b * t, k * cin)
    y = (cols @ weights.reshape(k * cin, cout) + bias).reshape(b, t, cout)
    cache = (cols, weights, (b, t, cin), squeeze)
    return (y[0] if squeeze else y), cache


def conv1d_backward(g, cache):
    cols, weights, (b, t, cin), squeeze = cache
    k, _, cout = weights.shape
    g2 = np.asarray(g).reshape(b * t, cout)
    dw = (cols.T @ g2).reshape(weights.shape)
    db = g2.sum(axis=0)
    dcols = g2 @ weights.reshape(k * cin, cout).T
    if k == 1:
        dx = dcols.reshape(b, t, cin)
    else:
        dcols = dcols.reshape(b, t, k, cin)
        pad = (k - 1) // 2
        dxp = np.zeros((b, t + k - 1, cin), dtype=dcols.dtype)
        for j in range(k):
            dxp[:, j : j + t] += dcols[:, :, j]
        dx = dxp[:, pad : pad + t]
    return (dx[0] if squeeze else dx), dw, db


def instance_norm_forward(x, eps: float = NORM_EPS):
    x = np.asarray(x)
    mu = x.mean(axis=-2, keepdims=True)
    xc = x - mu
    var = np.mean(xc * xc, axis=-2, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    return xhat, (xhat, inv)


def instance_norm_backward(g, cache):
    xhat, inv = cache
    t = xhat.shape[-2]
    gsum = g.sum(axis=-2, keepdims=True)
    gxsum = np.sum(g * xhat, axis=-2, keepdims=True)
    return inv * (g - gsum / t - xhat * gxsum / t)


def instance_norm(x, eps: float = NORM_EPS):
    """Normalize each channel over time with its own mean and population variance."""
    return instance_norm_forward(x, eps)[0]


def adain_forward(x, gamma, beta, eps: float = NORM_EPS):
    xhat, cache = instance_norm_forward(x, eps)
    gamma = np.asarray(gamma)
    beta = np.asarray(beta)
    g_ = gamma[..., None, :]
    b_ = beta[..., None, :]
    return xhat * g_ + b_, (cache, g_)


def adain_backward(g, cache):
    (xhat, inv), g_ = cache
    dgamma = np.sum(g * xhat, axis=-2)
    dbeta = g.sum(axis=-2)
    dx = instance_norm_backward(g * g_, (xhat, inv))
    return dx, dgamma, dbeta


def adain(x, gamma, beta, eps: float = NORM_EPS):
    """Instance norm followed by a per-channel scale ``gamma`` and shift ``beta``."""
    return adain_forward(x, gamma, beta, eps)[0]


def grad_reverse(x, lam: float = 1.0):
    """Forward identity. See :class:`GradReverse` for the backward rule."""
    if lam < 0:
        raise ValueError("gradient reversal strength must be non-negative")
    return x


def grad_reverse_backward(g, lam: float = 1.0):
    return -lam * np.asarray(g)


def leaky_relu(x, slope: float = LEAKY_SLOPE):
    return np.where(x > 0, x, slope * x)


# --------------------------------------------------------------------------- losses
# Each returns the scalar loss followed by gradients w.r.t. its differentiable inputs.


def l1_loss(pred, target):
    diff = np.asarray(pred) - np.asarray(target)
    if diff.shape != np.shape(pred):
        raise ShapeError(f"l1_loss: shapes {np.shape(pred)} and {np.shape(target)} differ")
    return float(np.mean(np.abs(diff))), np.sign(diff) / diff.size


def mse(a, b):
    diff = np.asarray(a) - np.asarray(b)
    if diff.shape != np.shape(a):
        raise ShapeError(f"mse: shapes {np.shape(a)} and {np.shape(b)} differ")
    return float(np.mean(diff * diff)), 2.0 * diff / diff.size


def softmax(logits, axis=-1):
    z = logits - logits.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def cross_entropy(logits, labels):
    """Mean negative log-softmax at the true class over the batch."""
    logits = np.atleast_2d(np.asarray(logits))
    labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    n, k = logits.shape
    if labels.shape != (n,):
        raise ShapeError(f"cross_entropy: {n} rows but labels of shape {labels.shape}")
    if np.any(labels < 0) or np.any(labels >= k):
        raise IndexError(f"class index out of range for {k} classes: {labels}")
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    loss = -float(np.mean(logp[np.arange(n), labels]))
    grad = np.exp(logp)
    grad[np.arange(n), labels] -= 1.0
    return loss, grad / n


def kl_std_normal(mu, logvar):
    """KL divergence to N(0, 1), averaged over elements: -0.5 mean(1 + lv - mu^2 - e^lv)."""
    mu = np.asarray(mu)
    logvar = np.asarray(logvar)
    n = mu.size
    ev = np.exp(logvar)
    loss = -0.5 * float(np.mean(1.0 + logvar - mu * mu - ev))
    return loss, mu / n, 0.5 * (ev - 1.0) / n


# --------------------------------------------------------------------------- layers


def _init(rng: np.random.Generator, shape, fan_in: int, dtype) -> np.ndarray:
    return (rng.standard_normal(shape) * np.sqrt(1.0 / fan_in)).astype(dtype)


class Layer:
    def parameters(self) -> list[Param]:
        return []


class Conv1d(Layer):
    def __init__(self, name, cin, cout, kernel, rng, dtype=np.float64):
        self.w = Param(f"{name}.w", _init(rng, (kernel, cin, cout), kernel * cin, dtype))
        self.b = Param(f"{name}.b", np.zeros(cout, dtype=dtype))
        self._cache = None

    def parameters(self):
        return [self.w, self.b]

    def forward(self, x):
        y, self._cache = conv1d_forward(x, self.w.data, self.b.data)
        return y

    def infer(self, x):
        return conv1d_forward(x, self.w.data, self.b.data)[0]

    def backward(self, g):
        dx, dw, db = conv1d_backward(g, self._cache)
        self.w.grad += dw
        self.b.grad += db
        return dx


class Linear(Layer):
    """Affine map on the last axis; leading axes are treated as batch."""

    def __init__(self, name, din, dout, rng, dtype=np.float64, bias_init=0.0):
        self.w = Param(f"{name}.w", _init(rng, (din, dout), din, dtype))
        self.b = Param(f"{name}.b", np.full(dout, bias_init, dtype=dtype))
        self._x = None

    def parameters(self):
        return [self.w, self.b]

    def forward(self, x):
        if x.shape[-1] != self.w.data.shape[0]:
            raise ShapeError(f"{self.w.name}: expected last dim {self.w.data.shape[0]}, got {x.shape}")
        self._x = x
        return x @ self.w.data + self.b.data

    def infer(self, x):
        return x @ self.w.data + self.b.data

    def backward(self, g):
        x2 = self._x.reshape(-1, self._x.shape[-1])
        g2 = g.reshape(-1, g.shape[-1])
        self.w.grad += x2.T @ g2
        self.b.grad += g2.sum(axis=0)
        return g @ self.w.data.T


class LeakyReLU(Layer):
    def __init__(self, slope=LEAKY_SLOPE):
        self.slope = slope
        self._mask = None

    def forward(self, x):
        self._mask = x > 0
        return np.where(self._mask, x, self.slope * x)

    def infer(self, x):
        return leaky_relu(x, self.slope)

    def backward(self, g):
        return np.where(self._mask, g, self.slope * g)


class InstanceNorm(Layer):
    def __init__(self, eps=NORM_EPS):
        self.eps = eps
        self._cache = None

    def forward(self, x):
        y, self._cache = instance_norm_forward(x, self.eps)
        return y

    def infer(self, x):
        return instance_norm(x, self.eps)

    def backward(self, g):
        return instance_norm_backward(g, self._cache)


class AdaIN(Layer):
    """Two-input layer: ``forward(x, gamma, beta)``; ``backward`` returns three gradients."""

    def __init__(self, eps=NORM_EPS):
        self.eps = eps
        self._cache = None

    def forward(self, x, gamma, beta):
        y, self._cache = adain_forward(x, gamma, beta, self.eps)
        return y

    def infer(self, x, gamma, beta):
        return adain(x, gamma, beta, self.eps)

    def backward(self, g):
        return adain_backward(g, self._cache)


class GradReverse(Layer):
    """Identity forward; multiplies the incoming gradient by ``-lam`` on the way back."""

    def __init__(self, lam=1.0):
        if lam < 0:
            raise ValueError("gradient reversal strength must be non-negative")
        self.lam = lam

    def forward(self, x):
        return x

    infer = forward

    def backward(self, g):
        return grad_reverse_backward(g, self.lam)


class TimeMeanPool(Layer):
    """``(B, T, C) -> (B, C)`` average over time."""

    def __init__(self):
        self._t = None

    def forward(self, x):
        self._t = x.shape[-2]
        return x.mean(axis=-2)

    def infer(self, x):
        return x.mean(axis=-2)

    def backward(self, g):
        return np.repeat(g[..., None, :] / self._t, self._t, axis=-2)


class Sequential(Layer):
    def __init__(self, *layers):
        self.layers = list(layers)

    def parameters(self):
        return [p for layer in self.layers for p in layer.parameters()]

    def forward(self, x):
        for layer in self.layers:
            x = layer.forward(x)
        return x

    def infer(self, x):
        for layer in self.layers:
            x = layer.infer(x)
        return x

    def backward(self, g):
        for layer in reversed(self.layers):
            g = layer.backward(g)
        return g


def pooled_mlp(name, din, hidden, n_out, rng, dtype=np.float64, *, frame_first=True):
    """Three fully connected layers producing one decision per sequence.

    With ``frame_first`` the first layer and its activation run on every frame
    and the result is averaged over time before the remaining two layers;
    otherwise the input is already a ``(B, din)`` vector.
    """
    l1 = Linear(f"{name}.fc1", din, hidden, rng, dtype)
    l2 = Linear(f"{name}.fc2", hidden, hidden, rng, dtype)
    l3 = Linear(f"{name}.fc3", hidden, n_out, rng, dtype)
    if frame_first:
        return Sequential(l1, LeakyReLU(), TimeMeanPool(), l2, LeakyReLU(), l3)
    return Sequential(l1, LeakyReLU(), l2, LeakyReLU(), l3)


def zero_grads(params: Iterable[Param]) -> None:
    for p in params:
        p.zero_grad()


# --------------------------------------------------------------------------- optimizer


@dataclass
class AdamState:
    lr: float = 0.0005
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: Sequence[Param], state: AdamState) -> None:
    """One bias-corrected Adam update in place. Moments are keyed by parameter name."""
    for p in params:
        if not np.all(np.isfinite(p.grad)):
            raise NonFiniteError(f"non-finite gradient in parameter {p.name!r}")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for p in params:
        m = state.m.get(p.name)
        if m is None:
            m = state.m[p.name] = np.zeros_like(p.data, dtype=np.float64)
            state.v[p.name] = np.zeros_like(p.data, dtype=np.float64)
        v = state.v[p.name]
        g = p.grad.astype(np.float64, copy=False)
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        step = state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        p.data -= step.astype(p.data.dtype, copy=False)


# --------------------------------------------------------------------------- gradient checking


def finite_diff_check(model, inputs, eps: float = 1e-4, *, max_entries: int | None = None,
                      seed: int = 0, min_eps: float = 1e-8, richardson: bool = False) -> float:
    """Largest relative gap between analytic and central-difference gradients.

    ``model`` must provide ``parameters()`` and ``loss(inputs, backward=...)``.
    When gradients are intentionally not those of the reported loss (gradient
    reversal), the model may provide ``fd_objective(inputs, param)``: the scalar
    whose true gradient w.r.t. ``param`` is what ``backward`` produces.

    A model may also provide ``kink_signature()``, the sign pattern of every
    non-smooth point (activation inputs, absolute-value residuals) from its last
    forward pass. A difference quotient taken across a kink says nothing about
    the derivative, so the step for that coordinate is divided by 10 until both
    probes keep the signature (down to ``min_eps``).

    With ``richardson`` each estimate combines steps h and h/2 as
    ``(4 D(h/2) - D(h)) / 3``, cancelling the O(h^2) error term. That allows a
    larger ``eps``, which keeps float64 roundoff (about one ulp of the loss
    over 2h) below what the 1e-8 denominator floor tolerates on zero gradients.

    With ``max_entries`` only that many seeded coordinates per parameter are
    probed. Relative error uses the denominator ``max(|a|, |b|, 1e-8)``.
    """
    params = model.parameters()
    zero_grads(params)
    model.loss(inputs, backward=True)
    analytic = {p.name: p.grad.copy() for p in params}
    objective = getattr(model, "fd_objective", None)
    signature = getattr(model, "kink_signature", None)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for p in params:
        if objective is None:
            f: Callable[[], float] = lambda: model.loss(inputs, backward=False)
        else:
            f = lambda p=p: objective(inputs, p)
        flat = p.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = np.sort(rng.choice(flat.size, size=max_entries, replace=False))
        a_flat = analytic[p.name].reshape(-1)
        if signature is not None:
            f()
            base = signature()
        for i in idx:
            orig = flat[i]

            def central(h):
                while True:
                    flat[i] = orig + h
                    up = f()
                    smooth = signature is None or np.array_equal(signature(), base)
                    flat[i] = orig - h
                    down = f()
                    smooth = smooth and (signature is None or np.array_equal(signature(), base))
                    flat[i] = orig
                    if smooth or h / 10 < min_eps:
                        return (up - down) / (2.0 * h), h
                    h /= 10

            num, h = central(eps)
            if richardson:
                half, h2 = central(h / 2)
                num = (4.0 * half - num) / 3.0 if h2 == h / 2 else half
            a = a_flat[i]
            rel = abs(a - num) / max(abs(a), abs(num), 1e-8)
            worst = max(worst, rel)
    return worst
