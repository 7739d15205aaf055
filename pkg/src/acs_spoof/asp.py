"""Attentive statistics pooling.

Frame-level features ``h`` (T x C) are scored with a one-hidden-layer
attention network, the scores are softmax-normalised over time, and the
utterance embedding is the concatenation of the attention-weighted mean and
standard deviation (length ``2C``).

Every function accepts a single sequence ``(T, C)`` or a batch of
equal-length sequences ``(B, T, C)``.  Gradients are written out by hand;
everything runs in float64.
"""
from dataclasses import dataclass

import numpy as np

from .exceptions import NonFiniteError, ShapeError

VAR_EPS = 1e-9

_ACTIVATIONS = {
    "tanh": (np.tanh, lambda pre, out: 1.0 - out * out),
    "relu": (lambda x: np.maximum(x, 0.0), lambda pre, out: (pre > 0).astype(np.float64)),
}


@dataclass
class AspParams:
    W: np.ndarray  # (C, C), applied as W @ h_t
    b: np.ndarray  # (C,)
    v: np.ndarray  # (C,)

    def __post_init__(self):
        self.W = np.asarray(self.W, dtype=np.float64)
        self.b = np.asarray(self.b, dtype=np.float64)
        self.v = np.asarray(self.v, dtype=np.float64)
        C = self.b.shape[0] if self.b.ndim == 1 else -1
        if self.W.shape != (C, C):
            raise ShapeError("C", (C, C), self.W.shape, "AspParams.W")
        if self.v.shape != (C,):
            raise ShapeError("C", (C,), self.v.shape, "AspParams.v")
        for name in ("W", "b", "v"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise NonFiniteError(f"AspParams.{name} contains non-finite values")

    @property
    def channels(self):
        return self.b.shape[0]

    @classmethod
    def init(cls, channels, rng):
        """W, v ~ U(-1/sqrt(C), 1/sqrt(C)); b = 0."""
        bound = 1.0 / np.sqrt(channels)
        W = rng.uniform(-bound, bound, size=(channels, channels))
        v = rng.uniform(-bound, bound, size=channels)
        return cls(W=W, b=np.zeros(channels), v=v)

    def zeros_like(self):
        return AspParams(np.zeros_like(self.W), np.zeros_like(self.b), np.zeros_like(self.v))


def as_frames(seq):
    """Validate a frame sequence and return it as float64.

    Rejects empty sequences and non-finite entries.
    """
    seq = np.asarray(seq, dtype=np.float64)
    if seq.ndim not in (2, 3):
        raise ShapeError("ndim", "2 or 3", seq.ndim, "frame sequence")
    if seq.shape[-2] < 1:
        raise ShapeError("T", ">= 1", seq.shape[-2], "frame sequence")
    if seq.shape[-1] < 1:
        raise ShapeError("C", ">= 1", seq.shape[-1], "frame sequence")
    if not np.all(np.isfinite(seq)):
        raise NonFiniteError("frame sequence contains non-finite values")
    return seq


def _check(seq, params):
    seq = as_frames(seq)
    if seq.shape[-1] != params.channels:
        raise ShapeError("C", params.channels, seq.shape[-1], "asp")
    return seq


def _activation(name):
    try:
        return _ACTIVATIONS[name]
    except KeyError:
        raise ValueError(f"unknown activation {name!r}; choose from {sorted(_ACTIVATIONS)}") from None


def attention_scores(seq, params, activation="tanh"):
    """Per-frame scalar scores e_t = v . f(W h_t + b)."""
    seq = _check(seq, params)
    f, _ = _activation(activation)
    return f(seq @ params.W.T + params.b) @ params.v


def normalize_scores(e, axis=-1):
    """Softmax over time with max-subtraction."""
    e = np.asarray(e, dtype=np.float64)
    if not np.all(np.isfinite(e)):
        raise NonFiniteError("attention scores contain non-finite values")
    z = np.exp(e - e.max(axis=axis, keepdims=True))
    return z / z.sum(axis=axis, keepdims=True)


def _forward(seq, params, activation):
    f, _ = _activation(activation)
    pre = seq @ params.W.T + params.b
    act = f(pre)
    alpha = normalize_scores(act @ params.v)
    mu = np.einsum("...t,...tc->...c", alpha, seq)
    second = np.einsum("...t,...tc->...c", alpha, seq * seq)
    var = second - mu * mu
    sigma = np.sqrt(np.maximum(var, 0.0) + VAR_EPS)
    cache = (pre, act, alpha, mu, var, sigma)
    return np.concatenate([mu, sigma], axis=-1), cache


def asp_forward(seq, params, activation="tanh"):
    """Pool ``seq`` into ``[weighted mean, weighted std]``."""
    seq = _check(seq, params)
    out, _ = _forward(seq, params, activation)
    return out


def asp_backward(seq, params, upstream, activation="tanh"):
    """Vector-Jacobian product of :func:`asp_forward`.

    Returns ``(grad_seq, grad_params)`` where ``grad_params`` is an
    :class:`AspParams` holding dW, db, dv summed over the batch.
    """
    seq = _check(seq, params)
    C = params.channels
    upstream = np.asarray(upstream, dtype=np.float64)
    if upstream.shape != seq.shape[:-2] + (2 * C,):
        raise ShapeError("D", seq.shape[:-2] + (2 * C,), upstream.shape, "asp_backward upstream")
    if not np.all(np.isfinite(upstream)):
        raise NonFiniteError("upstream gradient contains non-finite values")
    _, dact = _activation(activation)
    pre, act, alpha, mu, var, sigma = _forward(seq, params, activation)[1]

    g_mu = upstream[..., :C]
    g_sigma = upstream[..., C:]
    # clamped region of the variance has zero derivative
    g_var = np.where(var > 0, g_sigma / (2.0 * sigma), 0.0)
    g_mu_total = g_mu - 2.0 * mu * g_var

    g_alpha = (np.einsum("...tc,...c->...t", seq, g_mu_total)
               + np.einsum("...tc,...c->...t", seq * seq, g_var))
    g_seq = (alpha[..., None] * g_mu_total[..., None, :]
             + 2.0 * alpha[..., None] * seq * g_var[..., None, :])

    g_e = alpha * (g_alpha - np.sum(alpha * g_alpha, axis=-1, keepdims=True))
    g_pre = g_e[..., None] * params.v * dact(pre, act)
    g_seq = g_seq + g_pre @ params.W

    flat_pre = g_pre.reshape(-1, C)
    grads = AspParams(
        W=flat_pre.T @ seq.reshape(-1, C),
        b=flat_pre.sum(axis=0),
        v=g_e.reshape(-1) @ act.reshape(-1, C),
    )
    return g_seq, grads
