"""Per-frame two-layer perceptron standing in for a pretrained speech encoder.

``h_t = W2^T tanh(W1^T x_t + b1) + b2`` applied independently to every frame,
so ``(T, F)`` input gives ``(T, C)`` frame features.
"""
from dataclasses import dataclass

import numpy as np

from .exceptions import NonFiniteError, ShapeError


@dataclass
class EncoderParams:
    W1: np.ndarray  # (F, H)
    b1: np.ndarray  # (H,)
    W2: np.ndarray  # (H, C)
    b2: np.ndarray  # (C,)

    def __post_init__(self):
        for name in ("W1", "b1", "W2", "b2"):
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            if not np.all(np.isfinite(arr)):
                raise NonFiniteError(f"EncoderParams.{name} contains non-finite values")
            setattr(self, name, arr)
        F, H = self.W1.shape
        if self.b1.shape != (H,):
            raise ShapeError("H", (H,), self.b1.shape, "EncoderParams.b1")
        if self.W2.shape[0] != H:
            raise ShapeError("H", H, self.W2.shape[0], "EncoderParams.W2")
        if self.b2.shape != (self.W2.shape[1],):
            raise ShapeError("C", (self.W2.shape[1],), self.b2.shape, "EncoderParams.b2")

    @property
    def input_dim(self):
        return self.W1.shape[0]

    @property
    def output_dim(self):
        return self.W2.shape[1]

    @classmethod
    def init(cls, input_dim, hidden_dim, output_dim, rng):
        b1 = 1.0 / np.sqrt(input_dim)
        b2 = 1.0 / np.sqrt(hidden_dim)
        return cls(rng.uniform(-b1, b1, (input_dim, hidden_dim)), np.zeros(hidden_dim),
                   rng.uniform(-b2, b2, (hidden_dim, output_dim)), np.zeros(output_dim))


def _check(raw, params):
    raw = np.asarray(raw, dtype=np.float64)
    if raw.ndim not in (2, 3):
        raise ShapeError("ndim", "2 or 3", raw.ndim, "encoder input")
    if raw.shape[-1] != params.input_dim:
        raise ShapeError("F", params.input_dim, raw.shape[-1], "encoder input")
    return raw


def encoder_forward(raw, params, return_hidden=False):
    raw = _check(raw, params)
    hidden = np.tanh(raw @ params.W1 + params.b1)
    out = hidden @ params.W2 + params.b2
    return (out, hidden) if return_hidden else out


def encoder_backward(raw, params, upstream, hidden=None):
    """Gradients of ``sum(upstream * encoder_forward(raw))`` w.r.t. the parameters."""
    raw = _check(raw, params)
    upstream = np.asarray(upstream, dtype=np.float64)
    if hidden is None:
        hidden = np.tanh(raw @ params.W1 + params.b1)
    if upstream.shape != hidden.shape[:-1] + (params.output_dim,):
        raise ShapeError("C", params.output_dim, upstream.shape[-1], "encoder upstream")
    F, H, C = params.input_dim, hidden.shape[-1], params.output_dim
    g_hidden = (upstream @ params.W2.T) * (1.0 - hidden * hidden)
    return EncoderParams(
        W1=raw.reshape(-1, F).T @ g_hidden.reshape(-1, H),
        b1=g_hidden.reshape(-1, H).sum(axis=0),
        W2=hidden.reshape(-1, H).T @ upstream.reshape(-1, C),
        b2=upstream.reshape(-1, C).sum(axis=0),
    )
