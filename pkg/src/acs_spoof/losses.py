"""Training objectives and the inference score.

* :func:`oc_loss` -- cosine one-class loss against a given centroid.
* :func:`ocsoftmax_loss` -- OC-Softmax baseline (trainable direction, two margins).
* :func:`wce_loss` with :func:`linear_head` -- weighted cross-entropy baseline.

Labels are boolean arrays, ``True`` for bonafide.  All losses return a
:class:`LossOutput` whose ``grads`` hold d(value)/d(embedding) row by row.
"""
from dataclasses import dataclass, field

import numpy as np

from .exceptions import DegenerateCosineError, NonFiniteError, ShapeError


@dataclass
class LossOutput:
    value: float
    grads: np.ndarray
    centroid_grad: np.ndarray | None = None
    param_grads: dict = field(default_factory=dict)


def _as_batch(embeddings, labels):
    r = np.asarray(embeddings, dtype=np.float64)
    y = np.asarray(labels, dtype=bool)
    if r.ndim != 2:
        raise ShapeError("ndim", 2, r.ndim, "embeddings")
    if y.shape != (r.shape[0],):
        raise ShapeError("N", r.shape[0], y.shape, "labels")
    if r.shape[0] < 1:
        raise ValueError("empty batch")
    if not np.all(np.isfinite(r)):
        raise NonFiniteError("embeddings contain non-finite values")
    return r, y


def _sq_norms(r, what):
    n2 = np.einsum("...d,...d->...", r, r)
    if np.any(n2 == 0):
        raise DegenerateCosineError(f"zero-norm {what}; cosine is undefined")
    return n2


_SNAP = 8 * np.finfo(np.float64).eps


def _cos(r, c, r2, c2):
    cos = np.clip((r @ c) / np.sqrt(r2 * c2), -1.0, 1.0)
    # the quotient carries a few ulps of rounding, so collinear rows can land
    # just inside +-1; anything that close is +-1 to input precision
    return np.where(np.abs(cos) >= 1.0 - _SNAP, np.sign(cos), cos)


def cosine(r, c):
    """Row-wise cosine between ``r`` (N, D) or (D,) and a single vector ``c``."""
    r = np.asarray(r, dtype=np.float64)
    c = np.asarray(c, dtype=np.float64)
    return _cos(r, c, _sq_norms(r, "embedding"), _sq_norms(c, "centroid"))


def _cosine_grads(r, c):
    """cos(r_i, c) with its gradients w.r.t. each r_i and w.r.t. c."""
    r2 = _sq_norms(r, "embedding")
    c2 = _sq_norms(c, "centroid")
    cos = _cos(r, c, r2, c2)
    rn = np.sqrt(r2)
    cn = np.sqrt(c2)
    d_r = (c[None, :] / cn - cos[:, None] * r / rn[:, None]) / rn[:, None]
    d_c = (r / rn[:, None] - cos[:, None] * c[None, :] / cn) / cn
    return cos, d_r, d_c


def score(embedding, centroid):
    """Detection score: cosine to the centroid, higher means bonafide."""
    return cosine(embedding, centroid)


def oc_loss(embeddings, labels, centroid):
    """Mean cosine of spoof rows minus mean cosine of bonafide rows.

    A class with no members in the batch contributes nothing.  The centroid
    gradient is always returned; the trainer only uses it for a trainable
    centroid.
    """
    r, y = _as_batch(embeddings, labels)
    c = np.asarray(centroid, dtype=np.float64)
    if c.shape != (r.shape[1],):
        raise ShapeError("D", r.shape[1], c.shape, "centroid")
    cos, d_r, d_c = _cosine_grads(r, c)
    m_b, m_s = int(y.sum()), int((~y).sum())
    coef = np.where(y, -1.0 / max(m_b, 1), 1.0 / max(m_s, 1))
    value = (-cos[y].mean() if m_b else 0.0) + (cos[~y].mean() if m_s else 0.0)
    return LossOutput(float(value), coef[:, None] * d_r, centroid_grad=coef @ d_c)


@dataclass
class OCSoftmaxConfig:
    m_bona: float = 0.9
    m_spoof: float = 0.2
    alpha: float = 20.0


def _softplus(x):
    return np.logaddexp(0.0, x)


def _sigmoid(x):
    return np.exp(-np.logaddexp(0.0, -x))


def ocsoftmax_loss(embeddings, labels, w, config=None):
    """OC-Softmax: mean of softplus(alpha * (m_bona - cos)) over bonafide rows
    and softplus(alpha * (cos - m_spoof)) over spoof rows, with cosine taken
    against the normalised direction ``w``.

    ``param_grads["w"]`` is the gradient w.r.t. the unnormalised ``w``.
    """
    cfg = config or OCSoftmaxConfig()
    r, y = _as_batch(embeddings, labels)
    w = np.asarray(w, dtype=np.float64)
    if w.shape != (r.shape[1],):
        raise ShapeError("D", r.shape[1], w.shape, "ocsoftmax direction")
    if not np.all(np.isfinite(w)):
        raise NonFiniteError("ocsoftmax direction contains non-finite values")
    cos, d_r, d_w = _cosine_grads(r, w)
    sign = np.where(y, -1.0, 1.0)
    margin = np.where(y, cfg.m_bona, cfg.m_spoof)
    z = cfg.alpha * sign * (cos - margin)
    n = r.shape[0]
    value = float(_softplus(z).sum() / n)
    coef = _sigmoid(z) * cfg.alpha * sign / n
    return LossOutput(value, coef[:, None] * d_r, param_grads={"w": coef @ d_w})


DEFAULT_CLASS_WEIGHTS = (0.1, 0.9)  # (spoof, bonafide)


def linear_head(embeddings, W, b):
    """Two-way logits ``r @ W + b``; column 1 is the bonafide logit."""
    r = np.asarray(embeddings, dtype=np.float64)
    if W.shape != (r.shape[-1], 2):
        raise ShapeError("D", (r.shape[-1], 2), W.shape, "linear head")
    return r @ W + b


def linear_head_backward(embeddings, W, g_logits):
    r = np.asarray(embeddings, dtype=np.float64)
    return g_logits @ W.T, {"W": r.T @ g_logits, "b": g_logits.sum(axis=0)}


def wce_loss(logits, labels, class_weights=DEFAULT_CLASS_WEIGHTS):
    """Weighted cross entropy, normalised by the summed sample weights.

    ``class_weights`` is ``(spoof, bonafide)``; ``grads`` are w.r.t. logits.
    """
    z = np.asarray(logits, dtype=np.float64)
    y = np.asarray(labels, dtype=bool)
    if z.ndim != 2 or z.shape[1] != 2:
        raise ShapeError("logits", "(N, 2)", z.shape, "wce_loss")
    if y.shape != (z.shape[0],):
        raise ShapeError("N", z.shape[0], y.shape, "labels")
    if not np.all(np.isfinite(z)):
        raise NonFiniteError("logits contain non-finite values")
    cw = np.asarray(class_weights, dtype=np.float64)
    if cw.shape != (2,) or np.any(cw <= 0):
        raise ValueError(f"class_weights must be two positive numbers, got {class_weights}")
    target = y.astype(int)
    log_p = z - np.logaddexp(z[:, 0], z[:, 1])[:, None]
    sw = cw[target]
    total = sw.sum()
    ce = -log_p[np.arange(len(y)), target]
    value = float(np.sum(sw * ce) / total)
    g = np.exp(log_p)
    g[np.arange(len(y)), target] -= 1.0
    g *= (sw / total)[:, None]
    return LossOutput(value, g)


def wce_score(logits):
    """Bonafide-minus-spoof logit, a monotone transform of P(bonafide)."""
    z = np.asarray(logits, dtype=np.float64)
    return z[..., 1] - z[..., 0]
