"""Adam on dictionaries of arrays, and checkpoint weight averaging."""
from dataclasses import dataclass

import numpy as np

from .exceptions import ShapeError


@dataclass
class AdamConfig:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 1e-4


def zero_moments(params):
    return {"m": {k: np.zeros_like(v) for k, v in params.items()},
            "v": {k: np.zeros_like(v) for k, v in params.items()}}


def adam_step(params, grads, moments, t, config):
    """One bias-corrected Adam step with L2 weight decay folded into the gradient.

    Returns new ``(params, moments)``; the inputs are left untouched.
    Parameters without an entry in ``grads`` are carried over unchanged.
    """
    if t < 1:
        raise ValueError(f"step counter must start at 1, got {t}")
    b1, b2 = config.beta1, config.beta2
    bc1 = 1.0 - b1 ** t
    bc2 = 1.0 - b2 ** t
    new_params, new_m, new_v = {}, {}, {}
    for name, p in params.items():
        if name not in grads:
            new_params[name] = p
            new_m[name] = moments["m"][name]
            new_v[name] = moments["v"][name]
            continue
        g = np.asarray(grads[name], dtype=np.float64)
        if g.shape != p.shape:
            raise ShapeError(name, p.shape, g.shape, "adam_step")
        if config.weight_decay:
            g = g + config.weight_decay * p
        m = b1 * moments["m"][name] + (1.0 - b1) * g
        v = b2 * moments["v"][name] + (1.0 - b2) * (g * g)
        new_params[name] = p - config.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + config.eps)
        new_m[name] = m
        new_v[name] = v
    return new_params, {"m": new_m, "v": new_v}


def average_weights(checkpoints):
    """Element-wise mean of a list of ``{name: array}`` snapshots."""
    if not checkpoints:
        raise ValueError("need at least one checkpoint to average")
    first = checkpoints[0]
    for i, ckpt in enumerate(checkpoints[1:], 1):
        if ckpt.keys() != first.keys():
            raise ShapeError("keys", sorted(first), sorted(ckpt), f"checkpoint {i}")
        for name, arr in ckpt.items():
            if np.shape(arr) != np.shape(first[name]):
                raise ShapeError(name, np.shape(first[name]), np.shape(arr), f"checkpoint {i}")
    return {name: np.mean([ckpt[name] for ckpt in checkpoints], axis=0) for name in first}
