"""Bonafide centroid under four update policies.

``acs``
    Adaptive centroid shift: the centroid is initialised with the first
    bonafide embedding seen and afterwards is the running mean of every
    bonafide embedding contributed, ``C' = (n C + s E) / (n + s)``.
``partial-acs``
    Same as ``acs`` up to and including ``freeze_epoch``, frozen afterwards.
``fixed``
    Seeded random unit vector, never updated.
``trainable``
    Initialised like ``fixed``; updated by the trainer's optimiser from the
    loss gradient.

States are immutable; every update returns a new :class:`CentroidState`.
"""
import csv
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from .exceptions import CentroidStateError, NonFiniteError, ShapeError


class Policy(str, Enum):
    ACS = "acs"
    FIXED = "fixed"
    TRAINABLE = "trainable"
    PARTIAL_ACS = "partial-acs"


DEFAULT_FREEZE_EPOCH = 5


@dataclass(frozen=True)
class BonafideBatchSummary:
    mean_embedding: np.ndarray
    sample_count: int

    def __post_init__(self):
        if self.sample_count < 1:
            raise CentroidStateError(f"sample_count must be >= 1, got {self.sample_count}")
        if not np.all(np.isfinite(self.mean_embedding)):
            raise NonFiniteError("bonafide batch mean contains non-finite values")

    @classmethod
    def from_embeddings(cls, embeddings):
        """Summarise the bonafide rows of a batch; ``None`` when there are none."""
        embeddings = np.asarray(embeddings, dtype=np.float64)
        if embeddings.shape[0] == 0:
            return None
        return cls(embeddings.mean(axis=0), embeddings.shape[0])


@dataclass(frozen=True)
class CentroidState:
    policy: Policy
    vector: np.ndarray | None = None
    count: int = 0
    freeze_epoch: int | None = None
    initialized: bool = False
    dim: int | None = field(default=None, compare=False)

    @property
    def updates_by_acs(self):
        return self.policy in (Policy.ACS, Policy.PARTIAL_ACS)

    def frozen_at(self, epoch):
        return self.policy is Policy.PARTIAL_ACS and epoch > self.freeze_epoch

    def snapshot(self):
        vec = None if self.vector is None else self.vector.copy()
        return replace(self, vector=vec)


def _random_unit(dim, rng):
    vec = rng.standard_normal(dim)
    return vec / np.linalg.norm(vec)


def make_policy(kind, dim, rng=None, freeze_epoch=DEFAULT_FREEZE_EPOCH):
    """Create an initial centroid state for ``kind``.

    ``rng`` is required for ``fixed`` and ``trainable``.
    """
    try:
        policy = Policy(kind)
    except ValueError:
        raise ValueError(f"unknown centroid policy {kind!r}; "
                         f"choose from {[p.value for p in Policy]}") from None
    if policy in (Policy.FIXED, Policy.TRAINABLE):
        if rng is None:
            raise ValueError(f"{policy.value} centroid needs a random generator")
        return CentroidState(policy, _random_unit(dim, rng), 0, None, True, dim)
    if policy is Policy.PARTIAL_ACS:
        if freeze_epoch is None or freeze_epoch < 0:
            raise ValueError(f"freeze_epoch must be >= 0, got {freeze_epoch}")
        return CentroidState(policy, None, 0, int(freeze_epoch), False, dim)
    return CentroidState(policy, None, 0, None, False, dim)


def acs_init(state, first):
    if state.initialized:
        raise CentroidStateError("centroid already initialised")
    first = np.array(first, dtype=np.float64)
    if first.ndim != 1:
        raise ShapeError("D", "1-D vector", first.shape, "acs_init")
    if state.dim is not None and first.shape[0] != state.dim:
        raise ShapeError("D", state.dim, first.shape[0], "acs_init")
    if not np.all(np.isfinite(first)):
        raise NonFiniteError("initial bonafide embedding contains non-finite values")
    return replace(state, vector=first, count=1, initialized=True, dim=first.shape[0])


def acs_update(state, summary):
    if not state.initialized:
        raise CentroidStateError("acs_update on an uninitialised centroid")
    if summary is None or summary.sample_count < 1:
        raise CentroidStateError("acs_update needs at least one bonafide sample; skip the batch instead")
    E = np.asarray(summary.mean_embedding, dtype=np.float64)
    if E.shape != state.vector.shape:
        raise ShapeError("D", state.vector.shape, E.shape, "acs_update")
    n, s = state.count, summary.sample_count
    vector = (n * state.vector + s * E) / (n + s)
    return replace(state, vector=vector, count=n + s)


def acs_observe(state, summary):
    """Initialise-or-update with a batch summary; no-op for ``None``.

    On an uninitialised state this initialises from the batch mean with
    weight ``s``, which is exactly what initialising from the batch's first
    bonafide row and then folding in the remaining ``s - 1`` rows produces.
    """
    if summary is None:
        return state
    if not state.initialized:
        state = acs_init(state, summary.mean_embedding)
        return replace(state, count=summary.sample_count)
    return acs_update(state, summary)


def policy_step(state, epoch, update, step=None):
    """Advance ``state`` by one minibatch.

    For ACS variants ``update`` is a :class:`BonafideBatchSummary` (or
    ``None`` when the batch has no bonafide samples).  For ``trainable`` it
    is the loss gradient w.r.t. the centroid and ``step(vector, grad)``
    returns the new vector.  ``fixed`` ignores everything.
    """
    if state.policy is Policy.FIXED:
        return state
    if state.policy is Policy.TRAINABLE:
        if update is None:
            return state
        if step is None:
            raise ValueError("trainable centroid needs a step function")
        vector = np.asarray(step(state.vector, np.asarray(update, dtype=np.float64)), dtype=np.float64)
        if not np.all(np.isfinite(vector)):
            raise NonFiniteError("trainable centroid became non-finite")
        return replace(state, vector=vector)
    # a frozen partial-ACS centroid still needs its first bonafide sample
    if state.frozen_at(epoch) and state.initialized:
        return state
    return acs_observe(state, update)


class CentroidTrace:
    """Per-step CSV log: step, count, first 8 components, L2 norm."""

    n_components = 8

    def __init__(self, path):
        self._fh = open(path, "w", newline="", encoding="utf-8")
        self._writer = csv.writer(self._fh, lineterminator="\n")
        self._writer.writerow(["step", "count"]
                              + [f"c{i}" for i in range(self.n_components)] + ["norm"])

    def log(self, step, state):
        if state.vector is None:
            comps = [""] * self.n_components
            norm = ""
        else:
            head = state.vector[: self.n_components]
            comps = [repr(float(x)) for x in head] + [""] * (self.n_components - len(head))
            norm = repr(float(np.linalg.norm(state.vector)))
        self._writer.writerow([step, state.count] + comps + [norm])

    def close(self):
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
