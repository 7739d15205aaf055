"""Training: batch composition, the model, the loop, checkpoints.

A model is a flat ``{name: array}`` parameter dictionary (encoder, pooling
and any loss-owned parameters) plus the centroid state.  Parameter names:

=============  ==========================================
``enc_W1`` ..  per-frame encoder (see :mod:`.encoder`)
``asp_W`` ..   attentive pooling (see :mod:`.asp`)
``wce_W/b``    linear head, ``wce`` loss only
``ocs_w``      OC-Softmax direction, ``oc-softmax`` loss only
``centroid``   trainable centroid, ``trainable`` policy only
=============  ==========================================
"""
import csv
import hashlib
import json
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import centroid as cen
from .asp import AspParams, asp_backward, asp_forward
from .data import stack_fixed
from .encoder import EncoderParams, encoder_backward, encoder_forward
from .evaluation import compute_eer
from .exceptions import NonFiniteError
from .losses import (DEFAULT_CLASS_WEIGHTS, OCSoftmaxConfig, cosine, linear_head,
                     linear_head_backward, ocsoftmax_loss, oc_loss, wce_loss, wce_score)
from .optim import AdamConfig, adam_step, average_weights, zero_moments
from .seeding import substream

LOSSES = ("acs-oc", "oc-softmax", "wce")
UPDATE_ORDERS = ("update-then-loss", "loss-then-update")
CHECKPOINT_VERSION = 1


@dataclass
class TrainConfig:
    batch_size: int = 20
    bonafide_per_batch: int = 2
    learning_rate: float = 1e-3
    weight_decay: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    max_epochs: int = 100
    patience: int = 7
    top_k_average: int = 5
    seed: int = 0
    loss: str = "acs-oc"
    centroid: str = "acs"
    freeze_epoch: int = cen.DEFAULT_FREEZE_EPOCH
    update_order: str = "update-then-loss"
    hidden_dim: int = 32
    channels: int = 16
    segment_frames: int = 48
    activation: str = "tanh"
    oc_m_bona: float = 0.9
    oc_m_spoof: float = 0.2
    oc_alpha: float = 20.0
    wce_weight_spoof: float = DEFAULT_CLASS_WEIGHTS[0]
    wce_weight_bonafide: float = DEFAULT_CLASS_WEIGHTS[1]

    def validate(self):
        if not 0 < self.bonafide_per_batch < self.batch_size:
            raise ValueError("need 0 < bonafide_per_batch < batch_size")
        if self.patience < 1 or self.top_k_average < 1 or self.max_epochs < 1:
            raise ValueError("patience, top_k_average and max_epochs must be >= 1")
        if self.loss not in LOSSES:
            raise ValueError(f"unknown loss {self.loss!r}; choose from {LOSSES}")
        if self.update_order not in UPDATE_ORDERS:
            raise ValueError(f"unknown update order {self.update_order!r}")
        cen.Policy(self.centroid)
        if self.learning_rate <= 0 or self.weight_decay < 0:
            raise ValueError("learning_rate must be > 0 and weight_decay >= 0")
        return self

    @property
    def adam(self):
        return AdamConfig(self.learning_rate, self.beta1, self.beta2, self.adam_eps, self.weight_decay)

    @property
    def ocsoftmax(self):
        return OCSoftmaxConfig(self.oc_m_bona, self.oc_m_spoof, self.oc_alpha)

    def digest(self):
        blob = json.dumps(asdict(self), sort_keys=True).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()[:16]


# -- batches -----------------------------------------------------------------

def compose_batches(labels, config, rng):
    """Index batches with exactly ``bonafide_per_batch`` bonafide rows each.

    Spoof rows are shuffled and used at most once per epoch (the remainder
    that does not fill a batch is dropped); bonafide rows are cycled,
    reshuffling on each pass.
    """
    labels = np.asarray(getattr(labels, "labels", labels), dtype=bool)
    n_bona = config.bonafide_per_batch
    n_spoof = config.batch_size - n_bona
    bona = np.flatnonzero(labels)
    spoof = np.flatnonzero(~labels)
    if bona.size < n_bona:
        raise ValueError(f"not enough bonafide samples: need {n_bona}, have {bona.size}")
    if spoof.size < n_spoof:
        raise ValueError(f"not enough spoof samples: need {n_spoof}, have {spoof.size}")
    n_batches = spoof.size // n_spoof
    spoof = rng.permutation(spoof)
    passes = -(-n_batches * n_bona // bona.size)
    bona = np.concatenate([rng.permutation(bona) for _ in range(passes)])
    return [np.concatenate([bona[i * n_bona:(i + 1) * n_bona], spoof[i * n_spoof:(i + 1) * n_spoof]])
            for i in range(n_batches)]


# -- model -------------------------------------------------------------------

def init_params(frame_dim, config, rng):
    enc = EncoderParams.init(frame_dim, config.hidden_dim, config.channels, rng)
    asp = AspParams.init(config.channels, rng)
    params = {"enc_W1": enc.W1, "enc_b1": enc.b1, "enc_W2": enc.W2, "enc_b2": enc.b2,
              "asp_W": asp.W, "asp_b": asp.b, "asp_v": asp.v}
    D = 2 * config.channels
    if config.loss == "wce":
        bound = 1.0 / np.sqrt(D)
        params["wce_W"] = rng.uniform(-bound, bound, (D, 2))
        params["wce_b"] = np.zeros(2)
    elif config.loss == "oc-softmax":
        w = rng.standard_normal(D)
        params["ocs_w"] = w / np.linalg.norm(w)
    return params


def _encoder(params):
    return EncoderParams(params["enc_W1"], params["enc_b1"], params["enc_W2"], params["enc_b2"])


def _asp(params):
    return AspParams(params["asp_W"], params["asp_b"], params["asp_v"])


@dataclass
class Model:
    params: dict
    config: TrainConfig
    centroid: cen.CentroidState | None = None

    def embed(self, frames):
        """Utterance embeddings for a list of (T_i, F) arrays or a (B, T, F) array."""
        X = self._stack(frames)
        h = encoder_forward(X, _encoder(self.params))
        return asp_forward(h, _asp(self.params), self.config.activation)

    def _stack(self, frames):
        if isinstance(frames, np.ndarray) and frames.ndim == 3:
            return frames.astype(np.float64, copy=False)
        return stack_fixed(frames, self.config.segment_frames)

    def score_embeddings(self, emb):
        loss = self.config.loss
        if loss == "acs-oc":
            if self.centroid is None or not self.centroid.initialized:
                raise RuntimeError("model has no centroid yet")
            return cosine(emb, self.centroid.vector)
        if loss == "oc-softmax":
            return cosine(emb, self.params["ocs_w"])
        return wce_score(linear_head(emb, self.params["wce_W"], self.params["wce_b"]))

    def score(self, frames):
        """Detection scores, higher = bonafide."""
        return self.score_embeddings(self.embed(frames))


def forward_backward(params, X, y, config, centroid_vector=None):
    """Loss value and parameter gradients for one batch.

    Returns ``(value, grads, centroid_grad)``; ``centroid_grad`` is only
    non-``None`` for the ``acs-oc`` loss.
    """
    enc = _encoder(params)
    asp = _asp(params)
    h, hidden = encoder_forward(X, enc, return_hidden=True)
    emb = asp_forward(h, asp, config.activation)
    grads = {}
    centroid_grad = None
    if config.loss == "acs-oc":
        out = oc_loss(emb, y, centroid_vector)
        g_emb = out.grads
        centroid_grad = out.centroid_grad
    elif config.loss == "oc-softmax":
        out = ocsoftmax_loss(emb, y, params["ocs_w"], config.ocsoftmax)
        g_emb = out.grads
        grads["ocs_w"] = out.param_grads["w"]
    else:
        logits = linear_head(emb, params["wce_W"], params["wce_b"])
        out = wce_loss(logits, y, (config.wce_weight_spoof, config.wce_weight_bonafide))
        g_emb, head = linear_head_backward(emb, params["wce_W"], out.grads)
        grads["wce_W"], grads["wce_b"] = head["W"], head["b"]
    g_h, g_asp = asp_backward(h, asp, g_emb, config.activation)
    g_enc = encoder_backward(X, enc, g_h, hidden)
    grads.update(enc_W1=g_enc.W1, enc_b1=g_enc.b1, enc_W2=g_enc.W2, enc_b2=g_enc.b2,
                 asp_W=g_asp.W, asp_b=g_asp.b, asp_v=g_asp.v)
    return out.value, grads, centroid_grad


# -- training loop -----------------------------------------------------------

class TrainingDiverged(RuntimeError):
    pass


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    dev_eer: float
    centroid_count: int
    wall_time_s: float


@dataclass
class Checkpoint:
    epoch: int
    dev_eer: float
    params: dict
    centroid: cen.CentroidState | None


@dataclass
class TrainHistory:
    records: list = field(default_factory=list)
    step_losses: list = field(default_factory=list)
    checkpoints: dict = field(default_factory=dict)
    stop_epoch: int | None = None
    best_epoch: int | None = None
    averaged_epochs: list = field(default_factory=list)

    def top_k(self, k):
        """Checkpoints with the lowest dev EER, earlier epochs first on ties."""
        ranked = sorted(self.checkpoints.values(), key=lambda c: (c.dev_eer, c.epoch))
        return ranked[:k]


LOG_FIELDS = ["epoch", "train_loss", "dev_eer", "centroid_count", "wall_time_s"]


def write_train_log(history, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(LOG_FIELDS)
        for r in history.records:
            writer.writerow([r.epoch, repr(r.train_loss), repr(r.dev_eer), r.centroid_count,
                             f"{r.wall_time_s:.3f}"])


def _snapshot(params, state):
    snap = {k: v.copy() for k, v in params.items()}
    if state is not None and state.policy is cen.Policy.TRAINABLE:
        snap["centroid"] = state.vector.copy()
    return snap


class EarlyStopping:
    """Stop once ``patience`` consecutive epochs fail to beat the best dev EER."""

    def __init__(self, patience):
        self.patience = patience
        self.best = np.inf
        self.best_epoch = None
        self.bad_epochs = 0

    def update(self, epoch, value):
        if value < self.best:
            self.best, self.best_epoch, self.bad_epochs = value, epoch, 0
        else:
            self.bad_epochs += 1
        return self.bad_epochs >= self.patience


def train_loop(train, dev, config, trace=None, log=None):
    """Train on ``train``, early-stop on ``dev`` EER, return the averaged model.

    ``trace`` is an optional :class:`~.centroid.CentroidTrace`; ``log`` an
    optional callable receiving each :class:`EpochRecord`.
    """
    config = config.validate()
    if dev.labels.all() or not dev.labels.any():
        raise ValueError("dev set needs both bonafide and spoof utterances")
    seed = config.seed
    params = init_params(train.frame_dim, config, substream(seed, "init"))
    state = None
    D = 2 * config.channels
    if config.loss == "acs-oc":
        state = cen.make_policy(config.centroid, D, substream(seed, "init/centroid"), config.freeze_epoch)
    X_train = stack_fixed(train.frames, config.segment_frames)
    y_train = train.labels
    X_dev = stack_fixed(dev.frames, config.segment_frames)
    y_dev = dev.labels

    adam = config.adam
    moments = zero_moments(params)
    cent_moments = zero_moments({"centroid": np.zeros(D)})
    history = TrainHistory()
    stopper = EarlyStopping(config.patience)
    step = 0
    start = time.perf_counter()
    update_first = config.update_order == "update-then-loss"

    for epoch in range(1, config.max_epochs + 1):
        batches = compose_batches(y_train, config, substream(seed, f"batching/{epoch}"))
        epoch_losses = []
        for idx in batches:
            X, y = X_train[idx], y_train[idx]
            step += 1
            pending = None
            if state is not None and state.updates_by_acs:
                emb = Model(params, config).embed(X)
                summary = cen.BonafideBatchSummary.from_embeddings(emb[y])
                # the loss needs a centroid, so initialisation always comes first
                if update_first or not state.initialized:
                    state = cen.policy_step(state, epoch, summary)
                else:
                    pending = summary
            value, grads, c_grad = forward_backward(
                params, X, y, config, None if state is None else state.vector)
            if not np.isfinite(value):
                raise TrainingDiverged(f"non-finite loss at epoch {epoch}, step {step}")
            params, moments = adam_step(params, grads, moments, step, adam)
            if state is not None and state.policy is cen.Policy.TRAINABLE:
                def _step(vec, g):
                    nonlocal cent_moments
                    out, cent_moments = adam_step({"centroid": vec}, {"centroid": g}, cent_moments, step, adam)
                    return out["centroid"]
                state = cen.policy_step(state, epoch, c_grad, step=_step)
            elif pending is not None:
                state = cen.policy_step(state, epoch, pending)
            if trace is not None and state is not None:
                trace.log(step, state)
            epoch_losses.append(value)
            history.step_losses.append(value)

        model = Model(params, config, state)
        dev_scores = model.score(X_dev)
        dev_eer, _ = compute_eer(dev_scores[y_dev], dev_scores[~y_dev])
        record = EpochRecord(epoch, float(np.mean(epoch_losses)), dev_eer,
                             0 if state is None else state.count, time.perf_counter() - start)
        history.records.append(record)
        history.checkpoints[epoch] = Checkpoint(epoch, dev_eer, _snapshot(params, state),
                                                None if state is None else state.snapshot())
        if log is not None:
            log(record)
        if stopper.update(epoch, dev_eer):
            break

    history.stop_epoch = history.records[-1].epoch
    history.best_epoch = stopper.best_epoch
    return finalize(history, config), history


def finalize(history, config):
    """Average the top-k checkpoints; keep the best checkpoint's centroid."""
    chosen = history.top_k(config.top_k_average)
    history.averaged_epochs = [c.epoch for c in chosen]
    averaged = average_weights([c.params for c in chosen])
    state = chosen[0].centroid
    if state is not None and state.policy is cen.Policy.TRAINABLE:
        state = replace(state, vector=averaged.pop("centroid"))
    return Model(averaged, config, state)


# -- checkpoint files --------------------------------------------------------

def _state_to_arrays(state):
    if state is None:
        return {}
    meta = {"policy": state.policy.value, "count": state.count,
            "freeze_epoch": state.freeze_epoch, "initialized": state.initialized, "dim": state.dim}
    out = {"centroid_meta": np.array(json.dumps(meta))}
    if state.vector is not None:
        out["centroid_vector"] = state.vector
    return out


def _state_from_arrays(arrays):
    if "centroid_meta" not in arrays:
        return None
    meta = json.loads(str(arrays["centroid_meta"]))
    vector = arrays["centroid_vector"].copy() if "centroid_vector" in arrays else None
    return cen.CentroidState(cen.Policy(meta["policy"]), vector, meta["count"],
                             meta["freeze_epoch"], meta["initialized"], meta["dim"])


def save_model(model, path, extra=None):
    """Write parameters, centroid state and config to one ``.npz`` file."""
    header = {"version": CHECKPOINT_VERSION, "config": asdict(model.config),
              "config_hash": model.config.digest(), **(extra or {})}
    arrays = {f"param/{k}": v for k, v in model.params.items()}
    arrays.update(_state_to_arrays(model.centroid))
    arrays["header"] = np.array(json.dumps(header, sort_keys=True))
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_model(path):
    with np.load(path, allow_pickle=False) as z:
        arrays = {k: z[k] for k in z.files}
    header = json.loads(str(arrays.pop("header")))
    if header.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {header.get('version')}")
    config = TrainConfig(**header["config"])
    if config.digest() != header["config_hash"]:
        raise ValueError(f"{path}: config hash mismatch")
    params = {k[len("param/"):]: v for k, v in arrays.items() if k.startswith("param/")}
    return Model(params, config, _state_from_arrays(arrays))
