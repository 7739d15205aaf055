"""Datasets: a synthetic multi-attack generator and on-disk feature sets.

Bonafide utterances come from one smooth latent process: a low-rank AR(1)
trajectory around a shared mean, plus a per-speaker offset.  Each attack
mode perturbs that process in its own way (mean shift along a mode-specific
direction, rescaled latent amplitude, partly replaced loading matrix,
different temporal correlation).  Dev shares the training attacks; eval
holds only attacks never seen in training.

On disk every utterance is one ``.f32`` file (little-endian ``uint32`` T and
F, then T*F row-major float32 values) listed in a ``manifest.csv`` with
columns ``utt_id,path,key,system_id,split``.
"""
import csv
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import FormatError, ShapeError
from .seeding import substream

KEYS = ("bonafide", "spoof")
BONAFIDE_SYSTEM = "-"


@dataclass(frozen=True)
class AttackMode:
    system_id: str
    shift: float = 0.0   # length of the mean offset
    scale: float = 1.0   # latent amplitude relative to bonafide
    mix: float = 0.0     # fraction of the loading matrix replaced, in [0, 1]
    corr: float | None = None  # AR(1) coefficient; None = bonafide's

    def params(self):
        return (self.shift, self.scale, self.mix, self.corr)


DEFAULT_TRAIN_ATTACKS = (
    AttackMode("A01", shift=1.2, scale=1.0, mix=0.0),
    AttackMode("A02", shift=0.0, scale=1.8, mix=0.3),
    AttackMode("A03", shift=0.6, scale=0.6, mix=0.6),
)
DEFAULT_UNSEEN_ATTACKS = (
    AttackMode("A11", shift=0.9, scale=1.3, mix=0.2),
    AttackMode("A12", shift=0.4, scale=0.8, mix=0.8, corr=0.3),
)


@dataclass
class SynthConfig:
    frame_dim: int = 20
    t_min: int = 32
    t_max: int = 64
    n_bonafide_train: int = 200
    n_spoof_train: int = 1800
    n_bonafide_dev: int = 100
    n_spoof_dev: int = 300
    n_bonafide_eval: int = 200
    n_spoof_eval: int = 1000
    n_speakers: int = 20
    latent_dim: int = 4
    bonafide_corr: float = 0.9
    speaker_std: float = 0.5
    noise: float = 0.1
    attack_modes_train: tuple = DEFAULT_TRAIN_ATTACKS
    attack_modes_eval_unseen: tuple = DEFAULT_UNSEEN_ATTACKS
    seed: int = 0

    def validate(self):
        if self.frame_dim < 1 or self.latent_dim < 1:
            raise ValueError("frame_dim and latent_dim must be >= 1")
        if not 1 <= self.t_min <= self.t_max:
            raise ValueError(f"need 1 <= t_min <= t_max, got {self.t_min}, {self.t_max}")
        for name in ("n_bonafide_train", "n_spoof_train", "n_bonafide_dev", "n_spoof_dev",
                     "n_bonafide_eval", "n_spoof_eval", "n_speakers"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.noise < 0:
            raise ValueError("noise must be >= 0")
        if not self.attack_modes_train or not self.attack_modes_eval_unseen:
            raise ValueError("need at least one train and one unseen attack mode")
        train_ids = {m.system_id for m in self.attack_modes_train}
        eval_ids = {m.system_id for m in self.attack_modes_eval_unseen}
        clash = train_ids & eval_ids
        if clash:
            raise ValueError(f"unseen attack modes overlap training modes: {sorted(clash)}")
        train_params = {m.params() for m in self.attack_modes_train}
        for m in self.attack_modes_eval_unseen:
            if m.params() in train_params:
                raise ValueError(f"unseen attack {m.system_id} duplicates a training attack's parameters")
        ids = [m.system_id for m in self.attack_modes_train + self.attack_modes_eval_unseen]
        if len(set(ids)) != len(ids) or BONAFIDE_SYSTEM in ids:
            raise ValueError("attack system ids must be unique and not '-'")
        for m in self.attack_modes_train + self.attack_modes_eval_unseen:
            if not 0.0 <= m.mix <= 1.0 or m.scale < 0:
                raise ValueError(f"attack {m.system_id}: need 0 <= mix <= 1 and scale >= 0")
            if m.corr is not None and not -1.0 < m.corr < 1.0:
                raise ValueError(f"attack {m.system_id}: corr must lie in (-1, 1)")
        return self

    def to_dict(self):
        d = asdict(self)
        d["attack_modes_train"] = [asdict(m) for m in self.attack_modes_train]
        d["attack_modes_eval_unseen"] = [asdict(m) for m in self.attack_modes_eval_unseen]
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        for k in ("attack_modes_train", "attack_modes_eval_unseen"):
            if k in d:
                d[k] = tuple(AttackMode(**m) if isinstance(m, dict) else m for m in d[k])
        return cls(**d)


@dataclass
class Dataset:
    utt_ids: list
    frames: list          # (T_i, F) float64 arrays
    keys: list            # "bonafide" | "spoof"
    system_ids: list
    split: str = ""
    speaker_ids: list = field(default_factory=list)

    def __post_init__(self):
        n = len(self.utt_ids)
        if not (len(self.frames) == len(self.keys) == len(self.system_ids) == n):
            raise ValueError("dataset columns have different lengths")
        if len(set(self.utt_ids)) != n:
            raise ValueError("duplicate utterance ids")
        for utt, key, sid in zip(self.utt_ids, self.keys, self.system_ids):
            if key not in KEYS:
                raise ValueError(f"{utt}: unknown key {key!r}")
            if key == "spoof" and (not sid or sid == BONAFIDE_SYSTEM):
                raise ValueError(f"{utt}: spoof utterance without a system id")
        dims = {f.shape[1] for f in self.frames}
        if len(dims) > 1:
            raise ShapeError("F", min(dims), max(dims), f"dataset {self.split}")
        if not self.speaker_ids:
            self.speaker_ids = ["-"] * n

    def __len__(self):
        return len(self.utt_ids)

    @property
    def labels(self):
        return np.array([k == "bonafide" for k in self.keys], dtype=bool)

    @property
    def frame_dim(self):
        return self.frames[0].shape[1]

    def key_map(self):
        return dict(zip(self.utt_ids, self.keys))

    def subset(self, mask):
        idx = np.flatnonzero(mask)
        return Dataset([self.utt_ids[i] for i in idx], [self.frames[i] for i in idx],
                       [self.keys[i] for i in idx], [self.system_ids[i] for i in idx],
                       self.split, [self.speaker_ids[i] for i in idx])

    def only_systems(self, system_ids):
        """Bonafide plus the spoofs of the given attack systems."""
        keep = set(system_ids)
        return self.subset([k == "bonafide" or s in keep for k, s in zip(self.keys, self.system_ids)])


def fix_length(frames, length):
    """Crop to the first ``length`` frames, or tile a short utterance until it fits."""
    frames = np.asarray(frames)
    T = frames.shape[0]
    if T >= length:
        return frames[:length]
    reps = -(-length // T)
    return np.tile(frames, (reps, 1))[:length]


def stack_fixed(frames, length):
    return np.stack([fix_length(f, length) for f in frames]).astype(np.float64, copy=False)


def check_unseen(train, evaluation):
    """Raise if any spoof system in ``evaluation`` also occurs in ``train``."""
    seen = {s for s, k in zip(train.system_ids, train.keys) if k == "spoof"}
    unseen = {s for s, k in zip(evaluation.system_ids, evaluation.keys) if k == "spoof"}
    clash = seen & unseen
    if clash:
        raise ValueError(f"eval attacks also present in train: {sorted(clash)}")


# -- synthetic generator -----------------------------------------------------

class _World:
    """Fixed random structure shared by every utterance of one config."""

    def __init__(self, cfg):
        rng = substream(cfg.seed, "data/world")
        F, k = cfg.frame_dim, cfg.latent_dim
        self.mean = rng.standard_normal(F) * 0.5
        self.loading = rng.standard_normal((F, k)) / np.sqrt(k)
        self.speakers = rng.standard_normal((cfg.n_speakers, k)) * cfg.speaker_std
        self.modes = {}
        for m in cfg.attack_modes_train + cfg.attack_modes_eval_unseen:
            mrng = substream(cfg.seed, f"data/mode/{m.system_id}")
            d = mrng.standard_normal(F)
            other = mrng.standard_normal((F, k)) / np.sqrt(k)
            self.modes[m.system_id] = (d / np.linalg.norm(d), other)


def _utterance(world, cfg, mode, speaker, rng):
    T = int(rng.integers(cfg.t_min, cfg.t_max + 1))
    k = cfg.latent_dim
    corr = cfg.bonafide_corr if mode is None or mode.corr is None else mode.corr
    z = np.empty((T, k))
    z[0] = rng.standard_normal(k)
    innov = np.sqrt(1.0 - corr * corr)
    for t in range(1, T):
        z[t] = corr * z[t - 1] + innov * rng.standard_normal(k)
    z += world.speakers[speaker]
    loading, offset, scale = world.loading, 0.0, 1.0
    if mode is not None:
        direction, other = world.modes[mode.system_id]
        loading = np.sqrt(1.0 - mode.mix ** 2) * world.loading + mode.mix * other
        offset = mode.shift * direction
        scale = mode.scale
    x = world.mean + offset + scale * (z @ loading.T)
    return x + cfg.noise * rng.standard_normal(x.shape)


def _split(world, cfg, split, n_bona, n_spoof, modes, rng):
    frames, keys, systems, speakers = [], [], [], []
    tag = split[0].upper()
    plan = [(None, n_bona)]
    base, extra = divmod(n_spoof, len(modes))
    plan += [(m, base + (i < extra)) for i, m in enumerate(modes)]
    for mode, count in plan:
        for _ in range(count):
            spk = int(rng.integers(cfg.n_speakers))
            frames.append(_utterance(world, cfg, mode, spk, rng))
            keys.append("bonafide" if mode is None else "spoof")
            systems.append(BONAFIDE_SYSTEM if mode is None else mode.system_id)
            speakers.append(f"SPK_{spk:04d}")
    order = rng.permutation(len(frames))
    utt = [f"SYN_{tag}_{i:07d}" for i in range(len(frames))]
    return Dataset(utt, [frames[i] for i in order], [keys[i] for i in order],
                   [systems[i] for i in order], split, [speakers[i] for i in order])


def gen_synthetic(cfg=None):
    """Return ``(train, dev, eval)`` datasets; deterministic in ``cfg.seed``."""
    cfg = (cfg or SynthConfig()).validate()
    world = _World(cfg)
    train = _split(world, cfg, "train", cfg.n_bonafide_train, cfg.n_spoof_train,
                   cfg.attack_modes_train, substream(cfg.seed, "data/train"))
    dev = _split(world, cfg, "dev", cfg.n_bonafide_dev, cfg.n_spoof_dev,
                 cfg.attack_modes_train, substream(cfg.seed, "data/dev"))
    evaluation = _split(world, cfg, "eval", cfg.n_bonafide_eval, cfg.n_spoof_eval,
                        cfg.attack_modes_eval_unseen, substream(cfg.seed, "data/eval"))
    check_unseen(train, evaluation)
    return train, dev, evaluation


# -- protocol files ----------------------------------------------------------

def parse_protocol(path):
    """Read an ASVspoof LA protocol: ``speaker utt - system key`` per line."""
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 5:
                raise FormatError(path, lineno, f"expected 5 fields, got {len(parts)}")
            speaker, utt, _, system, key = parts
            if key not in KEYS:
                raise FormatError(path, lineno, f"unknown key {key!r} (expected bonafide or spoof)")
            rows.append((speaker, utt, system, key))
    return rows


def write_protocol(dataset, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for spk, utt, sid, key in zip(dataset.speaker_ids, dataset.utt_ids,
                                      dataset.system_ids, dataset.keys):
            fh.write(f"{spk} {utt} - {sid} {key}\n")


# -- feature container -------------------------------------------------------

_HEADER = np.dtype("<u4")
_VALUES = np.dtype("<f4")


def save_feature_file(path, frames):
    frames = np.asarray(frames)
    if frames.ndim != 2:
        raise ShapeError("ndim", 2, frames.ndim, str(path))
    with open(path, "wb") as fh:
        fh.write(np.array(frames.shape, dtype=_HEADER).tobytes())
        fh.write(np.ascontiguousarray(frames, dtype=_VALUES).tobytes())


def load_feature_file(path):
    raw = Path(path).read_bytes()
    if len(raw) < 8:
        raise ValueError(f"{path}: truncated header")
    T, F = np.frombuffer(raw[:8], dtype=_HEADER)
    body = np.frombuffer(raw[8:], dtype=_VALUES)
    if body.size != int(T) * int(F):
        raise ValueError(f"{path}: header says {T}x{F} but file holds {body.size} values")
    return body.reshape(int(T), int(F)).copy()


MANIFEST_FIELDS = ["utt_id", "path", "key", "system_id", "split"]


def write_dataset(dataset, root, feature_dir="features"):
    """Write feature files for ``dataset``; return its manifest rows."""
    root = Path(root)
    (root / feature_dir).mkdir(parents=True, exist_ok=True)
    rows = []
    for utt, frames, key, sid in zip(dataset.utt_ids, dataset.frames, dataset.keys, dataset.system_ids):
        rel = f"{feature_dir}/{utt}.f32"
        save_feature_file(root / rel, frames)
        rows.append({"utt_id": utt, "path": rel, "key": key, "system_id": sid, "split": dataset.split})
    return rows


def write_manifest(rows, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=MANIFEST_FIELDS, lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)


def read_manifest(path):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != MANIFEST_FIELDS:
            raise FormatError(path, 1, f"expected header {','.join(MANIFEST_FIELDS)}")
        rows = []
        for lineno, row in enumerate(reader, 2):
            if None in row or any(row[k] is None for k in MANIFEST_FIELDS):
                raise FormatError(path, lineno, "wrong number of columns")
            if row["key"] not in KEYS:
                raise FormatError(path, lineno, f"unknown key {row['key']!r}")
            rows.append(row)
    return rows


def load_features(root, manifest="manifest.csv", split=None, protocol=None):
    """Load a feature set listed in a manifest.

    ``split`` keeps only that split's rows.  With ``protocol`` the keys and
    system ids come from the protocol file instead of the manifest, and every
    manifest utterance must appear in it.
    """
    root = Path(root)
    manifest_path = manifest if os.path.isabs(manifest) else root / manifest
    rows = read_manifest(manifest_path)
    if split is not None:
        rows = [r for r in rows if r["split"] == split]
    speakers = {}
    if protocol is not None:
        proto = {utt: (spk, sid, key) for spk, utt, sid, key in parse_protocol(protocol)}
        absent = [r["utt_id"] for r in rows if r["utt_id"] not in proto]
        if absent:
            raise KeyError(f"utterances missing from protocol: {absent}")
        for r in rows:
            spk, r["system_id"], r["key"] = proto[r["utt_id"]]
            speakers[r["utt_id"]] = spk
    missing = [r["utt_id"] for r in rows if not (root / r["path"]).is_file()]
    if missing:
        raise FileNotFoundError(f"feature files missing for utterances: {missing}")
    frames = [load_feature_file(root / r["path"]).astype(np.float64) for r in rows]
    dims = {f.shape[1] for f in frames}
    if len(dims) > 1:
        raise ShapeError("F", min(dims), max(dims), f"features under {root}")
    splits = {r["split"] for r in rows}
    return Dataset([r["utt_id"] for r in rows], frames, [r["key"] for r in rows],
                   [r["system_id"] for r in rows], split or ",".join(sorted(splits)),
                   [speakers.get(r["utt_id"], "-") for r in rows])
