"""Command-line interface: ``acs-spoof {gen-data,train,eval,ablate,dump-embeddings}``.

Config files are INI (``configparser``) with optional sections

``[synth]``      any scalar :class:`~.data.SynthConfig` field
``[attack.train.<ID>]`` / ``[attack.eval.<ID>]``
                 attack modes (``shift``, ``scale``, ``mix``, ``corr``); when a
                 group has any section it replaces the default modes
``[train]``      any :class:`~.train.TrainConfig` field
``[tdcf]``       any :class:`~.evaluation.TdcfParams` field

Values resolve as command-line flag > config file > built-in default, and
every run writes the resolved values back out as INI so it can be replayed
with ``--config``.

Exit codes: 0 success, 1 runtime failure, 2 usage or config error.
"""
import argparse
import configparser
import csv
import json
import sys
from dataclasses import asdict, fields
from pathlib import Path

import numpy as np

from . import centroid as cen
from .data import AttackMode, SynthConfig, gen_synthetic, load_features, write_dataset, write_manifest, \
    write_protocol
from .evaluation import (ScoreRecord, TdcfParams, dump_embeddings, evaluate_scores, quantize,
                         write_score_file)
from .exceptions import FormatError
from .train import LOSSES, Model, TrainConfig, load_model, save_model, train_loop, write_train_log

CENTROIDS = tuple(p.value for p in cen.Policy)
CENTROID_AXIS = ("fixed", "trainable", "partial-acs", "acs")
LOSS_AXIS = ("wce", "oc-softmax", "acs-oc")


class ConfigError(Exception):
    pass


# -- config files ------------------------------------------------------------

def _coerce(cls, name, raw):
    if name not in {f.name for f in fields(cls)}:
        raise ConfigError(f"unknown {cls.__name__} field {name!r}")
    default = getattr(cls(), name)
    if isinstance(default, tuple):
        raise ConfigError(f"{cls.__name__}.{name} is set through [attack.*] sections")
    try:
        if isinstance(default, bool):
            return raw.strip().lower() in ("1", "true", "yes", "on")
        if isinstance(default, (int, float)):
            return type(default)(raw)
    except ValueError as exc:
        raise ConfigError(f"{cls.__name__}.{name}: {exc}") from None
    return raw


def read_config(path):
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    if path is not None:
        if not Path(path).is_file():
            raise ConfigError(f"config file not found: {path}")
        try:
            parser.read(path, encoding="utf-8")
        except configparser.Error as exc:
            raise ConfigError(f"{path}: {exc}") from None
    known = {"synth", "train", "tdcf"}
    for name in parser.sections():
        if name not in known and not name.startswith(("attack.train.", "attack.eval.")):
            raise ConfigError(f"unknown config section [{name}]")
    return parser


def _section(parser, name, cls):
    if not parser.has_section(name):
        return {}
    return {k: _coerce(cls, k, v) for k, v in parser.items(name)}


def _attack_modes(parser, group):
    modes = []
    prefix = f"attack.{group}."
    for name in parser.sections():
        if name.startswith(prefix):
            kw = {}
            for k, v in parser.items(name):
                if k not in ("shift", "scale", "mix", "corr"):
                    raise ConfigError(f"[{name}]: unknown attack field {k!r}")
                kw[k] = None if k == "corr" and v.strip().lower() == "none" else float(v)
            modes.append(AttackMode(name[len(prefix):], **kw))
    return tuple(modes)


def resolve_synth(parser, overrides):
    kw = _section(parser, "synth", SynthConfig)
    for group, key in (("train", "attack_modes_train"), ("eval", "attack_modes_eval_unseen")):
        modes = _attack_modes(parser, group)
        if modes:
            kw[key] = modes
    kw.update({k: v for k, v in overrides.items() if v is not None})
    return SynthConfig(**kw)


def resolve_train(parser, overrides):
    kw = _section(parser, "train", TrainConfig)
    kw.update({k: v for k, v in overrides.items() if v is not None})
    return TrainConfig(**kw)


def resolve_tdcf(parser):
    return TdcfParams(**_section(parser, "tdcf", TdcfParams))


def _fmt(v):
    return "none" if v is None else repr(v) if isinstance(v, float) else str(v)


def synth_to_ini(cfg, parser=None):
    parser = parser or configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    d = cfg.to_dict()
    parser["synth"] = {k: _fmt(v) for k, v in d.items() if not isinstance(v, list)}
    for group, key in (("train", "attack_modes_train"), ("eval", "attack_modes_eval_unseen")):
        for m in d[key]:
            parser[f"attack.{group}.{m['system_id']}"] = {
                k: _fmt(v) for k, v in m.items() if k != "system_id"}
    return parser


def train_to_ini(cfg, parser=None):
    parser = parser or configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    parser["train"] = {k: _fmt(v) for k, v in asdict(cfg).items()}
    return parser


def write_ini(parser, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        parser.write(fh)


# -- subcommands -------------------------------------------------------------

def _train_overrides(args):
    return {"loss": args.loss, "centroid": args.centroid, "freeze_epoch": args.freeze_epoch,
            "seed": args.seed, "learning_rate": args.lr, "max_epochs": args.max_epochs,
            "patience": args.patience, "batch_size": args.batch_size,
            "bonafide_per_batch": args.bonafide_per_batch, "update_order": args.update_order}


def _load_split(data, split, protocol=None):
    ds = load_features(data, split=split, protocol=protocol)
    if len(ds) == 0:
        raise ValueError(f"no '{split}' utterances under {data}")
    return ds


def cmd_gen_data(args):
    parser = read_config(args.config)
    cfg = resolve_synth(parser, {"seed": args.seed}).validate()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for ds in gen_synthetic(cfg):
        rows += write_dataset(ds, out)
        write_protocol(ds, out / f"protocol_{ds.split}.txt")
        systems = sorted({s for s, k in zip(ds.system_ids, ds.keys) if k == "spoof"})
        print(f"{ds.split}: {int(ds.labels.sum())} bonafide, {int((~ds.labels).sum())} spoof "
              f"({', '.join(systems)})")
    write_manifest(rows, out / "manifest.csv")
    write_ini(synth_to_ini(cfg), out / "synth.ini")
    return 0


def run_training(data, cfg, out):
    """Train on ``data``'s train/dev splits and write a run directory."""
    train = _load_split(data, "train")
    dev = _load_split(data, "dev")
    out = Path(out)
    (out / "checkpoints").mkdir(parents=True, exist_ok=True)
    write_ini(train_to_ini(cfg), out / "config.ini")
    trace = cen.CentroidTrace(out / "centroid_trace.csv") if cfg.loss == "acs-oc" else None
    try:
        model, hist = train_loop(train, dev, cfg, trace=trace,
                                 log=lambda r: print(f"epoch {r.epoch:3d}  loss {r.train_loss:+.5f}  "
                                                     f"dev EER {100 * r.dev_eer:.2f}%  n={r.centroid_count}"))
    finally:
        if trace is not None:
            trace.close()
    write_train_log(hist, out / "train_log.csv")
    info = {"best_epoch": hist.best_epoch, "stop_epoch": hist.stop_epoch,
            "averaged_epochs": hist.averaged_epochs}
    save_model(model, out / "model.npz", extra=info)
    best = hist.checkpoints[hist.best_epoch]
    params = dict(best.params)
    state = best.centroid
    if "centroid" in params:
        state = cen.CentroidState(state.policy, params.pop("centroid"), state.count,
                                  state.freeze_epoch, state.initialized, state.dim)
    save_model(Model(params, cfg, state), out / "checkpoints" / f"epoch_{hist.best_epoch:03d}.npz",
               extra={"epoch": hist.best_epoch})
    if model.centroid is not None:
        c = model.centroid
        with open(out / "centroid.json", "w", encoding="utf-8") as fh:
            json.dump({"policy": c.policy.value, "count": c.count, "freeze_epoch": c.freeze_epoch,
                       "vector": None if c.vector is None else c.vector.tolist()}, fh, indent=1)
    with open(out / "summary.json", "w", encoding="utf-8") as fh:
        json.dump(info, fh, indent=1)
    return model, hist


def cmd_train(args):
    parser = read_config(args.config)
    cfg = resolve_train(parser, _train_overrides(args)).validate()
    _, hist = run_training(args.data, cfg, args.out)
    print(f"best epoch {hist.best_epoch}, stopped at {hist.stop_epoch}, "
          f"averaged {hist.averaged_epochs}")
    return 0


def score_dataset(model, ds):
    """Quantised score records, exactly what the score file will hold."""
    scores = model.score(ds.frames)
    return [ScoreRecord(u, quantize(s), k) for u, s, k in zip(ds.utt_ids, scores, ds.keys)]


def eer_of(records, tdcf=None):
    b = np.array([r.score for r in records if r.key == "bonafide"])
    s = np.array([r.score for r in records if r.key == "spoof"])
    return evaluate_scores(b, s, tdcf)


def cmd_eval(args):
    if not Path(args.model).is_file():
        raise FileNotFoundError(f"model checkpoint not found: {args.model}")
    tdcf = None
    if args.tdcf_params:
        tdcf = resolve_tdcf(read_config(args.tdcf_params)).validate()
    model = load_model(args.model)
    ds = _load_split(args.data, args.split, args.protocol)
    records = score_dataset(model, ds)
    if args.scores:
        write_score_file(records, args.scores)
    report = eer_of(records, tdcf)
    for line in report.lines():
        print(line)
    return 0


def cmd_dump_embeddings(args):
    model = load_model(args.model)
    ds = _load_split(args.data, args.split)
    dump_embeddings(model, ds, args.out)
    return 0


def ablation_cells(axis):
    if axis == "centroid":
        return [(f"{c}", {"loss": "acs-oc", "centroid": c}) for c in CENTROID_AXIS]
    return [(f"{l}", {"loss": l, "centroid": "acs"}) for l in LOSS_AXIS]


def cmd_ablate(args):
    parser = read_config(args.config)
    base = resolve_train(parser, _train_overrides(args))
    train = _load_split(args.data, "train")
    dev = _load_split(args.data, "dev")
    ev = _load_split(args.data, args.split)
    cells = ablation_cells(args.axis)
    if args.only:
        cells = [c for c in cells if c[0] in args.only]
        if not cells:
            raise ConfigError(f"--only matched nothing on axis {args.axis}")
    seeds = [base.seed + i for i in range(args.seeds)]
    rows = []
    for name, kw in cells:
        eers = []
        for seed in seeds:
            cfg = TrainConfig(**{**asdict(base), **kw, "seed": seed}).validate()
            model, _ = train_loop(train, dev, cfg)
            eers.append(eer_of(score_dataset(model, ev)).eer)
            print(f"{args.axis}={name} seed={seed} EER {100 * eers[-1]:.2f}%")
        rows.append([name, len(eers), f"{np.mean(eers):.6f}", f"{np.std(eers):.6f}",
                     " ".join(f"{e:.6f}" for e in eers)])
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([args.axis, "n_seeds", "mean_eer", "std_eer", "eers"])
        w.writerows(rows)
    write_ini(train_to_ini(base), out.with_suffix(".ini"))
    return 0


# -- argument parsing --------------------------------------------------------

def _add_train_flags(p):
    p.add_argument("--config", help="INI config file")
    p.add_argument("--seed", type=int)
    p.add_argument("--loss", choices=LOSSES)
    p.add_argument("--centroid", choices=CENTROIDS)
    p.add_argument("--freeze-epoch", type=int, help="last epoch of ACS updates for partial-acs")
    p.add_argument("--update-order", choices=("update-then-loss", "loss-then-update"))
    p.add_argument("--lr", type=float)
    p.add_argument("--max-epochs", type=int)
    p.add_argument("--patience", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--bonafide-per-batch", type=int)


def build_parser():
    ap = argparse.ArgumentParser(prog="acs-spoof", description="One-class spoofing detection with an "
                                 "adaptive centroid, on synthetic or pre-extracted features.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="write a synthetic train/dev/eval feature set")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--config")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train one model")
    p.add_argument("--data", required=True, help="directory holding manifest.csv")
    p.add_argument("--out", required=True, help="run directory")
    _add_train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a split and report EER")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="eval")
    p.add_argument("--protocol", help="take keys from this protocol file instead of the manifest")
    p.add_argument("--scores", help="write a score file here")
    p.add_argument("--tdcf-params", help="INI file with a [tdcf] section; enables min t-DCF")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="mean/std EER over seeds for each centroid policy or loss")
    p.add_argument("--axis", choices=("centroid", "loss"), required=True)
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="eval")
    p.add_argument("--out", required=True, help="CSV path")
    p.add_argument("--only", nargs="+", help="restrict to these cells")
    _add_train_flags(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("dump-embeddings", help="write utterance embeddings to CSV")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="eval")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_dump_embeddings)
    return ap


def main(argv=None):
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"acs-spoof: config error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, KeyError, OSError, RuntimeError, FormatError) as exc:
        print(f"acs-spoof: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
