import numpy as np
import pytest

from acs_spoof.data import (AttackMode, Dataset, SynthConfig, check_unseen, fix_length,
                            gen_synthetic, load_feature_file, load_features, parse_protocol,
                            read_manifest, save_feature_file, write_dataset, write_manifest,
                            write_protocol)
from acs_spoof.evaluation import compute_eer
from acs_spoof.exceptions import FormatError, ShapeError

SMALL = dict(n_bonafide_train=10, n_spoof_train=30, n_bonafide_dev=4, n_spoof_dev=6,
             n_bonafide_eval=5, n_spoof_eval=8)


def test_generator_is_deterministic():
    a = gen_synthetic(SynthConfig(seed=3, **SMALL))
    b = gen_synthetic(SynthConfig(seed=3, **SMALL))
    for x, y in zip(a, b):
        assert x.utt_ids == y.utt_ids and x.keys == y.keys and x.system_ids == y.system_ids
        assert all(f.tobytes() == g.tobytes() for f, g in zip(x.frames, y.frames))
    c = gen_synthetic(SynthConfig(seed=4, **SMALL))
    assert a[0].frames[0].tobytes() != c[0].frames[0].tobytes()


def test_split_sizes_and_modes():
    cfg = SynthConfig(**SMALL)
    train, dev, ev = gen_synthetic(cfg)
    assert train.labels.sum() == 10 and (~train.labels).sum() == 30
    assert dev.labels.sum() == 4 and (~dev.labels).sum() == 6
    assert ev.labels.sum() == 5 and (~ev.labels).sum() == 8
    train_sys = {s for s, k in zip(train.system_ids, train.keys) if k == "spoof"}
    eval_sys = {s for s, k in zip(ev.system_ids, ev.keys) if k == "spoof"}
    assert train_sys == {m.system_id for m in cfg.attack_modes_train}
    assert eval_sys == {m.system_id for m in cfg.attack_modes_eval_unseen}
    assert not train_sys & eval_sys
    assert all(cfg.t_min <= f.shape[0] <= cfg.t_max and f.shape[1] == cfg.frame_dim for f in train.frames)


def test_default_config_counts():
    cfg = SynthConfig()
    assert (cfg.frame_dim, cfg.n_bonafide_train, cfg.n_spoof_train) == (20, 200, 1800)
    assert len(cfg.attack_modes_train) == 3 and len(cfg.attack_modes_eval_unseen) == 2


def test_unseen_overlap_rejected():
    modes = SynthConfig().attack_modes_train
    with pytest.raises(ValueError, match="overlap"):
        gen_synthetic(SynthConfig(attack_modes_eval_unseen=modes, **SMALL))
    clone = (AttackMode("Z99", *modes[0].params()),)
    with pytest.raises(ValueError, match="duplicates"):
        gen_synthetic(SynthConfig(attack_modes_eval_unseen=clone, **SMALL))


@pytest.mark.parametrize("bad", [dict(noise=-1.0), dict(t_min=5, t_max=4), dict(n_spoof_dev=0)])
def test_invalid_config(bad):
    with pytest.raises(ValueError):
        SynthConfig(**bad).validate()


def test_noise_free_clone_is_identically_distributed():
    # an attack with no perturbation draws from the bonafide process itself
    cfg = SynthConfig(noise=0.0, attack_modes_train=(AttackMode("A01", shift=1.0),),
                      attack_modes_eval_unseen=(AttackMode("CLONE"),), n_bonafide_eval=400,
                      n_spoof_eval=400, **{k: v for k, v in SMALL.items() if "eval" not in k})
    _, _, ev = gen_synthetic(cfg)
    # no per-utterance statistic can separate the classes beyond sampling noise
    stats = np.array([f.mean(axis=0) for f in ev.frames])
    for col in range(3):
        eer = compute_eer(stats[ev.labels, col], stats[~ev.labels, col])[0]
        assert abs(eer - 0.5) < 0.08


def test_config_dict_round_trip():
    cfg = SynthConfig(seed=9, noise=0.2)
    assert SynthConfig.from_dict(cfg.to_dict()) == cfg


def test_fix_length():
    x = np.arange(6.0).reshape(3, 2)
    np.testing.assert_array_equal(fix_length(x, 2), x[:2])
    np.testing.assert_array_equal(fix_length(x, 7)[:, 0], [0, 2, 4, 0, 2, 4, 0])


def test_dataset_validation():
    f = [np.zeros((2, 3))]
    with pytest.raises(ValueError):
        Dataset(["a"], f, ["genuine"], ["-"])
    with pytest.raises(ValueError):
        Dataset(["a"], f, ["spoof"], ["-"])
    with pytest.raises(ValueError):
        Dataset(["a", "a"], f * 2, ["bonafide"] * 2, ["-"] * 2)
    with pytest.raises(ShapeError):
        Dataset(["a", "b"], [np.zeros((2, 3)), np.zeros((2, 4))], ["bonafide"] * 2, ["-"] * 2)


def test_check_unseen():
    f = [np.zeros((1, 1))]
    tr = Dataset(["a"], f, ["spoof"], ["A01"])
    with pytest.raises(ValueError):
        check_unseen(tr, Dataset(["b"], f, ["spoof"], ["A01"]))
    check_unseen(tr, Dataset(["b"], f, ["spoof"], ["A11"]))


# -- protocol ----------------------------------------------------------------

def test_parse_protocol(tmp_path):
    p = tmp_path / "proto.txt"
    p.write_text("LA_0001 LA_T_1000001 - - bonafide\nLA_0002 LA_T_1000002 - A01 spoof\n")
    assert parse_protocol(p) == [("LA_0001", "LA_T_1000001", "-", "bonafide"),
                                 ("LA_0002", "LA_T_1000002", "A01", "spoof")]


def test_parse_protocol_errors(tmp_path):
    p = tmp_path / "proto.txt"
    p.write_text("LA_0001 LA_T_1 - - bonafide\nLA_0001 LA_T_2 - - genuine\n")
    with pytest.raises(FormatError) as err:
        parse_protocol(p)
    assert err.value.lineno == 2
    p.write_text("LA_0001 LA_T_1 bonafide\n")
    with pytest.raises(FormatError):
        parse_protocol(p)
    p.write_text("")
    assert parse_protocol(p) == []


# -- feature files -----------------------------------------------------------

def test_feature_file_is_bit_exact(tmp_path):
    rng = np.random.default_rng(0)
    x = rng.standard_normal((7, 5)).astype(np.float32)
    path = tmp_path / "x.f32"
    save_feature_file(path, x)
    raw = path.read_bytes()
    assert raw[:8] == np.array([7, 5], dtype="<u4").tobytes()
    assert len(raw) == 8 + 7 * 5 * 4
    y = load_feature_file(path)
    assert y.dtype == np.float32 and y.tobytes() == x.tobytes()


def test_truncated_feature_file(tmp_path):
    path = tmp_path / "x.f32"
    path.write_bytes(np.array([3, 2], dtype="<u4").tobytes() + b"\0" * 8)
    with pytest.raises(ValueError):
        load_feature_file(path)


def _written(tmp_path, n=3):
    rng = np.random.default_rng(1)
    ds = Dataset([f"u{i}" for i in range(n)], [rng.standard_normal((4, 3)) for _ in range(n)],
                 ["bonafide"] + ["spoof"] * (n - 1), ["-"] + ["A01"] * (n - 1), "train")
    write_manifest(write_dataset(ds, tmp_path), tmp_path / "manifest.csv")
    return ds


def test_load_features_round_trip(tmp_path):
    ds = _written(tmp_path)
    loaded = load_features(tmp_path)
    assert len(loaded) == 3 and loaded.keys == ds.keys and loaded.system_ids == ds.system_ids
    for a, b in zip(ds.frames, loaded.frames):
        np.testing.assert_array_equal(a.astype(np.float32).astype(np.float64), b)
    assert len(load_features(tmp_path, split="dev")) == 0


def test_load_features_missing_file(tmp_path):
    _written(tmp_path)
    (tmp_path / "features" / "u1.f32").unlink()
    with pytest.raises(FileNotFoundError, match="u1"):
        load_features(tmp_path)


def test_load_features_dimension_mismatch(tmp_path):
    _written(tmp_path)
    save_feature_file(tmp_path / "features" / "u2.f32", np.zeros((4, 5), np.float32))
    with pytest.raises(ShapeError):
        load_features(tmp_path)


def test_load_features_with_protocol(tmp_path):
    ds = _written(tmp_path)
    ds.speaker_ids = ["S1", "S2", "S3"]
    write_protocol(ds, tmp_path / "proto.txt")
    loaded = load_features(tmp_path, protocol=tmp_path / "proto.txt")
    assert loaded.speaker_ids == ["S1", "S2", "S3"] and loaded.keys == ds.keys
    (tmp_path / "proto.txt").write_text("S1 u0 - - bonafide\n")
    with pytest.raises(KeyError):
        load_features(tmp_path, protocol=tmp_path / "proto.txt")


def test_manifest_header_checked(tmp_path):
    (tmp_path / "manifest.csv").write_text("id,path\n")
    with pytest.raises(FormatError):
        read_manifest(tmp_path / "manifest.csv")
