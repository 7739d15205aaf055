import math

import numpy as np
import pytest

from acs_spoof import centroid as cen
from acs_spoof.data import AttackMode, SynthConfig, gen_synthetic
from acs_spoof.encoder import EncoderParams, encoder_backward, encoder_forward
from acs_spoof.evaluation import compute_eer
from acs_spoof.optim import AdamConfig, adam_step, average_weights, zero_moments
from acs_spoof.train import (EarlyStopping, Model, TrainConfig, compose_batches, forward_backward,
                             init_params, load_model, save_model, train_loop, write_train_log)
from gradcheck import max_rel_error, numerical_grad

TINY = dict(n_bonafide_train=20, n_spoof_train=90, n_bonafide_dev=10, n_spoof_dev=20,
            n_bonafide_eval=10, n_spoof_eval=20, t_min=8, t_max=12)


def tiny_config(**kw):
    base = dict(hidden_dim=8, channels=4, segment_frames=8, max_epochs=4, patience=2, top_k_average=2)
    return TrainConfig(**{**base, **kw})


# -- batches -----------------------------------------------------------------

def test_batches_have_two_bonafide_and_eighteen_spoof():
    labels = np.array([True] * 200 + [False] * 1800)
    batches = compose_batches(labels, TrainConfig(), np.random.default_rng(0))
    assert len(batches) == 100
    for b in batches:
        assert len(b) == 20 and labels[b[:2]].all() and not labels[b[2:]].any()
    spoof_used = np.concatenate([b[2:] for b in batches])
    assert len(set(spoof_used)) == 1800  # every spoof row exactly once


def test_batch_remainder_dropped_and_bonafide_cycled():
    labels = np.array([True] * 3 + [False] * 40)
    batches = compose_batches(labels, TrainConfig(), np.random.default_rng(1))
    assert len(batches) == 2
    labels = np.array([True] * 2 + [False] * 36)
    batches = compose_batches(labels, TrainConfig(), np.random.default_rng(1))
    assert [sorted(b[:2]) for b in batches] == [[0, 1], [0, 1]]


def test_batches_are_deterministic():
    labels = np.random.default_rng(0).random(300) < 0.2
    a = compose_batches(labels, TrainConfig(), np.random.default_rng(5))
    b = compose_batches(labels, TrainConfig(), np.random.default_rng(5))
    assert all(np.array_equal(x, y) for x, y in zip(a, b))


def test_batch_errors():
    with pytest.raises(ValueError, match="bonafide"):
        compose_batches(np.array([True] + [False] * 30), TrainConfig(), np.random.default_rng(0))
    with pytest.raises(ValueError, match="spoof"):
        compose_batches(np.array([True] * 5 + [False] * 10), TrainConfig(), np.random.default_rng(0))
    with pytest.raises(ValueError):
        TrainConfig(bonafide_per_batch=20).validate()


# -- encoder -----------------------------------------------------------------

def test_encoder_zero_weights_and_frame_independence():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((6, 5))
    zero = EncoderParams(np.zeros((5, 3)), np.zeros(3), np.zeros((3, 4)), np.arange(4.0))
    np.testing.assert_array_equal(encoder_forward(x, zero), np.tile(np.arange(4.0), (6, 1)))
    p = EncoderParams.init(5, 3, 4, rng)
    perm = rng.permutation(6)
    np.testing.assert_array_equal(encoder_forward(x[perm], p), encoder_forward(x, p)[perm])


def test_encoder_gradients():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((2, 5, 3))
    p = EncoderParams.init(3, 4, 2, rng)
    up = rng.standard_normal((2, 5, 2))
    g = encoder_backward(x, p, up)
    for name in ("W1", "b1", "W2", "b2"):
        num = numerical_grad(lambda: float(np.sum(up * encoder_forward(x, p))), getattr(p, name))
        assert max_rel_error(getattr(g, name), num) < 1e-6


def test_composite_gradient_through_training_graph():
    rng = np.random.default_rng(2)
    for loss in ("acs-oc", "oc-softmax", "wce"):
        cfg = tiny_config(loss=loss, channels=3, hidden_dim=4)
        params = init_params(3, cfg, rng)
        X = rng.standard_normal((4, 5, 3))
        y = np.array([True, False, False, False])
        c = rng.standard_normal(6)
        _, grads, _ = forward_backward(params, X, y, cfg, c)
        for name, g in grads.items():
            num = numerical_grad(lambda: forward_backward(params, X, y, cfg, c)[0], params[name])
            assert max_rel_error(g, num) < 1e-4, (loss, name)


# -- Adam --------------------------------------------------------------------

def test_adam_zero_gradient_without_decay_is_noop():
    p = {"w": np.array([1.0, -2.0])}
    new, _ = adam_step(p, {"w": np.zeros(2)}, zero_moments(p), 1, AdamConfig(weight_decay=0.0))
    np.testing.assert_array_equal(new["w"], p["w"])


def test_adam_first_step_is_signed_learning_rate():
    p = {"w": np.array([0.5, 0.5, 0.5])}
    g = {"w": np.array([3.0, -0.01, 1e3])}
    new, _ = adam_step(p, g, zero_moments(p), 1, AdamConfig(learning_rate=0.01, weight_decay=0.0))
    np.testing.assert_allclose(new["w"] - p["w"], -0.01 * np.sign(g["w"]), rtol=1e-5)


def test_adam_matches_scalar_reference():
    rng = np.random.default_rng(3)
    cfg = AdamConfig(learning_rate=0.05, weight_decay=0.01)
    p = {"a": rng.standard_normal(3)}
    moments = zero_moments(p)
    ref_p = list(p["a"])
    ref_m = [0.0] * 3
    ref_v = [0.0] * 3
    for t in range(1, 101):
        g = rng.standard_normal(3)
        p, moments = adam_step(p, {"a": g}, moments, t, cfg)
        for i in range(3):
            gi = g[i] + cfg.weight_decay * ref_p[i]
            ref_m[i] = cfg.beta1 * ref_m[i] + (1 - cfg.beta1) * gi
            ref_v[i] = cfg.beta2 * ref_v[i] + (1 - cfg.beta2) * gi * gi
            m_hat = ref_m[i] / (1 - cfg.beta1 ** t)
            v_hat = ref_v[i] / (1 - cfg.beta2 ** t)
            ref_p[i] -= cfg.learning_rate * m_hat / (math.sqrt(v_hat) + cfg.eps)
    np.testing.assert_allclose(p["a"], ref_p, rtol=0, atol=1e-12)


def test_adam_leaves_inputs_untouched():
    p = {"w": np.ones(2), "frozen": np.ones(2)}
    m = zero_moments(p)
    new, _ = adam_step(p, {"w": np.ones(2)}, m, 1, AdamConfig())
    assert np.all(p["w"] == 1.0) and new["frozen"] is p["frozen"]
    with pytest.raises(ValueError):
        adam_step(p, {}, m, 0, AdamConfig())


# -- averaging and early stopping --------------------------------------------

def test_average_weights_elementwise():
    rng = np.random.default_rng(4)
    ckpts = [{"a": rng.standard_normal((2, 3)), "b": rng.standard_normal(4)} for _ in range(5)]
    out = average_weights(ckpts)
    for name in ("a", "b"):
        for idx in np.ndindex(ckpts[0][name].shape):
            ref = sum(c[name][idx] for c in ckpts) / 5
            assert abs(out[name][idx] - ref) < 1e-12
    with pytest.raises(ValueError):
        average_weights([])
    with pytest.raises(ValueError):
        average_weights([{"a": np.zeros(2)}, {"a": np.zeros(3)}])


def run_stopper(eers, patience=7):
    s = EarlyStopping(patience)
    for epoch, e in enumerate(eers, 1):
        if s.update(epoch, e):
            return epoch, s.best_epoch
    return None, s.best_epoch


def test_early_stopping_on_constant_eer():
    assert run_stopper([0.1] * 100) == (8, 1)


def test_early_stopping_best_plus_patience():
    eers = [0.5, 0.4, 0.3, 0.35] + [0.3] * 20
    assert run_stopper(eers) == (10, 3)


def test_strictly_improving_never_stops():
    assert run_stopper([1.0 / e for e in range(1, 101)]) == (None, 100)


# -- the loop ----------------------------------------------------------------

@pytest.fixture(scope="module")
def tiny_data():
    return gen_synthetic(SynthConfig(seed=1, **TINY))


def test_training_is_deterministic(tiny_data, tmp_path):
    train, dev, ev = tiny_data
    runs = []
    for i in range(2):
        model, hist = train_loop(train, dev, tiny_config())
        write_train_log(hist, tmp_path / f"log{i}.csv")
        runs.append((model.score(ev.frames), hist.step_losses))
    assert runs[0][0].tobytes() == runs[1][0].tobytes()
    assert runs[0][1] == runs[1][1]
    cols = [[line.split(",")[:4] for line in (tmp_path / f"log{i}.csv").read_text().splitlines()]
            for i in range(2)]
    assert cols[0] == cols[1]


def test_acs_centroid_after_first_step_is_bonafide_mean(tiny_data):
    train, dev, _ = tiny_data
    cfg = tiny_config(max_epochs=1)
    seen = []

    class Trace:
        def log(self, step, state):
            seen.append(state)

    train_loop(train, dev, cfg, trace=Trace())
    from acs_spoof.data import stack_fixed
    from acs_spoof.seeding import substream
    params = init_params(train.frame_dim, cfg, substream(cfg.seed, "init"))
    idx = compose_batches(train.labels, cfg, substream(cfg.seed, "batching/1"))[0]
    emb = Model(params, cfg).embed(stack_fixed([train.frames[i] for i in idx], cfg.segment_frames))
    expected = emb[train.labels[idx]].mean(axis=0)
    np.testing.assert_allclose(seen[0].vector, expected, rtol=0, atol=1e-12)
    assert seen[0].count == 2
    # spoof rows never reach the centroid
    spoofy = emb[~train.labels[idx]]
    assert not np.allclose(seen[0].vector, np.vstack([emb[train.labels[idx]], spoofy]).mean(axis=0))


def test_partial_acs_count_freezes(tiny_data):
    train, dev, _ = tiny_data
    cfg = tiny_config(centroid="partial-acs", freeze_epoch=2, max_epochs=5, patience=10)
    _, hist = train_loop(train, dev, cfg)
    counts = [r.centroid_count for r in hist.records]
    assert counts[0] < counts[1] == counts[2] == counts[3] == counts[4]
    assert hist.checkpoints[2].centroid.vector.tobytes() == hist.checkpoints[5].centroid.vector.tobytes()


@pytest.mark.parametrize("variant", [("acs-oc", "fixed"), ("acs-oc", "trainable"),
                                     ("oc-softmax", "acs"), ("wce", "acs"),
                                     ("acs-oc", "acs", "loss-then-update")])
def test_every_variant_trains(tiny_data, variant):
    train, dev, ev = tiny_data
    loss, centroid, *order = variant
    cfg = tiny_config(loss=loss, centroid=centroid, **({"update_order": order[0]} if order else {}))
    model, hist = train_loop(train, dev, cfg)
    s = model.score(ev.frames)
    assert np.all(np.isfinite(s)) and len(hist.averaged_epochs) <= 2
    assert hist.averaged_epochs[0] == hist.best_epoch


def test_fixed_centroid_never_moves(tiny_data):
    train, dev, _ = tiny_data
    _, hist = train_loop(train, dev, tiny_config(centroid="fixed"))
    vecs = [c.centroid.vector for c in hist.checkpoints.values()]
    assert all(v.tobytes() == vecs[0].tobytes() for v in vecs)
    assert np.linalg.norm(vecs[0]) == pytest.approx(1.0)


def test_save_load_round_trip(tiny_data, tmp_path):
    train, dev, ev = tiny_data
    for loss in ("acs-oc", "wce"):
        model, _ = train_loop(train, dev, tiny_config(loss=loss))
        save_model(model, tmp_path / "m.npz")
        back = load_model(tmp_path / "m.npz")
        assert back.config == model.config
        assert back.score(ev.frames).tobytes() == model.score(ev.frames).tobytes()


def test_noise_free_clone_attack_is_undetectable():
    cfg = SynthConfig(seed=2, noise=0.0, attack_modes_eval_unseen=(AttackMode("CLONE"),),
                      n_bonafide_train=40, n_spoof_train=180, n_bonafide_dev=20, n_spoof_dev=40,
                      n_bonafide_eval=300, n_spoof_eval=300, t_min=16, t_max=24)
    train, dev, ev = gen_synthetic(cfg)
    model, _ = train_loop(train, dev, tiny_config(segment_frames=16, max_epochs=6))
    s = model.score(ev.frames)
    assert abs(compute_eer(s[ev.labels], s[~ev.labels])[0] - 0.5) < 0.08


def test_policy_stepping_helpers():
    s = cen.make_policy("acs", 3)
    s = cen.policy_step(s, 1, cen.BonafideBatchSummary.from_embeddings(np.ones((2, 3))))
    assert s.count == 2
    with pytest.raises(ValueError):
        TrainConfig(loss="hinge").validate()
