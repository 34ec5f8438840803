import csv

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mate import autodiff as ad
from mate import trainer
from mate.dataio import Episode
from mate.trainer import (AdamState, TrainConfig, TrainingDiverged, adam_step, clip_by_global_norm,
                          loss_position, total_loss, train)

from conftest import random_walk, tiny_model


def episodes(rng, count, t=7, n=3, dt=0.1):
    return [Episode(p, dt) for p in random_walk(rng, count, t, n)]


def test_loss_position_examples():
    target = np.zeros((1, 2, 2, 2))
    assert loss_position(target, target).item() == 0.0
    pred = target.copy()
    pred[..., 0] += 3.0
    pred[..., 1] += 4.0
    assert loss_position(pred, target).item() == pytest.approx(5.0)
    pred = target.copy()
    pred[0, 0, 0] = [2.0, 0.0]       # one of four entries off by 2, mean is 0.5
    assert loss_position(pred, target).item() == pytest.approx(0.5)
    with pytest.raises(ad.ShapeError):
        loss_position(np.zeros((1, 2, 2, 2)), np.zeros((1, 3, 2, 2)))


def test_loss_position_skips_first_step(rng):
    model = tiny_model()
    pos = random_walk(rng, 2, 7, 3)
    _, ro = model.forward(pos, mode="train", dt=0.1)
    manual = np.mean([np.linalg.norm(p.value - pos[:, s + 1], axis=-1).mean()
                      for s, p in enumerate(ro.predictions)])
    assert loss_position(ro, pos).item() == pytest.approx(manual, rel=1e-12)


def test_adam_zero_gradient_is_identity(rng):
    p = {"w": rng.normal(size=(3, 2))}
    new, st_ = adam_step(p, {"w": np.zeros((3, 2))}, AdamState.zeros_like(p), 1e-3)
    np.testing.assert_array_equal(new["w"], p["w"])
    assert st_.t == 1


def test_adam_first_step_is_sign_times_lr(rng):
    p = {"w": rng.normal(size=5)}
    g = {"w": np.array([2.0, -0.5, 1e-2, -30.0, 7.0])}
    new, _ = adam_step(p, g, AdamState.zeros_like(p), 0.01)
    np.testing.assert_allclose(p["w"] - new["w"], 0.01 * np.sign(g["w"]), rtol=1e-5)


def test_adam_matches_reference_two_steps():
    # reference values computed by hand for a scalar parameter
    p = {"w": np.array([1.0])}
    state = AdamState.zeros_like(p)
    p, state = adam_step(p, {"w": np.array([0.5])}, state, 0.1)
    p, state = adam_step(p, {"w": np.array([-0.25])}, state, 0.1)
    m = 0.9 * 0.05 + 0.1 * -0.25
    v = 0.999 * 0.00025 + 0.001 * 0.0625
    step2 = 0.1 * (m / (1 - 0.81)) / (np.sqrt(v / (1 - 0.999 ** 2)) + 1e-8)
    step1 = 0.1 * 0.5 / (0.5 + 1e-8)
    assert p["w"][0] == pytest.approx(1.0 - step1 - step2, rel=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-100, 100, allow_subnormal=False), min_size=1, max_size=8))
def test_adam_odd_symmetry(gs):
    g = np.array(gs)
    zero = {"w": np.zeros_like(g)}
    a, _ = adam_step(zero, {"w": g}, AdamState.zeros_like(zero), 0.1)
    b, _ = adam_step(zero, {"w": -g}, AdamState.zeros_like(zero), 0.1)
    np.testing.assert_array_equal(a["w"], -b["w"])


def test_adam_key_mismatch():
    p = {"a": np.zeros(2)}
    with pytest.raises(KeyError):
        adam_step(p, {"b": np.zeros(2)}, AdamState.zeros_like(p), 0.1)


def test_clip_by_global_norm():
    g = {"a": np.array([3.0]), "b": np.array([4.0])}
    clipped, norm = clip_by_global_norm(g, 1.0)
    assert norm == 5.0
    assert np.hypot(clipped["a"][0], clipped["b"][0]) == pytest.approx(1.0)
    same, _ = clip_by_global_norm(g, 10.0)
    assert same["a"][0] == 3.0


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(lambda1=-1)
    with pytest.raises(ValueError):
        TrainConfig(lr_decay_factor=1.0)
    with pytest.raises(ValueError):
        TrainConfig(max_epochs=0)


def test_zero_lr_leaves_parameters_unchanged(rng):
    model = tiny_model()
    before = {k: v.copy() for k, v in model.store.state().items()}
    train(model, episodes(rng, 4), episodes(rng, 2), TrainConfig(lr=0.0, max_epochs=2, batch_size=2))
    after = model.store.state()
    for k in before:
        assert before[k].tobytes() == after[k].tobytes()


def test_zero_lambdas_skip_constraints(rng, monkeypatch):
    def boom(*a, **k):
        raise AssertionError("constraint terms evaluated with zero weights")
    monkeypatch.setattr(trainer, "constraint_losses", boom)
    res = train(tiny_model(), episodes(rng, 4), episodes(rng, 2),
                TrainConfig(lambda1=0.0, lambda2=0.0, max_epochs=1, batch_size=4))
    assert all(r.L_E == 0.0 and r.L_D == 0.0 for r in res.history)


def test_total_is_weighted_sum(rng):
    model = tiny_model()
    cfg = TrainConfig(lambda1=0.7, lambda2=0.05)
    pos = random_walk(rng, 3, 7, 3)
    total, parts = total_loss(model, pos, 0.1, cfg, np.random.default_rng(0))
    expect = parts["L_P"].item() + 0.7 * parts["L_E"].item() + 0.05 * parts["L_D"].item()
    assert total.item() == pytest.approx(expect, rel=1e-12)


def test_total_loss_gradient_matches_differences(rng):
    from conftest import param_grad_error
    model = tiny_model()
    cfg = TrainConfig(lambda1=1.0, lambda2=0.01)
    pos = random_walk(rng, 2, 7, 3)
    names = ["encoder/edge/0/w", "decoder/gru/u_h", "energy/0/w", "out_head/1/b"]
    err = param_grad_error(model.store, names,
                           lambda: total_loss(model, pos, 0.1, cfg, np.random.default_rng(5))[0])
    assert err < 1e-4


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_nan_aborts_naming_term(rng):
    model = tiny_model()
    tr = episodes(rng, 2)
    tr[0].positions[3, 1, 0] = 1e300       # overflows the squared error
    with pytest.raises(TrainingDiverged) as info:
        train(model, tr, episodes(rng, 2), TrainConfig(max_epochs=1, batch_size=2))
    assert info.value.term in {"L_P", "L_E", "L_D", "L_E/L_D", "total", "gradient of the total loss"}
    assert info.value.term in str(info.value)
    assert info.value.epoch == 1


def test_epoch_log_and_checkpoint(tmp_path, rng):
    model = tiny_model()
    res = train(model, episodes(rng, 4), episodes(rng, 2),
                TrainConfig(max_epochs=3, batch_size=2, lambda2=0.01), out_dir=tmp_path)
    rows = list(csv.DictReader(res.log_path.open()))
    assert list(rows[0]) == ["epoch", "split", "L_P", "L_E", "L_D", "total", "lr"]
    assert len(rows) == 6
    for r in rows:
        recomposed = float(r["L_P"]) + 1.0 * float(r["L_E"]) + 0.01 * float(r["L_D"])
        assert float(r["total"]) == pytest.approx(recomposed, rel=1e-12)
    assert res.checkpoint.exists()
    best = min(res.split_history("val"), key=lambda r: r.L_P)
    assert res.best_epoch == best.epoch


def test_best_state_restored(rng):
    model = tiny_model()
    res = train(model, episodes(rng, 4), episodes(rng, 2), TrainConfig(max_epochs=3, batch_size=2))
    for k, v in model.store.state().items():
        np.testing.assert_array_equal(v, res.best_state[k])


def test_plateau_decay(rng, monkeypatch):
    # a frozen validation loss never improves after epoch 1
    real = trainer._run_split

    def fake(model, eps, cfg, rng_, epoch, split, lr, opt):
        rep = real(model, eps, cfg, rng_, epoch, split, lr, opt)
        if split == "val":
            rep.L_P = 1.0
        return rep
    monkeypatch.setattr(trainer, "_run_split", fake)
    cfg = TrainConfig(max_epochs=12, batch_size=4, plateau_patience=5, lr_decay_factor=0.5,
                      lambda1=0.0, lambda2=0.0)
    res = train(tiny_model(), episodes(rng, 4), episodes(rng, 2), cfg)
    lrs = [r.lr for r in res.split_history("train")]
    # epochs 2..6 are stale, so the rate halves before epoch 7 and again before 12
    assert lrs[:6] == [1e-3] * 6
    assert lrs[6:11] == [5e-4] * 5
    assert lrs[11] == 2.5e-4 and res.final_lr == 2.5e-4
    assert res.best_epoch == 1


def test_training_reduces_loss(rng):
    model = tiny_model()
    tr = episodes(rng, 8)
    res = train(model, tr, episodes(rng, 2),
                TrainConfig(lr=1e-2, max_epochs=15, batch_size=8, lambda1=0.0, lambda2=0.0))
    h = res.split_history("train")
    assert h[-1].L_P < h[0].L_P


def test_train_rejects_short_or_empty(rng):
    with pytest.raises(ValueError):
        train(tiny_model(), [], episodes(rng, 2), TrainConfig())
    with pytest.raises(ValueError):
        train(tiny_model(), episodes(rng, 2, t=4), episodes(rng, 2), TrainConfig())
