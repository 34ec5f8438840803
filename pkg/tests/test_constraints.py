import math

import numpy as np
import pytest

from mate import autodiff as ad
from mate.autodiff import Node
from mate.constraints import (constraint_losses, energy_gradient, loss_inter_agent,
                              loss_intra_agent, motion_variance, select_steps)

from conftest import param_grad_error, random_walk, tiny_model


def recorded(model, pos, steps=None):
    total = model.t_obs + model.t_pred
    steps = list(range(1, total)) if steps is None else steps
    _, ro = model.forward(pos, record_steps=steps)
    return ro.records


def linear_probe(w, width=4):
    """Every energy feature equals x . w, so the scalar energy does too."""
    w = np.tile(np.asarray(w, float).reshape(2, 1), (1, width))
    return lambda x, v, h: ad.matmul(x, w)


def zero_energy(model):
    for name in model.store.names():
        if name.startswith("energy/"):
            model.store[name].value[...] = 0.0


def test_zero_energy_head(rng):
    model = tiny_model()
    zero_energy(model)
    recs = recorded(model, random_walk(rng, 2, 7, 3))
    assert loss_inter_agent(model.decoder, recs).item() == 0.0
    g = energy_gradient(model.decoder, recs[2]).value
    assert (g == 0).all()


def test_zero_energy_leaves_beta_alpha_terms(rng):
    model = tiny_model(alpha=0.25)
    zero_energy(model)
    rec = recorded(model, random_walk(rng, 1, 7, 3), [3])[3]
    u = motion_variance(model.decoder, rec).value
    model.decoder.config.gamma = 0.0
    u_no_gamma = motion_variance(model.decoder, rec).value
    np.testing.assert_array_equal(u, u_no_gamma)


def test_linear_probe_gives_norm_five(rng):
    model = tiny_model()
    model.decoder.energy_override = linear_probe([3.0, 4.0])
    recs = recorded(model, random_walk(rng, 2, 7, 4))
    assert loss_inter_agent(model.decoder, recs).item() == pytest.approx(5.0, abs=1e-6)
    g = energy_gradient(model.decoder, recs[1]).value
    np.testing.assert_allclose(g, np.broadcast_to([3.0, 4.0], g.shape), atol=1e-9)


def test_rigged_head_gives_dt_identity(rng):
    dt = 0.2
    model = tiny_model(gamma=0.0, beta=1.0, alpha=0.0, dt=dt)
    model.decoder.out_override = lambda E, v, x, h: ad.scale(v, dt)
    recs = recorded(model, random_walk(rng, 2, 7, 3))
    u = motion_variance(model.decoder, recs[4]).value
    np.testing.assert_allclose(u, np.broadcast_to(dt * np.eye(2), u.shape), atol=1e-9)
    assert loss_intra_agent(model.decoder, recs).item() == pytest.approx(dt * math.sqrt(2), abs=1e-9)


def test_trivial_u_cases(rng):
    model = tiny_model(gamma=0.0, beta=0.0, alpha=0.0)
    recs = recorded(model, random_walk(rng, 1, 7, 3))
    assert loss_intra_agent(model.decoder, recs).item() == 0.0
    model.decoder.config.alpha = 2.0
    np.testing.assert_array_equal(motion_variance(model.decoder, recs[1]).value, 2.0)
    assert loss_intra_agent(model.decoder, recs).item() == 4.0


def test_single_agent_single_step(rng):
    model = tiny_model()
    pos = random_walk(rng, 1, 7, 2)
    rec = recorded(model, pos, [5])
    u = motion_variance(model.decoder, rec[5]).value[0]
    ld = loss_intra_agent(model.decoder, rec).item()
    assert ld == pytest.approx(np.mean([np.linalg.norm(u[i]) for i in range(2)]), rel=1e-12)


def _numpy_step(model, rec, b, i, x_i=None, v_i=None):
    """Position and energy of agent i after one step, everything else frozen."""
    x = rec.x_prev.value.copy()
    v = rec.v_prev.value.copy()
    if x_i is not None:
        x[b, i] = x_i
    if v_i is not None:
        v[b, i] = v_i
    _, _, e, dx = model.decoder.kinematic(rec.ctx, Node(x), Node(v))
    return (x + dx.value)[b, i], e.value[b, i]


def test_energy_gradient_matches_independent_fd(rng):
    model = tiny_model()
    rec = recorded(model, random_walk(rng, 2, 7, 3), [2])[2]
    g = energy_gradient(model.decoder, rec).value
    h = model.dec_cfg.fd_step_x
    for b in range(2):
        for i in range(3):
            x0 = rec.x_prev.value[b, i]
            oracle = ad.fd_jacobian(lambda xi: _numpy_step(model, rec, b, i, x_i=xi)[1], x0, h)
            np.testing.assert_allclose(g[b, i], oracle, atol=1e-12)


def test_gamma_zero_matches_jxv_oracle(rng):
    model = tiny_model(gamma=0.0, beta=0.7, alpha=0.5)
    rec = recorded(model, random_walk(rng, 1, 7, 3), [5])[5]
    u = motion_variance(model.decoder, rec).value
    h = model.dec_cfg.fd_step_v
    for i in range(3):
        v0 = rec.v_prev.value[0, i]
        jxv = ad.fd_jacobian(lambda vi: _numpy_step(model, rec, 0, i, v_i=vi)[0], v0, h)
        np.testing.assert_allclose(u[0, i], 0.7 * jxv + 0.5, atol=1e-11)


def test_richardson_second_order(rng):
    model = tiny_model()
    rec = recorded(model, random_walk(rng, 1, 7, 3), [3])[3]
    est = []
    for h in (0.2, 0.1, 0.05):
        model.decoder.config.fd_step_x = h
        est.append(energy_gradient(model.decoder, rec).value)
    d1 = np.abs(est[0] - est[1]).max()
    d2 = np.abs(est[1] - est[2]).max()
    assert 2.5 < d1 / d2 < 6.0


def test_subsample_averaging_identity(rng):
    model = tiny_model()
    recs = recorded(model, random_walk(rng, 2, 7, 3))
    full = constraint_losses(model.decoder, recs)
    a = constraint_losses(model.decoder, {k: recs[k] for k in (1, 3, 5)})
    b = constraint_losses(model.decoder, {k: recs[k] for k in (2, 4, 6)})
    assert full.L_E.item() == pytest.approx((a.L_E.item() + b.L_E.item()) / 2, rel=1e-12)
    assert full.L_D.item() == pytest.approx((a.L_D.item() + b.L_D.item()) / 2, rel=1e-12)


def test_energy_head_scaling(rng):
    model = tiny_model()
    pos = random_walk(rng, 1, 7, 3)
    # teacher-forced steps only: their inputs do not depend on the energy head
    steps = list(range(1, model.t_obs + 1))
    base = loss_inter_agent(model.decoder, recorded(model, pos, steps)).item()
    for name in ("energy/1/w", "energy/1/b"):
        model.store[name].value *= -3.0
    scaled = loss_inter_agent(model.decoder, recorded(model, pos, steps)).item()
    assert scaled == pytest.approx(3.0 * base, rel=1e-9)


def test_losses_permutation_invariant(rng):
    model = tiny_model()
    pos = random_walk(rng, 1, 7, 4)
    perm = rng.permutation(4)
    a = constraint_losses(model.decoder, recorded(model, pos))
    b = constraint_losses(model.decoder, recorded(model, pos[:, :, perm]))
    assert a.L_E.item() == pytest.approx(b.L_E.item(), rel=1e-10)
    assert a.L_D.item() == pytest.approx(b.L_D.item(), rel=1e-10)


def test_non_negative_and_empty(rng):
    model = tiny_model()
    rep = constraint_losses(model.decoder, recorded(model, random_walk(rng, 1, 7, 3)))
    assert rep.L_E.item() >= 0 and rep.L_D.item() >= 0
    with pytest.raises(ValueError):
        constraint_losses(model.decoder, {})


def test_aggregate_form(rng):
    model = tiny_model(inter_agent_form="aggregate")
    model.decoder.energy_override = linear_probe([3.0, 4.0])
    recs = recorded(model, random_walk(rng, 1, 7, 3))
    # every agent contributes [3, 4]; the summed gradient has norm 3 * 5, divided by N
    assert loss_inter_agent(model.decoder, recs).item() == pytest.approx(5.0, abs=1e-6)


def test_select_steps():
    assert select_steps(8, 1.0) == list(range(1, 9))
    assert len(select_steps(99, 0.25)) == 25
    s = select_steps(99, 0.25, np.random.default_rng(0))
    assert len(set(s)) == 25 and min(s) >= 1 and max(s) <= 99


@pytest.mark.parametrize("which", ["L_E", "L_D"])
def test_constraint_grad_check_toy(rng, which):
    model = tiny_model(t_obs=2, t_pred=1, hidden=6, alpha=0.1)
    pos = random_walk(rng, 1, 3, 2)

    def loss():
        rep = constraint_losses(model.decoder, recorded(model, pos, [1, 2]))
        return getattr(rep, which)

    names = ["energy/0/w", "decoder/gru/w_u", "decoder/embed/0/w", "out_head/0/w",
             "decoder/msg/0/0/w", "encoder/edge_type/1/0/w"]
    assert param_grad_error(model.store, names, loss, h=1e-6) < 1e-3
