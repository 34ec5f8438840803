from dataclasses import replace

import numpy as np
import pytest

from mate.sim_charged import (ChargedConfig, coulomb_forces, kinetic_energy, leapfrog,
                              potential_energy, simulate_charged, simulate_from, variant_configs)


def two_body():
    x = np.array([[-1.0, 0.2], [1.0, -0.2]])
    v = np.array([[0.1, 0.3], [-0.1, -0.3]])
    q = np.array([1.0, -1.0])
    return x, v, q


def test_single_particle_at_rest():
    cfg = ChargedConfig(n_particles=1, n_steps=20)
    pos = simulate_from(np.array([[0.3, -0.4]]), np.zeros((1, 2)), np.array([1.0]), cfg)
    assert (pos == pos[0]).all()


def test_mirror_symmetry():
    cfg = ChargedConfig(n_particles=2, n_steps=100)
    x = np.array([[0.7, 0.2], [-0.7, -0.2]])
    v = np.array([[0.3, -0.5], [-0.3, 0.5]])
    pos = simulate_from(x, v, np.array([1.0, 1.0]), cfg)
    assert np.abs(pos[:, 0] + pos[:, 1]).max() < 1e-9


def test_momentum_and_energy_without_walls():
    x, v, q = two_body()
    p0 = v.sum(0)
    e0 = kinetic_energy(v) + potential_energy(x, q)
    x1, v1, _ = leapfrog(x, v, q, 1e-3, 10_000, softening=0.1)
    assert np.abs(v1.sum(0) - p0).max() < 1e-8
    assert np.linalg.norm(x1[0] - x1[1]) > 0.1           # softening never engaged
    e1 = kinetic_energy(v1) + potential_energy(x1, q)
    assert abs(e1 - e0) / abs(e0) < 1e-3


def test_force_law_signs():
    x = np.array([[0.0, 0.0], [1.0, 0.0]])
    like = coulomb_forces(x, np.array([1.0, 1.0]), 0.1)
    unlike = coulomb_forces(x, np.array([1.0, -1.0]), 0.1)
    assert like[0, 0] < 0 < like[1, 0]           # repel
    assert unlike[0, 0] > 0 > unlike[1, 0]       # attract
    np.testing.assert_allclose(like[0], [-1.0, 0.0])


def test_softening_caps_force():
    x = np.array([[0.0, 0.0], [1e-6, 0.0]])
    f = coulomb_forces(x, np.array([1.0, 1.0]), 0.1)
    assert np.abs(f).max() <= 1e-6 / 0.1 ** 3 + 1e-12


def test_positions_stay_in_box_and_speed_kept_at_wall():
    cfg = ChargedConfig(seed=3)
    for i in range(5):
        ep = simulate_charged(cfg, i)
        assert np.abs(ep.positions).max() <= cfg.box_side / 2
        assert set(ep.charges.tolist()) <= {1.0, -1.0}
    x = np.array([[2.45, 0.0]])
    v = np.array([[1.0, 0.5]])
    x1, v1, _ = leapfrog(x, v, np.array([1.0]), 1e-3, 200, 0.1, half_box=2.5)
    np.testing.assert_allclose(np.linalg.norm(v1), np.linalg.norm(v), rtol=1e-12)
    assert v1[0, 0] < 0


def test_deterministic_per_seed():
    cfg = ChargedConfig(seed=11, n_steps=30)
    assert simulate_charged(cfg, 4).positions.tobytes() == simulate_charged(cfg, 4).positions.tobytes()
    assert simulate_charged(cfg, 4).positions.tobytes() != simulate_charged(cfg, 5).positions.tobytes()


def test_variants():
    base = ChargedConfig()
    v = variant_configs(base)
    assert v["double_agents"].n_particles == 10
    assert v["half_dt"].sample_dt == pytest.approx(0.1)
    assert v["half_space"].box_side == 3.5
    for cfg in v.values():
        assert replace(cfg, n_particles=5, sample_dt=0.2, box_side=5.0) == base


def test_config_validation():
    with pytest.raises(ValueError):
        ChargedConfig(sample_dt=0.2, inner_dt=0.03)
    with pytest.raises(ValueError):
        ChargedConfig(softening=0.0)
