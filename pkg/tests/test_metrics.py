import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mate.metrics import (ade, constant_velocity_baseline, fde, graph_accuracy, predicted_targets,
                          report_table, reports_csv, select_edge_type, EvalReport)


def test_ade_examples(rng):
    gt = rng.normal(size=(4, 3, 2))
    assert ade(gt, gt) == 0.0
    assert ade(gt + np.array([0.0, 2.0]), gt) == 2.0
    pred = np.zeros((2, 1, 2))
    truth = np.array([[[1.0, 0.0]], [[3.0, 0.0]]])
    assert ade(pred, truth) == 2.0


def test_fde_examples(rng):
    gt = rng.normal(size=(5, 2, 2))
    assert fde(gt, gt) == 0.0
    pred = gt.copy()
    pred[-1, 0] += [3.0, 4.0]
    assert fde(pred, gt) == 2.5
    pred[:-1] += 100.0
    assert fde(pred, gt) == 2.5


def test_shape_mismatch():
    with pytest.raises(ValueError):
        ade(np.zeros((2, 3, 2)), np.zeros((2, 4, 2)))
    with pytest.raises(ValueError):
        fde(np.zeros((2, 3, 2)), np.zeros((3, 3, 2)))


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10**6))
def test_permutation_invariant(seed):
    rng = np.random.default_rng(seed)
    p, g = rng.normal(size=(2, 6, 4, 2))
    perm = rng.permutation(4)
    assert ade(p[:, perm], g[:, perm]) == pytest.approx(ade(p, g), rel=1e-14)
    assert fde(p[:, perm], g[:, perm]) == pytest.approx(fde(p, g), rel=1e-14)
    assert ade(p, g) >= 0 and fde(p, g) >= 0


def test_graph_accuracy_one_hot():
    targets = np.array([2, 0, 1, 1])
    z = np.zeros((4, 4, 2))
    z[np.arange(4), targets, 1] = 1.0
    assert graph_accuracy(z, targets, 1) == 1.0


def test_graph_accuracy_uniform_tie_break():
    n = 5
    z = np.full((n, n, 1), 1 / (n - 1))
    pred = predicted_targets(z, 0)
    assert pred.tolist() == [1, 0, 0, 0, 0]
    targets = np.array([1, 0, 3, 0, 2])
    assert graph_accuracy(z, targets, 0) == 3 / 5


def test_graph_accuracy_two_agents(rng):
    for _ in range(10):
        assert graph_accuracy(rng.uniform(size=(2, 2, 3)), np.array([1, 0]), 2) == 1.0


def test_graph_accuracy_needs_targets():
    with pytest.raises(ValueError):
        graph_accuracy(np.zeros((3, 3, 1)), None, 0)


def test_random_graph_accuracy_is_chance():
    rng = np.random.default_rng(0)
    n, draws = 5, 10_000
    accs = np.empty(draws)
    for d in range(draws):
        z = rng.uniform(size=(n, n, 1))          # continuous: ties have probability 0
        t = rng.integers(0, n - 1, size=n)
        t = t + (t >= np.arange(n))
        accs[d] = graph_accuracy(z, t, 0)
    sigma = accs.std(ddof=1) / np.sqrt(draws)
    assert abs(accs.mean() - 1 / (n - 1)) < 3 * sigma
    assert ((accs >= 0) & (accs <= 1)).all()


def test_select_edge_type():
    targets = np.array([1, 2, 0])
    z = np.zeros((3, 3, 3))
    z[np.arange(3), targets, 2] = 1.0
    k, accs = select_edge_type(z, targets)
    assert k == 2 and accs[2] == 1.0


def test_constant_velocity_baseline():
    t = np.arange(10.0)[:, None, None]
    line = np.concatenate([t * 0.5 + 1, -t], axis=-1) * np.ones((1, 3, 1))
    pred = constant_velocity_baseline(line, 6, 4)
    assert ade(pred, line[6:]) == pytest.approx(0.0, abs=1e-14)
    still = np.ones((8, 2, 2))
    assert (constant_velocity_baseline(still, 5, 3) == 1.0).all()
    with pytest.raises(ValueError):
        constant_velocity_baseline(still, 1, 3)


def test_report_output():
    reps = [EvalReport("base", 0.1, 0.2, 3), EvalReport("x", 0.3, 0.4, 3, graph_accuracy=0.5)]
    table = report_table(reps)
    assert "base" in table and "0.50000" in table
    csv_text = reports_csv(reps)
    assert csv_text.splitlines()[0].startswith("name,")
    assert len(csv_text.splitlines()) == 3
