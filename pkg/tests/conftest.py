import numpy as np
import pytest

from mate.decoder import DecoderConfig
from mate.encoder import EncoderConfig
from mate.model import MateModel


def tiny_model(n_types=2, hidden=8, t_obs=4, t_pred=3, seed=0, **dec_kw):
    enc = EncoderConfig(hidden_size=hidden, num_edge_types=n_types, t_obs=t_obs)
    dec = DecoderConfig(hidden_size=hidden, energy_dim=4, num_edge_types=n_types,
                        t_obs=t_obs, t_pred=t_pred, **dec_kw)
    return MateModel(enc, dec, seed=seed)


def random_walk(rng, b, t, n, scale=0.1):
    start = rng.normal(size=(b, 1, n, 2))
    return start + np.cumsum(rng.normal(scale=scale, size=(b, t, n, 2)), axis=1)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def param_grad_error(store, names, loss, h=1e-5, max_entries=12, seed=0):
    """Max relative error between taped and central-difference gradients of
    ``loss()`` with respect to (a sample of entries of) the named parameters."""
    from mate import autodiff as ad

    store.zero_grad()
    ad.backward(loss())
    analytic, numeric = [], []
    pick = np.random.default_rng(seed)
    for name in names:
        node = store[name]
        grad = node.grad.copy()
        flat = pick.choice(node.value.size, size=min(max_entries, node.value.size), replace=False)
        for q in flat:
            old = node.value.flat[q]
            node.value.flat[q] = old + h
            hi = loss().item()
            node.value.flat[q] = old - h
            lo = loss().item()
            node.value.flat[q] = old
            analytic.append(grad.flat[q])
            numeric.append((hi - lo) / (2 * h))
    return ad.relative_error(np.array(analytic), np.array(numeric))
