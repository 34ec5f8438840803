"""Multi-edge graph encoder: observed trajectories -> per-type interaction weights."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from .params import MLP, ParallelMLP, ParamStore


@dataclass
class EncoderConfig:
    hidden_size: int = 64
    num_edge_types: int = 2
    input_dim: int = 2
    t_obs: int = 80

    def __post_init__(self):
        if self.num_edge_types < 1 or self.hidden_size < 1:
            raise ValueError("encoder needs num_edge_types >= 1 and hidden_size >= 1")
        if self.input_dim < 1 or self.t_obs < 2:
            raise ValueError("encoder needs input_dim >= 1 and t_obs >= 2")

    def to_dict(self):
        return asdict(self)


def neighbor_mask(n: int) -> np.ndarray:
    return ~np.eye(n, dtype=bool)


def normalize_neighbors(z_raw):
    """Softmax over neighbours ``j`` of ``z_raw[..., i, j, k]``, per agent and type.

    The diagonal (self-pairs) is masked to weight 0. Types are never mixed.
    """
    z_raw = ad.as_node(z_raw)
    n = z_raw.shape[-2]
    mask = neighbor_mask(n)[:, :, None]
    return ad.softmax(z_raw, axis=-2, mask=mask)


def trajectory_features(observed: np.ndarray) -> np.ndarray:
    """Per-agent flattened features from ``observed [B, T, N, D]``.

    Positions are centred on the scene mean (keeps features translation
    invariant); per-step displacements are appended, the first one repeated.
    Returns ``[B, N, T * 2D]``.
    """
    b, t, n, d = observed.shape
    centred = observed - observed.mean(axis=(1, 2), keepdims=True)
    disp = np.diff(observed, axis=1)
    disp = np.concatenate([disp[:, :1], disp], axis=1)
    feats = np.concatenate([centred, disp], axis=-1)          # [B, T, N, 2D]
    return np.ascontiguousarray(feats.transpose(0, 2, 1, 3)).reshape(b, n, t * 2 * d)


class Encoder:
    """Node MLP -> edge MLP -> node MLP -> one MLP per edge type -> neighbour softmax."""

    def __init__(self, config: EncoderConfig, store: ParamStore):
        self.config = config
        h = config.hidden_size
        n_in = config.t_obs * 2 * config.input_dim
        self.node = MLP(store, "encoder/node", [n_in, h, h])
        self.edge = MLP(store, "encoder/edge", [2 * h, h, h])
        self.node2 = MLP(store, "encoder/node2", [h, h, h])
        # per type: [n_i, n_j, e_ij] -> 2 hidden tanh layers -> scalar logit
        self.edge_types = ParallelMLP(store, "encoder/edge_type", config.num_edge_types,
                                      [3 * h, h, h, 1])

    def _check(self, observed):
        observed = np.asarray(observed, dtype=np.float64)
        if observed.ndim == 3:
            observed = observed[None]
        if observed.ndim != 4:
            raise ValueError(f"observed must be [T, N, D] or [B, T, N, D], got {observed.shape}")
        _, t, n, d = observed.shape
        if n < 2:
            raise ValueError("encode needs at least 2 agents (no neighbours to normalise over)")
        if t < 2:
            raise ValueError("encode needs at least 2 observed steps (velocity undefined)")
        if t != self.config.t_obs or d != self.config.input_dim:
            raise ad.ShapeError("encode (observed vs config)", (t, d),
                                (self.config.t_obs, self.config.input_dim))
        return observed

    def logits(self, observed):
        """Raw per-type logits ``[B, N, N, K]`` (diagonal meaningless)."""
        observed = self._check(observed)
        b, _, n, _ = observed.shape
        h = self.config.hidden_size
        k = self.config.num_edge_types
        f = self.node(trajectory_features(observed))                  # [B, N, H]
        fi = ad.broadcast_to(ad.reshape(f, (b, n, 1, h)), (b, n, n, h))
        fj = ad.broadcast_to(ad.reshape(f, (b, 1, n, h)), (b, n, n, h))
        e = self.edge(ad.concat([fi, fj]))                            # [B, N, N, H]
        mask = neighbor_mask(n)[None, :, :, None].astype(float)
        agg = ad.scale(ad.reduce_sum(ad.mul(e, mask), axis=2), 1.0 / (n - 1))
        g = self.node2(agg)                                           # [B, N, H]
        pi = ad.reshape(self.edge_types.project(g, slice(0, h)), (k, b, n, 1, h))
        pj = ad.reshape(self.edge_types.project(g, slice(h, 2 * h)), (k, b, 1, n, h))
        pe = ad.reshape(self.edge_types.project(e, slice(2 * h, 3 * h)), (k, b, n, n, h))
        pre = ad.reshape(ad.add(ad.add(pi, pj), pe), (k, b * n * n, h))
        out = ad.reshape(self.edge_types.finish(pre), (k, b, n, n))
        return ad.transpose(out, (1, 2, 3, 0))

    def __call__(self, observed):
        """Normalised interaction latent ``z [B, N, N, K]``."""
        return normalize_neighbors(self.logits(observed))

    encode = __call__
