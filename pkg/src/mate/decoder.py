"""Recurrent decoder built from the neural interaction energy module (NIEM).

One NIEM step: message passing over the interaction latent, a GRU update fed
with the embedded kinematic state and the message, an energy head producing
features ``E`` (and the scalar energy ``e = mean(E)``), and an output head
predicting the displacement from ``[E, v_prev, x_prev, h]``.

Arrays are batched ``[B, N, ...]``. The part of a step after message passing
(``kinematic``) also accepts extra leading axes, which the constraint losses
use to evaluate many perturbed inputs at once.
"""
from __future__ import annotations

from contextlib import contextmanager
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Node, NonFiniteError
from .params import MLP, ParallelMLP, ParamStore


@dataclass
class DecoderConfig:
    hidden_size: int = 64
    energy_dim: int = 16
    num_edge_types: int = 2
    dt: float = 0.2
    t_obs: int = 80
    t_pred: int = 20
    gamma: float = 1.0
    beta: float = 1.0
    alpha: float = 0.0
    fd_step_x: float = 1e-2
    fd_step_v: float = 1e-2
    constraint_subsample: float = 0.25
    # "per_agent": mean_i ||grad e_i||; "aggregate": ||sum_i grad e_i|| / N
    inter_agent_form: str = "per_agent"
    # only "loss" is implemented; the name is reserved for a second integration
    inter_agent_integration: str = "loss"

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.t_pred < 1 or self.t_obs < 1:
            raise ValueError("t_obs and t_pred must be >= 1")
        if not (self.fd_step_x > 0 and self.fd_step_v > 0):
            raise ValueError("finite-difference steps must be positive")
        if not 0 < self.constraint_subsample <= 1:
            raise ValueError("constraint_subsample must lie in (0, 1]")
        if self.inter_agent_form not in ("per_agent", "aggregate"):
            raise ValueError(f"unknown inter_agent_form {self.inter_agent_form!r}")
        if self.inter_agent_integration != "loss":
            raise NotImplementedError("only loss-term integration of the inter-agent constraint")

    def to_dict(self):
        return asdict(self)


@dataclass
class StepContext:
    """Everything a step needs that does not depend on this step's ``x_prev``/``v_prev``."""
    h_prev: Node
    gate_in: Node       # message part of the GRU input gates, [B, N, 3H]
    gate_hidden: Node   # recurrent part of the GRU gates, [B, N, 3H]


@dataclass
class DecoderState:
    h: Node
    E: Node
    e: Node
    x: Node
    v: Node


@dataclass
class StepRecord:
    ctx: StepContext
    x_prev: Node
    v_prev: Node
    dt: float
    step: int


@dataclass
class Rollout:
    positions: np.ndarray              # [B, T, N, 2]; index 0 is ground truth
    predictions: list                  # Nodes for steps 1..T-1
    states: list                       # DecoderState per predicted step
    teacher_forced: np.ndarray         # [T-1] bool, inputs were ground truth
    records: dict = field(default_factory=dict)   # step -> StepRecord


@contextmanager
def _block(name):
    try:
        yield
    except NonFiniteError as exc:
        raise NonFiniteError(f"{name} ({exc.where})") from exc


def velocity_series(positions: np.ndarray, dt: float) -> np.ndarray:
    """Backward-difference velocities ``[B, T, N, 2]``; step 0 copies step 1."""
    d = np.diff(positions, axis=1) / dt
    return np.concatenate([d[:, :1], d], axis=1)


class Decoder:
    def __init__(self, config: DecoderConfig, store: ParamStore, zero_output: bool = False):
        self.config = config
        h, de, k = config.hidden_size, config.energy_dim, config.num_edge_types
        self.msg = ParallelMLP(store, "decoder/msg", k, [2 * h, h, h])
        self.embed = MLP(store, "decoder/embed", [4, h, h])
        self.w_u = store.uniform("decoder/gru/w_u", (h, 3 * h), 1 / np.sqrt(h))
        self.w_m = store.uniform("decoder/gru/w_m", (h, 3 * h), 1 / np.sqrt(h))
        self.u_h = store.uniform("decoder/gru/u_h", (h, 3 * h), 1 / np.sqrt(h))
        self.b_i = store.uniform("decoder/gru/b_i", (3 * h,), 1 / np.sqrt(h))
        self.b_h = store.uniform("decoder/gru/b_h", (3 * h,), 1 / np.sqrt(h))
        self.energy = MLP(store, "energy", [h, h, de])
        self.out_head = MLP(store, "out_head", [de + 4 + h, h, 2], zero_last=zero_output)
        # test hooks: energy_override(x_prev, v_prev, h) -> E,
        # out_override(E, v_prev, x_prev, h) -> dx
        self.energy_override = None
        self.out_override = None

    # -------------------------------------------------------------- one step

    def message(self, h_prev, z):
        """m[i] = sum_j sum_k z[i, j, k] * MLP_k([h_i, h_j]) -> [B, N, H]."""
        b, n, h = h_prev.shape
        k = self.config.num_edge_types
        pi = ad.reshape(self.msg.project(h_prev, slice(0, h)), (k, b, n, 1, h))
        pj = ad.reshape(self.msg.project(h_prev, slice(h, 2 * h)), (k, b, 1, n, h))
        pre = ad.reshape(ad.add(pi, pj), (k, b * n * n, h))
        out = ad.reshape(self.msg.finish(pre), (k, b, n, n, h))
        zk = ad.reshape(ad.transpose(z, (3, 0, 1, 2)), (k, b, n, n, 1))
        return ad.reduce_sum(ad.mul(out, zk), axis=(0, 3))

    def context(self, h_prev, z) -> StepContext:
        with _block("message passing"):
            m = self.message(h_prev, z)
            gate_in = ad.add(ad.matmul(m, self.w_m), self.b_i)
            gate_hidden = ad.add(ad.matmul(h_prev, self.u_h), self.b_h)
        return StepContext(h_prev, gate_in, gate_hidden)

    def kinematic(self, ctx: StepContext, x_prev, v_prev):
        """GRU update, energy and output heads. Returns ``(h, E, e, dx)``.

        ``x_prev``/``v_prev`` may carry extra leading axes over ``[B, N, 2]``.
        Agent i's outputs depend on its own ``x_prev``/``v_prev`` only; the
        cross-agent coupling is entirely inside ``ctx``.
        """
        hs = self.config.hidden_size
        x_prev, v_prev = ad.as_node(x_prev), ad.as_node(v_prev)
        with _block("input embedding"):
            u = self.embed(ad.concat([x_prev, v_prev]))
        with _block("GRU"):
            gi = ad.add(ad.matmul(u, self.w_u), ctx.gate_in)
            gh = ctx.gate_hidden
            r = ad.sigmoid(ad.add(gi[..., :hs], gh[..., :hs]))
            upd = ad.sigmoid(ad.add(gi[..., hs:2 * hs], gh[..., hs:2 * hs]))
            cand = ad.tanh(ad.add(gi[..., 2 * hs:], ad.mul(r, gh[..., 2 * hs:])))
            h = ad.add(cand, ad.mul(upd, ad.sub(ctx.h_prev, cand)))
        with _block("energy module"):
            if self.energy_override is not None:
                E = self.energy_override(x_prev, v_prev, h)
            else:
                E = self.energy(h)
            e = ad.reduce_mean(E, axis=-1)
        with _block("output head"):
            if self.out_override is not None:
                dx = self.out_override(E, v_prev, x_prev, h)
            else:
                parts = [E, v_prev, x_prev, h]
                lead = np.broadcast_shapes(*(p.shape[:-1] for p in parts))
                parts = [p if p.shape[:-1] == lead else ad.broadcast_to(p, lead + p.shape[-1:])
                         for p in parts]
                dx = self.out_head(ad.concat(parts))
        return h, E, e, dx

    def niem_step(self, x_prev, v_prev, z, h_prev, dt: float | None = None) -> DecoderState:
        dt = self.config.dt if dt is None else dt
        ctx = self.context(ad.as_node(h_prev), z)
        return self._finish_step(ctx, x_prev, v_prev, dt)

    def _finish_step(self, ctx, x_prev, v_prev, dt) -> DecoderState:
        h, E, e, dx = self.kinematic(ctx, x_prev, v_prev)
        x = ad.add(x_prev, dx)
        v = ad.scale(dx, 1.0 / dt)
        return DecoderState(h=h, E=E, e=e, x=x, v=v)

    def initial_hidden(self, b: int, n: int) -> Node:
        return Node(np.zeros((b, n, self.config.hidden_size)))

    # --------------------------------------------------------------- rollout

    def rollout(self, positions, z, mode: str = "train", dt: float | None = None,
                record_steps=()) -> Rollout:
        """Decode from the first observed step.

        Inputs for predicting steps ``1..t_obs`` are ground truth (burn-in);
        afterwards the model feeds on its own outputs. ``train`` needs the full
        ``t_obs + t_pred`` ground truth and predicts every step after the first;
        ``eval`` needs only the ``t_obs`` observed steps. Steps listed in
        ``record_steps`` keep their context for the constraint losses.
        """
        cfg = self.config
        dt = cfg.dt if dt is None else float(dt)
        positions = np.asarray(positions, dtype=np.float64)
        if positions.ndim == 3:
            positions = positions[None]
        b, t_have, n, _ = positions.shape
        total = cfg.t_obs + cfg.t_pred
        need = total if mode == "train" else cfg.t_obs
        if mode not in ("train", "eval"):
            raise ValueError(f"unknown rollout mode {mode!r}")
        if t_have < need:
            raise ValueError(f"episode has {t_have} steps, {mode} rollout needs {need}")
        gt_vel = velocity_series(positions[:, :cfg.t_obs], dt)
        record_steps = set(record_steps)

        h = self.initial_hidden(b, n)
        preds, states, records = [], [], {}
        forced = np.zeros(total - 1, dtype=bool)
        x_prev = v_prev = None
        for s in range(1, total):
            if s <= cfg.t_obs:
                x_prev = Node(positions[:, s - 1])
                v_prev = Node(gt_vel[:, s - 1])
                forced[s - 1] = True
            ctx = self.context(h, z)
            if s in record_steps:
                records[s] = StepRecord(ctx, x_prev, v_prev, dt, s)
            state = self._finish_step(ctx, x_prev, v_prev, dt)
            preds.append(state.x)
            states.append(state)
            h, x_prev, v_prev = state.h, state.x, state.v

        out = np.concatenate([positions[:, :1], np.stack([p.value for p in preds], axis=1)],
                             axis=1)
        return Rollout(out, preds, states, forced, records)
