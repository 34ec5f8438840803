"""Inter-agent interaction and intra-agent motion constraint losses.

Both are built from central differences of the decoder's kinematic step,
taken *inside* the autodiff graph: the losses are exact, differentiable
functions of the parameters, and only the spatial/velocity derivatives they
penalise are approximated.

For a recorded step with frozen context (``h_prev``, message, ``z``):

* energy gradient ``g_d = (e(x + hx e_d) - e(x - hx e_d)) / (2 hx)``
* ``J_Ev[d, c] = d g_d / d v_c`` by a second central difference in ``v``
* ``J_xv[d, c] = d x_d / d v_c`` on the predicted position
* ``u = gamma J_Ev + beta J_xv + alpha`` (alpha added to every entry)

All perturbations of a step are stacked on a leading axis and pushed through
one batched ``Decoder.kinematic`` call. Every agent is perturbed at once; that
is equivalent to perturbing agents one at a time because, with the context
frozen, agent i's outputs depend only on agent i's own position and velocity.
"""
from __future__ import annotations

from dataclasses import dataclass
from itertools import product

import numpy as np

from . import autodiff as ad
from .autodiff import Node
from .decoder import Decoder, StepRecord


@dataclass
class ConstraintReport:
    L_E: Node | None
    L_D: Node | None
    mean_grad_norm: float = float("nan")
    mean_u_norm: float = float("nan")
    n_steps: int = 0


class _Stencil:
    """Perturbation offsets plus the linear maps turning outputs into derivatives."""

    def __init__(self, hx: float, hv: float, want_e: bool, want_ev: bool, want_xv: bool):
        dx, dv = [], []
        self.e_rows = self.ev_rows = self.xv_rows = None

        def push(ddx, ddv):
            dx.append(ddx)
            dv.append(ddv)
            return len(dx) - 1

        unit = np.eye(2)
        if want_e:
            # C_E[d, s]: gradient component d
            idx = {(d, s): push(s * hx * unit[d], np.zeros(2)) for d, s in product(range(2), (1, -1))}
            self.e_rows = [{idx[d, 1]: 0.5 / hx, idx[d, -1]: -0.5 / hx} for d in range(2)]
        if want_ev:
            idx = {(c, sv, d, sx): push(sx * hx * unit[d], sv * hv * unit[c])
                   for c, sv, d, sx in product(range(2), (1, -1), range(2), (1, -1))}
            rows = []
            for c, d in product(range(2), range(2)):           # row order (c, d)
                rows.append({idx[c, sv, d, sx]: sv * sx / (4 * hx * hv)
                             for sv, sx in product((1, -1), (1, -1))})
            self.ev_rows = rows
        if want_xv:
            idx = {(c, sv): push(np.zeros(2), sv * hv * unit[c]) for c, sv in product(range(2), (1, -1))}
            self.xv_rows = [{idx[c, 1]: 0.5 / hv, idx[c, -1]: -0.5 / hv} for c in range(2)]
        self.dx = np.array(dx)
        self.dv = np.array(dv)
        self.size = len(dx)

    def matrix(self, rows):
        m = np.zeros((len(rows), self.size))
        for r, coefs in enumerate(rows):
            for s, c in coefs.items():
                m[r, s] = c
        return m


def _evaluate(decoder: Decoder, rec: StepRecord, stencil: _Stencil):
    """Perturbed energies ``[S, B*N]`` and positions ``[S, B*N*2]`` for one step."""
    b, n, _ = rec.x_prev.shape
    s = stencil.size
    x_in = ad.add(rec.x_prev, stencil.dx.reshape(s, 1, 1, 2))
    v_in = ad.add(rec.v_prev, stencil.dv.reshape(s, 1, 1, 2))
    _, _, e, dx = decoder.kinematic(rec.ctx, x_in, v_in)
    if not np.isfinite(e.value).all() or not np.isfinite(dx.value).all():
        raise ad.NonFiniteError("constraint finite differences")
    e = ad.reshape(ad.broadcast_to(e, (s, b, n)), (s, b * n))
    x = ad.reshape(ad.add(x_in, dx), (s, b * n * 2))
    return e, x


def _energy_gradient(e, st: _Stencil, bn: int):
    """``[B*N, 2]`` rows of grad_x e."""
    return ad.transpose(ad.matmul(st.matrix(st.e_rows), e), (1, 0))


def _motion_variance(e, x, st: _Stencil, bn: int, gamma, beta, alpha):
    """``u`` laid out ``[c, B*N, d]`` (Frobenius norm is layout-free)."""
    terms = []
    if st.ev_rows is not None:
        jev = ad.reshape(ad.matmul(st.matrix(st.ev_rows), e), (2, 2, bn))    # [c, d, BN]
        terms.append(ad.scale(ad.transpose(jev, (0, 2, 1)), gamma))
    if st.xv_rows is not None:
        jxv = ad.reshape(ad.matmul(st.matrix(st.xv_rows), x), (2, bn, 2))    # [c, BN, d]
        terms.append(ad.scale(jxv, beta))
    u = Node(np.full((2, bn, 2), float(alpha)))
    for t in terms:
        u = ad.add(u, t)
    return u


def constraint_losses(decoder: Decoder, records, want_inter: bool = True,
                      want_intra: bool = True) -> ConstraintReport:
    """Inter-agent (L_E) and intra-agent (L_D) losses averaged over the recorded
    steps, agents and batch episodes."""
    records = list(records.values()) if isinstance(records, dict) else list(records)
    if not records:
        raise ValueError("constraint losses need at least one recorded step")
    cfg = decoder.config
    gamma, beta, alpha = cfg.gamma, cfg.beta, cfg.alpha
    st = _Stencil(cfg.fd_step_x, cfg.fd_step_v, want_inter,
                  want_intra and gamma != 0, want_intra and beta != 0)
    le_terms, ld_terms = [], []
    gnorms, unorms = [], []
    for rec in records:
        b, n, _ = rec.x_prev.shape
        bn = b * n
        if st.size:
            e, x = _evaluate(decoder, rec, st)
        if want_inter:
            g = _energy_gradient(e, st, bn)                             # [BN, 2]
            if cfg.inter_agent_form == "aggregate":
                summed = ad.reduce_sum(ad.reshape(g, (b, n, 2)), axis=1)   # [B, 2]
                norms = ad.scale(ad.l2norm(summed, axis=-1), 1.0 / n)
                le_terms.append(ad.reduce_mean(norms))
            else:
                norms = ad.l2norm(g, axis=-1)
                le_terms.append(ad.reduce_mean(norms))
            gnorms.append(float(np.linalg.norm(g.value, axis=-1).mean()))
        if want_intra:
            if st.size:
                u = _motion_variance(e, x, st, bn, gamma, beta, alpha)
            else:
                u = Node(np.full((2, bn, 2), float(alpha)))
            fro = ad.l2norm(u, axis=(0, 2))                              # [BN]
            ld_terms.append(ad.reduce_mean(fro))
            unorms.append(float(fro.value.mean()))
    scale = 1.0 / len(records)
    L_E = ad.scale(ad.reduce_sum(ad.stack(le_terms)), scale) if want_inter else None
    L_D = ad.scale(ad.reduce_sum(ad.stack(ld_terms)), scale) if want_intra else None
    return ConstraintReport(L_E, L_D,
                            float(np.mean(gnorms)) if gnorms else float("nan"),
                            float(np.mean(unorms)) if unorms else float("nan"),
                            len(records))


def loss_inter_agent(decoder: Decoder, records) -> Node:
    return constraint_losses(decoder, records, True, False).L_E


def loss_intra_agent(decoder: Decoder, records) -> Node:
    return constraint_losses(decoder, records, False, True).L_D


def energy_gradient(decoder: Decoder, rec: StepRecord) -> Node:
    """grad_x e for every agent of a recorded step, ``[B, N, 2]``."""
    cfg = decoder.config
    st = _Stencil(cfg.fd_step_x, cfg.fd_step_v, True, False, False)
    b, n, _ = rec.x_prev.shape
    e, _ = _evaluate(decoder, rec, st)
    return ad.reshape(_energy_gradient(e, st, b * n), (b, n, 2))


def motion_variance(decoder: Decoder, rec: StepRecord) -> Node:
    """``u[b, i, d, c]`` for every agent of a recorded step, ``[B, N, 2, 2]``."""
    cfg = decoder.config
    st = _Stencil(cfg.fd_step_x, cfg.fd_step_v, False, cfg.gamma != 0, cfg.beta != 0)
    b, n, _ = rec.x_prev.shape
    bn = b * n
    if st.size:
        e, x = _evaluate(decoder, rec, st)
        u = _motion_variance(e, x, st, bn, cfg.gamma, cfg.beta, cfg.alpha)
    else:
        u = Node(np.full((2, bn, 2), float(cfg.alpha)))
    # [c, BN, d] -> [B, N, d, c]
    return ad.reshape(ad.transpose(u, (1, 2, 0)), (b, n, 2, 2))


def select_steps(n_steps: int, fraction: float, rng: np.random.Generator | None = None):
    """Subsample of predicted steps ``1..n_steps`` used for the constraints."""
    k = max(1, int(round(fraction * n_steps)))
    if k >= n_steps:
        return list(range(1, n_steps + 1))
    if rng is None:
        return [int(s) for s in np.linspace(1, n_steps, k).round()]
    return sorted(int(s) for s in rng.choice(np.arange(1, n_steps + 1), size=k, replace=False))
