"""End-to-end training: total loss, Adam, plateau decay, checkpointing."""
from __future__ import annotations

import copy
import csv
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Node, NonFiniteError, ShapeError
from .constraints import constraint_losses, select_steps
from .dataio import Episode, batches, stack_positions
from .model import MateModel

log = logging.getLogger(__name__)

LOG_FIELDS = ("epoch", "split", "L_P", "L_E", "L_D", "total", "lr")


class TrainingDiverged(FloatingPointError):
    """A loss term or its gradient stopped being finite."""

    def __init__(self, term: str, epoch: int, detail: str = ""):
        self.term = term
        self.epoch = epoch
        msg = f"non-finite {term} in epoch {epoch}"
        super().__init__(msg + (f": {detail}" if detail else ""))


@dataclass
class TrainConfig:
    lr: float = 1e-3
    lr_decay_factor: float = 0.9
    plateau_patience: int = 5
    lambda1: float = 1.0
    lambda2: float = 0.001
    batch_size: int = 32
    max_epochs: int = 30
    seed: int = 0
    grad_clip: float = 5.0

    def __post_init__(self):
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ValueError("lambda1 and lambda2 must be non-negative")
        if not 0 < self.lr_decay_factor < 1:
            raise ValueError("lr_decay_factor must lie in (0, 1)")
        if self.lr < 0 or self.batch_size < 1 or self.max_epochs < 1 or self.plateau_patience < 1:
            raise ValueError("need lr >= 0, batch_size >= 1, max_epochs >= 1, plateau_patience >= 1")
        if not self.grad_clip > 0:
            raise ValueError("grad_clip must be positive")

    def to_dict(self):
        return asdict(self)


@dataclass
class LossReport:
    L_P: float
    L_E: float
    L_D: float
    total: float
    epoch: int = 0
    split: str = "train"
    lr: float = float("nan")

    def row(self) -> dict:
        return {k: getattr(self, k) for k in LOG_FIELDS}


@dataclass
class TrainResult:
    history: list
    best_epoch: int
    best_val: float
    best_state: dict
    final_lr: float
    checkpoint: Path | None = None
    log_path: Path | None = None

    def split_history(self, split: str) -> list:
        return [r for r in self.history if r.split == split]


# ---------------------------------------------------------------- losses

def loss_position(predictions, target) -> Node:
    """Mean over steps and agents of the Euclidean prediction error.

    ``predictions`` is a rollout (steps ``1..T-1`` are compared against
    ``target[:, 1:]``) or a Node/array shaped like ``target``.
    """
    target = np.asarray(target, dtype=np.float64)
    if hasattr(predictions, "predictions"):
        if target.ndim == 3:
            target = target[None]
        pred = ad.stack(predictions.predictions, axis=1)          # [B, T-1, N, 2]
        target = target[:, 1:]
    else:
        pred = ad.as_node(predictions)
    if pred.shape != target.shape:
        raise ShapeError("loss_position", pred.shape, target.shape)
    return ad.reduce_mean(ad.l2norm(ad.sub(pred, target), axis=-1))


def total_loss(model: MateModel, positions: np.ndarray, dt: float, cfg: TrainConfig,
               rng: np.random.Generator | None = None) -> tuple[Node, dict]:
    """``L_P + lambda1 L_E + lambda2 L_D`` for one batch plus the components."""
    dec = model.dec_cfg
    total_steps = dec.t_obs + dec.t_pred
    want_e, want_d = cfg.lambda1 > 0, cfg.lambda2 > 0
    steps = select_steps(total_steps - 1, dec.constraint_subsample, rng) if (want_e or want_d) else ()
    try:
        _, ro = model.forward(positions[:, :total_steps], mode="train", dt=dt, record_steps=steps)
        lp = loss_position(ro, positions[:, :total_steps])
    except NonFiniteError as exc:
        raise _Term("L_P", str(exc)) from exc
    parts = {"L_P": lp, "L_E": None, "L_D": None}
    total = lp
    if want_e or want_d:
        try:
            rep = constraint_losses(model.decoder, ro.records, want_e, want_d)
        except NonFiniteError as exc:
            raise _Term("L_E/L_D", str(exc)) from exc
        if want_e:
            _check(rep.L_E, "L_E")
            parts["L_E"] = rep.L_E
            total = ad.add(total, ad.scale(rep.L_E, cfg.lambda1))
        if want_d:
            _check(rep.L_D, "L_D")
            parts["L_D"] = rep.L_D
            total = ad.add(total, ad.scale(rep.L_D, cfg.lambda2))
    _check(lp, "L_P")
    _check(total, "total")
    return total, parts


class _Term(Exception):
    def __init__(self, term, detail=""):
        self.term, self.detail = term, detail
        super().__init__(term)


def _check(node: Node, term: str):
    if not np.isfinite(node.value).all():
        raise _Term(term)


# ------------------------------------------------------------------ Adam

@dataclass
class AdamState:
    m: dict
    v: dict
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params: dict, **kw) -> "AdamState":
        return cls({k: np.zeros_like(p) for k, p in params.items()},
                   {k: np.zeros_like(p) for k, p in params.items()}, **kw)


def adam_step(params: dict, grads: dict, state: AdamState, lr: float) -> tuple[dict, AdamState]:
    """One bias-corrected Adam update. Returns new arrays and the new state."""
    if set(params) != set(grads) or set(params) != set(state.m):
        raise KeyError("params, grads and Adam state must share the same names")
    t = state.t + 1
    b1, b2 = state.beta1, state.beta2
    new_p, new_m, new_v = {}, {}, {}
    for k, p in params.items():
        g = np.asarray(grads[k])
        if g.shape != p.shape or state.m[k].shape != p.shape:
            raise ShapeError("adam_step", p.shape, g.shape, state.m[k].shape)
        m = b1 * state.m[k] + (1 - b1) * g
        v = b2 * state.v[k] + (1 - b2) * g * g
        m_hat = m / (1 - b1 ** t)
        v_hat = v / (1 - b2 ** t)
        new_p[k] = p - lr * m_hat / (np.sqrt(v_hat) + state.eps)
        new_m[k], new_v[k] = m, v
    return new_p, AdamState(new_m, new_v, t, b1, b2, state.eps)


def clip_by_global_norm(grads: dict, max_norm: float) -> tuple[dict, float]:
    norm = math.sqrt(sum(float((g * g).sum()) for g in grads.values()))
    if norm > max_norm:
        c = max_norm / norm
        grads = {k: g * c for k, g in grads.items()}
    return grads, norm


# ---------------------------------------------------------------- training

def _batches_of(episodes, batch_size, rng):
    for group in batches(episodes, batch_size, rng):
        yield stack_positions(group), group[0].dt, len(group)


def _run_split(model, episodes, cfg, rng, epoch, split, lr, opt: AdamState | None):
    """One pass; updates parameters in place when ``opt`` is given."""
    sums = {"L_P": 0.0, "L_E": 0.0, "L_D": 0.0, "total": 0.0}
    seen = 0
    for pos, dt, size in _batches_of(episodes, cfg.batch_size, rng if opt is not None else None):
        try:
            total, parts = total_loss(model, pos, dt, cfg, rng)
        except _Term as exc:
            raise TrainingDiverged(exc.term, epoch, exc.detail) from None
        if opt is not None:
            model.store.zero_grad()
            ad.backward(total, leaves_only=True)
            names = model.store.names()
            grads = {k: model.store[k].grad for k in names}
            bad = [k for k, g in grads.items() if not np.isfinite(g).all()]
            if bad:
                raise TrainingDiverged("gradient of the total loss", epoch, f"parameter {bad[0]}")
            grads, _ = clip_by_global_norm(grads, cfg.grad_clip)
            params = {k: model.store[k].value for k in names}
            new, opt_new = adam_step(params, grads, opt, lr)
            for k in names:
                model.store[k].value = new[k]
            opt.m, opt.v, opt.t = opt_new.m, opt_new.v, opt_new.t
        vals = {"L_P": parts["L_P"].item(),
                "L_E": parts["L_E"].item() if parts["L_E"] is not None else 0.0,
                "L_D": parts["L_D"].item() if parts["L_D"] is not None else 0.0}
        vals["total"] = vals["L_P"] + cfg.lambda1 * vals["L_E"] + cfg.lambda2 * vals["L_D"]
        for k in sums:
            sums[k] += vals[k] * size
        seen += size
    mean = {k: v / max(seen, 1) for k, v in sums.items()}
    # the logged total is recomposed from the logged components on purpose
    mean["total"] = mean["L_P"] + cfg.lambda1 * mean["L_E"] + cfg.lambda2 * mean["L_D"]
    return LossReport(mean["L_P"], mean["L_E"], mean["L_D"], mean["total"], epoch, split, lr)


def train(model: MateModel, train_eps: list[Episode], val_eps: list[Episode],
          cfg: TrainConfig, out_dir=None, on_epoch=None,
          meta: dict | None = None) -> TrainResult:
    """Train in place; the model ends holding the best-validation parameters."""
    if not train_eps or not val_eps:
        raise ValueError("training needs non-empty train and validation splits")
    need = model.t_obs + model.t_pred
    short = [ep.n_steps for ep in list(train_eps) + list(val_eps) if ep.n_steps < need]
    if short:
        raise ValueError(f"episodes need {need} steps, found one with {short[0]}")
    rng = np.random.default_rng(cfg.seed)
    val_rng = np.random.default_rng([cfg.seed, 1])
    opt = AdamState.zeros_like(model.store.state())
    lr = cfg.lr
    best_val, best_epoch, best_state = math.inf, 0, model.store.state()
    stale = 0
    history = []
    out_dir = Path(out_dir) if out_dir is not None else None
    log_path = None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        log_path = out_dir / "epochs.csv"
        with log_path.open("w", newline="") as fh:
            csv.DictWriter(fh, LOG_FIELDS).writeheader()

    for epoch in range(1, cfg.max_epochs + 1):
        tr = _run_split(model, train_eps, cfg, rng, epoch, "train", lr, opt)
        va = _run_split(model, val_eps, cfg, val_rng, epoch, "val", lr, None)
        history += [tr, va]
        if log_path is not None:
            with log_path.open("a", newline="") as fh:
                w = csv.DictWriter(fh, LOG_FIELDS)
                w.writerow(tr.row())
                w.writerow(va.row())
        log.info("epoch %d train L_P %.5f total %.5f | val L_P %.5f | lr %.3g",
                 epoch, tr.L_P, tr.total, va.L_P, lr)
        if on_epoch is not None:
            on_epoch(tr, va)
        if va.L_P < best_val:
            best_val, best_epoch, best_state = va.L_P, epoch, copy.deepcopy(model.store.state())
            stale = 0
        else:
            stale += 1
            if stale >= cfg.plateau_patience:
                lr *= cfg.lr_decay_factor
                stale = 0

    model.store.load_state(best_state)
    ckpt = None
    if out_dir is not None:
        ckpt = out_dir / "checkpoint.json"
        model.save(ckpt, {"train": cfg.to_dict(), "best_epoch": best_epoch,
                          "best_val_L_P": best_val, **(meta or {})})
    return TrainResult(history, best_epoch, best_val, best_state, lr, ckpt, log_path)


# ---------------------------------------------------------------- ablation

ABLATION_ROWS = {
    "base": (0.0, 0.0),
    "+L_E": (None, 0.0),
    "+L_D": (0.0, None),
    "+both": (None, None),
}


@dataclass
class AblationRow:
    name: str
    lambda1: float
    lambda2: float
    final_train: LossReport
    test_ade: float
    test_fde: float
    finite: bool = True
    extra: dict = field(default_factory=dict)


def ablate(make_model, train_eps, val_eps, test_eps, cfg: TrainConfig) -> list[AblationRow]:
    """Train the four constraint settings from the same initialisation.

    ``make_model()`` must return a freshly initialised model each call. The
    ``None`` entries of ``ABLATION_ROWS`` take the configured lambda.
    """
    from .metrics import evaluate

    rows = []
    for name, (l1, l2) in ABLATION_ROWS.items():
        l1 = cfg.lambda1 if l1 is None else l1
        l2 = cfg.lambda2 if l2 is None else l2
        run_cfg = TrainConfig(**{**cfg.to_dict(), "lambda1": l1, "lambda2": l2})
        model = make_model()
        res = train(model, train_eps, val_eps, run_cfg)
        final = res.split_history("train")[-1]
        rep = evaluate(model, test_eps)
        finite = all(np.isfinite([r.L_P, r.L_E, r.L_D, r.total]).all() for r in res.history)
        rows.append(AblationRow(name, l1, l2, final, rep.ade, rep.fde, finite))
    return rows


def ablation_table(rows: list[AblationRow]) -> str:
    head = f"{'setting':<8} {'lambda1':>8} {'lambda2':>8} {'L_P':>10} {'L_E':>10} {'L_D':>10} {'ADE':>10} {'FDE':>10}"
    lines = [head, "-" * len(head)]
    for r in rows:
        f = r.final_train
        lines.append(f"{r.name:<8} {r.lambda1:>8g} {r.lambda2:>8g} {f.L_P:>10.5f} {f.L_E:>10.5f} "
                     f"{f.L_D:>10.5f} {r.test_ade:>10.5f} {r.test_fde:>10.5f}")
    return "\n".join(lines)
