"""Displacement errors, graph accuracy, a constant-velocity control and the
zero-shot evaluation harness.

Displacement metrics cover the prediction horizon only.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .dataio import Episode, batches, stack_positions


def _check_pair(pred, gt):
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError(f"prediction shape {pred.shape} != ground truth shape {gt.shape}")
    if pred.ndim < 3 or pred.shape[-1] != 2:
        raise ValueError(f"expected [..., T, N, 2], got {pred.shape}")
    return pred, gt


def ade(pred, gt) -> float:
    """Mean Euclidean error over steps and agents (and episodes, if batched)."""
    pred, gt = _check_pair(pred, gt)
    return float(np.linalg.norm(pred - gt, axis=-1).mean())


def fde(pred, gt) -> float:
    """Mean Euclidean error at the last step."""
    pred, gt = _check_pair(pred, gt)
    return float(np.linalg.norm(pred[..., -1, :, :] - gt[..., -1, :, :], axis=-1).mean())


def predicted_targets(z, k: int) -> np.ndarray:
    """argmax over j != i of ``z[..., i, j, k]``; ties go to the lowest index."""
    z = np.asarray(z, dtype=np.float64)[..., k]
    n = z.shape[-1]
    z = np.where(np.eye(n, dtype=bool), -np.inf, z)
    return np.argmax(z, axis=-1)          # first maximum wins


def graph_accuracy(z, targets, k: int) -> float:
    """Fraction of agents whose predicted target equals the true one."""
    if targets is None:
        raise ValueError("graph accuracy needs ground-truth targets")
    z = np.asarray(z)
    targets = np.asarray(targets)
    if not 0 <= k < z.shape[-1]:
        raise ValueError(f"edge type {k} out of range for K={z.shape[-1]}")
    pred = predicted_targets(z, k)
    if pred.shape != targets.shape:
        raise ValueError(f"targets shape {targets.shape} does not match z {z.shape}")
    return float((pred == targets).mean())


def select_edge_type(z, targets) -> tuple[int, list[float]]:
    """Edge type with the best accuracy (lowest index on ties) and all accuracies."""
    z = np.asarray(z)
    accs = [graph_accuracy(z, targets, k) for k in range(z.shape[-1])]
    return int(np.argmax(accs)), accs


def constant_velocity_baseline(positions, t_obs: int, t_pred: int) -> np.ndarray:
    """Linear extrapolation from the last observed displacement.

    ``positions [..., T, N, 2]`` (only the first ``t_obs`` steps are read);
    returns ``[..., t_pred, N, 2]``.
    """
    if isinstance(positions, Episode):
        positions = positions.positions
    p = np.asarray(positions, dtype=np.float64)
    if t_obs < 2:
        raise ValueError("constant-velocity extrapolation needs t_obs >= 2")
    last = p[..., t_obs - 1, :, :]
    step = last - p[..., t_obs - 2, :, :]
    k = np.arange(1, t_pred + 1).reshape((t_pred, 1, 1))
    return last[..., None, :, :] + k * step[..., None, :, :]


# ------------------------------------------------------------ evaluation

@dataclass
class EvalReport:
    name: str
    ade: float
    fde: float
    n_episodes: int
    graph_accuracy: float | None = None
    edge_type: int | None = None
    baseline_ade: float | None = None
    baseline_fde: float | None = None
    fingerprint: str = ""
    extra: dict = field(default_factory=dict)

    def row(self) -> dict:
        d = asdict(self)
        d.pop("extra")
        return d


def fingerprint(model, data_desc=None) -> str:
    """Short hash of the model configuration, parameters and dataset description."""
    h = hashlib.sha256()
    h.update(json.dumps(model.meta(), sort_keys=True).encode())
    for name in sorted(model.store.names()):
        h.update(name.encode())
        h.update(np.ascontiguousarray(model.store[name].value).tobytes())
    if data_desc is not None:
        h.update(json.dumps(data_desc, sort_keys=True, default=str).encode())
    return h.hexdigest()[:16]


def predict_episodes(model, episodes, batch_size: int = 64):
    """Predictions ``[E, t_pred, N, 2]`` and latents ``[E, N, N, K]`` in input order."""
    index = {id(ep): i for i, ep in enumerate(episodes)}
    preds = [None] * len(episodes)
    zs = [None] * len(episodes)
    for group in batches(episodes, batch_size):
        pos = stack_positions(group)[:, :model.t_obs]
        fut, z = model.predict(pos, dt=group[0].dt)
        for ep, f, zz in zip(group, fut, z):
            preds[index[id(ep)]] = f
            zs[index[id(ep)]] = zz
    return preds, zs


def evaluate(model, episodes, name: str = "test", edge_type: int | None = None,
             val_episodes=None, batch_size: int = 64) -> EvalReport:
    """ADE/FDE over the prediction horizon, plus graph accuracy when targets exist.

    The graph edge type is ``edge_type`` if given, else selected on
    ``val_episodes``, else left unset (per-type accuracies go to ``extra``).
    """
    episodes = list(episodes)
    if not episodes:
        raise ValueError("nothing to evaluate")
    t_obs, t_pred = model.t_obs, model.t_pred
    for ep in episodes:
        if ep.n_steps < t_obs + t_pred:
            raise ValueError(f"episode has {ep.n_steps} steps, evaluation needs {t_obs + t_pred}")
    preds, zs = predict_episodes(model, episodes, batch_size)
    gts = [ep.positions[t_obs:t_obs + t_pred] for ep in episodes]
    base = [constant_velocity_baseline(ep.positions, t_obs, t_pred) for ep in episodes]
    errs = [np.linalg.norm(p - g, axis=-1) for p, g in zip(preds, gts)]
    berrs = [np.linalg.norm(p - g, axis=-1) for p, g in zip(base, gts)]
    rep = EvalReport(
        name=name,
        ade=float(np.mean([e.mean() for e in errs])),
        fde=float(np.mean([e[-1].mean() for e in errs])),
        n_episodes=len(episodes),
        baseline_ade=float(np.mean([e.mean() for e in berrs])),
        baseline_fde=float(np.mean([e[-1].mean() for e in berrs])),
        fingerprint=fingerprint(model, {"name": name, "n": len(episodes)}),
    )
    if all(ep.targets is not None for ep in episodes):
        if edge_type is None and val_episodes:
            edge_type = choose_edge_type(model, val_episodes, batch_size)
        k = zs[0].shape[-1]
        per_k = [float(np.mean([graph_accuracy(z, ep.targets, kk) for z, ep in zip(zs, episodes)]))
                 for kk in range(k)]
        rep.extra["graph_accuracy_per_type"] = per_k
        if edge_type is not None:
            rep.edge_type = int(edge_type)
            rep.graph_accuracy = per_k[edge_type]
    return rep


def choose_edge_type(model, val_episodes, batch_size: int = 64) -> int:
    _, zs = predict_episodes(model, list(val_episodes), batch_size)
    k = zs[0].shape[-1]
    accs = [float(np.mean([graph_accuracy(z, ep.targets, kk) for z, ep in zip(zs, val_episodes)]))
            for kk in range(k)]
    return int(np.argmax(accs))


def variant_datasets(kind: str, base_config, count: int) -> dict:
    """Fresh episode lists for the base environment and each zero-shot variant."""
    if kind == "charged":
        from .sim_charged import generate, variant_configs
    elif kind == "socialnav":
        from .sim_socialnav import generate
        from .sim_socialnav import socialnav_variants as variant_configs
    else:
        raise ValueError(f"no zero-shot variants for episode kind {kind!r}")
    configs = {"base": base_config, **variant_configs(base_config)}
    return {name: (cfg, generate(cfg, count)) for name, cfg in configs.items()}


def zero_shot_eval(model, kind: str, base_config, count: int = 50,
                   edge_type: int | None = None) -> list[EvalReport]:
    """Evaluate one checkpoint on freshly simulated variant environments."""
    reports = []
    for name, (cfg, eps) in variant_datasets(kind, base_config, count).items():
        rep = evaluate(model, eps, name=name, edge_type=edge_type)
        rep.extra["config"] = cfg.to_dict()
        reports.append(rep)
    return reports


# --------------------------------------------------------------- output

_COLUMNS = ("name", "n_episodes", "ade", "fde", "graph_accuracy", "baseline_ade", "baseline_fde")


def _fmt(v):
    if v is None:
        return "-"
    if isinstance(v, float):
        return f"{v:.5f}"
    return str(v)


def report_table(reports) -> str:
    rows = [[_fmt(getattr(r, c)) for c in _COLUMNS] for r in reports]
    widths = [max(len(c), *(len(row[i]) for row in rows)) if rows else len(c)
              for i, c in enumerate(_COLUMNS)]
    line = "  ".join(c.ljust(w) for c, w in zip(_COLUMNS, widths))
    out = [line, "-" * len(line)]
    out += ["  ".join(v.ljust(w) for v, w in zip(row, widths)) for row in rows]
    return "\n".join(out)


def reports_csv(reports) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, list(_COLUMNS) + ["edge_type", "fingerprint"], lineterminator="\n")
    w.writeheader()
    for r in reports:
        row = r.row()
        w.writerow({k: ("" if row[k] is None else repr(row[k]) if isinstance(row[k], float) else row[k])
                    for k in w.fieldnames})
    return buf.getvalue()


def write_reports(path, reports):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(reports_csv(reports))
