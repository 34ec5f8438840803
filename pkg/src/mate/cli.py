"""mate command line: simulate, train, eval, predict, plot, ablate.

Exit codes: 0 success, 2 configuration error, 3 numeric failure, 4 I/O error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .autodiff import NonFiniteError
from .config import ConfigError, RunConfig, load_config
from .dataio import (Episode, EpisodeError, load_dataset, read_episodes, read_manifest, split,
                     write_episodes)
from .params import CheckpointError

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4
HORIZONS = {"charged": (80, 20), "socialnav": (24, 10)}

log = logging.getLogger("mate")


class CliError(Exception):
    def __init__(self, code: int, message: str):
        self.code = code
        super().__init__(message)


def _ratios(text: str):
    try:
        vals = tuple(float(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad split ratios {text!r}") from None
    if len(vals) != 3:
        raise argparse.ArgumentTypeError("split needs three comma-separated ratios")
    return vals


# ------------------------------------------------------------ commands

def cmd_simulate(args, run: RunConfig) -> int:
    if args.kind == "charged":
        from .sim_charged import generate
        run = run.override("charged", seed=args.seed, n_particles=args.agents,
                           n_steps=args.steps, box_side=args.box, sample_dt=args.dt)
        cfg = run.charged
    else:
        from .sim_socialnav import generate
        run = run.override("socialnav", seed=args.seed, n_agents=args.agents,
                           preferred_speed=args.speed, t_total=args.steps,
                           arena_radius=args.arena, dt=args.dt)
        cfg = run.socialnav
    if args.count < 0:
        raise CliError(EXIT_CONFIG, "--count must be >= 0")
    episodes = generate(cfg, args.count)
    try:
        splits = split(args.count, args.split, cfg.seed)
    except ValueError as exc:
        raise CliError(EXIT_CONFIG, str(exc)) from exc
    out = Path(args.out)
    write_episodes(out, episodes, splits, {"kind": args.kind, **cfg.to_dict()})
    run.write(out.with_name(out.name + ".config.ini"))
    print(f"wrote {len(episodes)} {args.kind} episodes to {out}")
    return EXIT_OK


def _model_run(run: RunConfig, kind: str, args) -> RunConfig:
    t_obs, t_pred = HORIZONS.get(kind, (run.decoder.t_obs, run.decoder.t_pred))
    if args.t_obs is not None:
        t_obs = args.t_obs
    elif run.is_set("decoder", "t_obs"):
        t_obs = run.decoder.t_obs
    if args.t_pred is not None:
        t_pred = args.t_pred
    elif run.is_set("decoder", "t_pred"):
        t_pred = run.decoder.t_pred
    run = run.override("decoder", t_obs=t_obs, t_pred=t_pred, hidden_size=args.hidden,
                       num_edge_types=args.edge_types)
    return run.override("encoder", t_obs=t_obs, hidden_size=args.hidden,
                        num_edge_types=run.decoder.num_edge_types)


def _load(path):
    try:
        episodes, splits = load_dataset(path)
    except FileNotFoundError as exc:
        raise CliError(EXIT_IO, f"dataset not found: {path}") from exc
    return episodes, splits


def _subset(episodes, splits, name):
    if name == "all" or not splits:
        return list(episodes)
    if name not in splits:
        raise CliError(EXIT_CONFIG, f"dataset has no split {name!r}")
    return [episodes[i] for i in splits[name]]


def cmd_train(args, run: RunConfig) -> int:
    from .model import MateModel
    from .trainer import train

    episodes, splits = _load(args.dataset)
    if not episodes:
        raise CliError(EXIT_CONFIG, "dataset is empty")
    kind = episodes[0].kind
    run = _model_run(run, kind, args)
    run = run.override("train", lambda1=args.lambda1, lambda2=args.lambda2,
                       max_epochs=args.max_epochs, lr=args.lr, batch_size=args.batch_size,
                       seed=args.seed)
    run = run.override("decoder", dt=episodes[0].dt)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    run.write(out / "config.ini")
    tr = _subset(episodes, splits, "train")
    va = _subset(episodes, splits, "val")
    model = MateModel(run.encoder, run.decoder, seed=run.train.seed)
    generator = {}
    try:
        generator = read_manifest(args.dataset).get("generator", {})
    except (OSError, ValueError):
        pass
    res = train(model, tr, va, run.train, out, meta={"data_kind": kind, "generator": generator})
    print(f"best epoch {res.best_epoch} val L_P {res.best_val:.6f}; checkpoint {res.checkpoint}")
    return EXIT_OK


def _load_model(path):
    from .model import MateModel
    try:
        return MateModel.load(path)
    except FileNotFoundError as exc:
        raise CliError(EXIT_IO, f"checkpoint not found: {path}") from exc


def cmd_eval(args, run: RunConfig) -> int:
    from .metrics import evaluate, report_table, write_reports, zero_shot_eval

    model = _load_model(args.checkpoint)
    reports = []
    edge_type = args.edge_type
    if args.dataset:
        episodes, splits = _load(args.dataset)
        test = _subset(episodes, splits, args.split)
        val = _subset(episodes, splits, "val") if splits.get("val") else None
        if not test:
            raise CliError(EXIT_CONFIG, f"split {args.split!r} is empty")
        rep = evaluate(model, test, name=args.split, edge_type=edge_type, val_episodes=val)
        edge_type = rep.edge_type
        reports.append(rep)
    if args.zero_shot:
        kind = model.extra.get("data_kind")
        gen = {k: v for k, v in model.extra.get("generator", {}).items() if k != "kind"}
        if kind == "charged":
            from .sim_charged import ChargedConfig as Cfg
        elif kind == "socialnav":
            from .sim_socialnav import SocialnavConfig as Cfg
        else:
            raise CliError(EXIT_CONFIG, "checkpoint does not record its training data kind")
        base = Cfg(**gen)
        base = type(base)(**{**base.to_dict(), "seed": base.seed + 1})   # fresh scenes
        reports += zero_shot_eval(model, kind, base, args.count, edge_type)
    if not reports:
        raise CliError(EXIT_CONFIG, "nothing to evaluate: give a dataset and/or --zero-shot")
    print(report_table(reports))
    if args.out:
        write_reports(args.out, reports)
    return EXIT_OK


def cmd_predict(args, run: RunConfig) -> int:
    from .metrics import predict_episodes

    model = _load_model(args.checkpoint)
    episodes, splits = _load(args.dataset)
    chosen = _subset(episodes, splits, args.split)
    index = [i for i in (splits.get(args.split) if splits and args.split != "all" else range(len(episodes)))]
    preds, zs = predict_episodes(model, chosen)
    out_eps = []
    for i, ep, fut, z in zip(index, chosen, preds, zs):
        full = np.concatenate([ep.positions[:model.t_obs], fut])
        out_eps.append(Episode(full, ep.dt, "external",
                               {"source_index": int(i), "t_obs": model.t_obs, "z": z.tolist()}))
    write_episodes(args.out, out_eps, generator={"checkpoint": str(args.checkpoint),
                                                 "dataset": str(args.dataset),
                                                 "split": args.split})
    print(f"wrote {len(out_eps)} predictions to {args.out}")
    return EXIT_OK


def cmd_plot(args, run: RunConfig) -> int:
    from .svg import trajectory_svg

    episodes = read_episodes(args.episodes)
    if not 0 <= args.index < len(episodes):
        raise CliError(EXIT_CONFIG, f"episode index {args.index} out of range")
    ep = episodes[args.index]
    prediction, t_obs = None, args.t_obs
    if args.predictions:
        for p in read_episodes(args.predictions):
            if p.meta.get("source_index", None) == args.index:
                t_obs = p.meta.get("t_obs", t_obs) if args.t_obs is None else args.t_obs
                prediction = p.positions[t_obs:]
                break
    svg = trajectory_svg(ep.positions, t_obs, prediction, title=f"episode {args.index}")
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(svg)
    print(f"wrote {out}")
    return EXIT_OK


def cmd_ablate(args, run: RunConfig) -> int:
    from .model import MateModel
    from .trainer import ablate, ablation_table

    episodes, splits = _load(args.dataset)
    if not episodes:
        raise CliError(EXIT_CONFIG, "dataset is empty")
    run = _model_run(run, episodes[0].kind, args)
    run = run.override("train", max_epochs=args.max_epochs, seed=args.seed)
    run = run.override("decoder", dt=episodes[0].dt)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    run.write(out / "config.ini")
    rows = ablate(lambda: MateModel(run.encoder, run.decoder, seed=run.train.seed),
                  _subset(episodes, splits, "train"), _subset(episodes, splits, "val"),
                  _subset(episodes, splits, "test"), run.train)
    table = ablation_table(rows)
    (out / "ablation.txt").write_text(table + "\n")
    print(table)
    return EXIT_OK


# ------------------------------------------------------------- parser

def _model_flags(p):
    p.add_argument("--t-obs", type=int, help="observed steps (default per data kind)")
    p.add_argument("--t-pred", type=int, help="predicted steps (default per data kind)")
    p.add_argument("--hidden", type=int, help="hidden size of encoder and decoder")
    p.add_argument("--edge-types", type=int, help="number of edge types K")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mate", description=__doc__.splitlines()[0])
    p.add_argument("--config", help="INI config file; flags override its values")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="generate a dataset of episodes")
    s.add_argument("kind", choices=("charged", "socialnav"))
    s.add_argument("--count", type=int, default=100)
    s.add_argument("--seed", type=int)
    s.add_argument("--agents", type=int, help="particles or agents per scene")
    s.add_argument("--steps", type=int, help="steps per episode")
    s.add_argument("--dt", type=float, help="sampling step")
    s.add_argument("--speed", type=float, help="socialnav preferred speed")
    s.add_argument("--box", type=float, help="charged box side")
    s.add_argument("--arena", type=float, help="socialnav arena radius")
    s.add_argument("--split", type=_ratios, default=(0.8, 0.1, 0.1), help="train,val,test ratios")
    s.add_argument("--out", required=True, help="output .jsonl path")
    s.set_defaults(func=cmd_simulate)

    t = sub.add_parser("train", help="train a model on a dataset")
    t.add_argument("dataset")
    t.add_argument("--out", required=True, help="run directory")
    t.add_argument("--lambda1", type=float)
    t.add_argument("--lambda2", type=float)
    t.add_argument("--max-epochs", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--batch-size", type=int)
    t.add_argument("--seed", type=int)
    _model_flags(t)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint")
    e.add_argument("checkpoint")
    e.add_argument("dataset", nargs="?")
    e.add_argument("--split", default="test")
    e.add_argument("--edge-type", type=int, help="edge type used for graph accuracy")
    e.add_argument("--zero-shot", action="store_true", help="also run all variant environments")
    e.add_argument("--count", type=int, default=50, help="episodes per zero-shot variant")
    e.add_argument("--out", help="CSV report path")
    e.set_defaults(func=cmd_eval)

    r = sub.add_parser("predict", help="write predicted futures as episodes")
    r.add_argument("checkpoint")
    r.add_argument("dataset")
    r.add_argument("--split", default="test")
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_predict)

    g = sub.add_parser("plot", help="draw one episode (and its prediction) as SVG")
    g.add_argument("episodes")
    g.add_argument("predictions", nargs="?")
    g.add_argument("--index", type=int, default=0)
    g.add_argument("--t-obs", type=int)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_plot)

    a = sub.add_parser("ablate", help="train base/+L_E/+L_D/+both and tabulate")
    a.add_argument("dataset")
    a.add_argument("--out", required=True)
    a.add_argument("--max-epochs", type=int)
    a.add_argument("--seed", type=int)
    _model_flags(a)
    a.set_defaults(func=cmd_ablate)
    return p


def main(argv=None) -> int:
    from .trainer import TrainingDiverged

    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(message)s")
    try:
        run = load_config(args.config)
        return args.func(args, run)
    except CliError as exc:
        print(f"mate: {exc}", file=sys.stderr)
        return exc.code
    except ConfigError as exc:
        print(f"mate: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (TrainingDiverged, NonFiniteError) as exc:
        print(f"mate: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (CheckpointError, EpisodeError, json.JSONDecodeError, OSError) as exc:
        print(f"mate: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"mate: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
