"""Command-line interface: training, sweeps, selection, export, comparison.

Report-producing subcommands write the delimited output plus a rendered
figure next to it (suppress with --no-plot).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

import numpy as np

from . import evalsuite, plots, trainer
from .archspace import parse_arch


def _add_train(sub):
    p = sub.add_parser("train", help="train the multi-architecture policy")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--resume", default=None, help="checkpoint to continue from")
    p.add_argument("--no-plot", action="store_true")


def _add_baseline(sub):
    p = sub.add_parser("baseline", help="train a fixed-architecture PPO baseline")
    p.add_argument("--config", required=True)
    p.add_argument("--arch", required=True, help='e.g. "256,256,256"')
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--no-plot", action="store_true")


def _add_sweep(sub):
    p = sub.add_parser("sweep", help="evaluate architectures under a checkpoint")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--env", required=True)
    p.add_argument("--episodes", type=int, default=4)
    p.add_argument("--subset", default=None,
                   help='semicolon-separated archs, e.g. "4;64;256,256"')
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="sweep.json")
    p.add_argument("--no-plot", action="store_true")


def _add_select(sub):
    p = sub.add_parser("select", help="smallest architecture at a reward fraction")
    p.add_argument("--table", required=True, help="sweep JSON")
    p.add_argument("--fraction", type=float, default=0.9)


def _add_dist(sub):
    p = sub.add_parser("dist", help="reward-distribution curve from a sweep table")
    p.add_argument("--table", required=True)
    p.add_argument("--grid-min", type=float, required=True)
    p.add_argument("--grid-max", type=float, required=True)
    p.add_argument("--grid-n", type=int, default=64)
    p.add_argument("--out", default="dist.csv")
    p.add_argument("--no-plot", action="store_true")


def _add_export(sub):
    p = sub.add_parser("export", help="export one policy for deployment")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--arch", required=True)
    p.add_argument("--out", required=True)


def _add_compare(sub):
    p = sub.add_parser("compare", help="generated vs directly trained policy")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--baseline", required=True)
    p.add_argument("--arch", required=True)
    p.add_argument("--env", default=None)
    p.add_argument("--episodes", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None, help="optional JSON report path")
    p.add_argument("--no-plot", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hyperppo",
        description="Multi-architecture PPO: one hypernetwork, 2800 policies.")
    sub = parser.add_subparsers(dest="command", required=True)
    for add in (_add_train, _add_baseline, _add_sweep, _add_select, _add_dist,
                _add_export, _add_compare):
        add(sub)
    return parser


def cmd_train(args) -> int:
    cfg = trainer.parse_config(args.config)
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    result = trainer.train(cfg, resume=args.resume, plot=not args.no_plot)
    ck = result.checkpoint
    print(f"trained {ck.env_steps} env steps over {ck.iteration} iterations")
    if cfg.out_dir:
        print(f"checkpoint: {os.path.join(cfg.out_dir, 'checkpoint.hppo')}")
    return 0


def cmd_baseline(args) -> int:
    cfg = trainer.parse_config(args.config)
    cfg = dataclasses.replace(cfg, mode="baseline", arch=parse_arch(args.arch))
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    result = trainer.train_baseline(cfg, plot=not args.no_plot)
    ck = result.checkpoint
    print(f"baseline {args.arch}: {ck.env_steps} env steps, "
          f"{ck.iteration} iterations")
    if cfg.out_dir:
        print(f"checkpoint: {os.path.join(cfg.out_dir, 'checkpoint.hppo')}")
    return 0


def cmd_sweep(args) -> int:
    ckpt = trainer.load_checkpoint(args.ckpt)
    subset = None
    if args.subset:
        subset = [parse_arch(part) for part in args.subset.split(";")]
    table = evalsuite.sweep(ckpt, args.env, episodes_per_arch=args.episodes,
                            arch_subset=subset, seed=args.seed)
    evalsuite.table_to_json(table, args.out)
    stem = os.path.splitext(args.out)[0]
    evalsuite.table_to_csv(table, stem + ".csv")
    if not args.no_plot:
        plots.sweep_figure(table, stem + ".png")
    print(f"swept {len(table)} architectures; "
          f"average return {evalsuite.average_reward(table):.4f}")
    print(f"table: {args.out}")
    return 0


def cmd_select(args) -> int:
    table = evalsuite.table_from_json(args.table)
    row = evalsuite.select(table, args.fraction,
                           table.metadata["obs_dim"], table.metadata["act_dim"])
    print(json.dumps(dataclasses.asdict(row)))
    return 0


def cmd_dist(args) -> int:
    table = evalsuite.table_from_json(args.table)
    grid = list(np.linspace(args.grid_min, args.grid_max, args.grid_n))
    points = evalsuite.reward_distribution(table, grid)
    with open(args.out, "w") as fh:
        fh.write("x,count\n")
        for x, c in points:
            fh.write(f"{x:.6g},{c}\n")
    if not args.no_plot:
        plots.distribution_figure(points, os.path.splitext(args.out)[0] + ".png")
    print(f"distribution over {len(table)} architectures: {args.out}")
    return 0


def cmd_export(args) -> int:
    ckpt = trainer.load_checkpoint(args.ckpt)
    spec = parse_arch(args.arch)
    evalsuite.export_policy(ckpt, spec, args.out)
    size = os.path.getsize(args.out)
    print(f"exported {args.arch} policy to {args.out} ({size} bytes)")
    return 0


def cmd_compare(args) -> int:
    ckpt = trainer.load_checkpoint(args.ckpt)
    base = trainer.load_checkpoint(args.baseline)
    spec = parse_arch(args.arch)
    report = evalsuite.compare_small(ckpt, base, spec, env_kind=args.env,
                                     episodes=args.episodes, seed=args.seed)
    print(json.dumps(dataclasses.asdict(report)))
    if args.out:
        with open(args.out, "w") as fh:
            json.dump(dataclasses.asdict(report), fh, indent=1)
        if not args.no_plot:
            plots.compare_figure(report, os.path.splitext(args.out)[0] + ".png")
    return 0


_COMMANDS = {
    "train": cmd_train,
    "baseline": cmd_baseline,
    "sweep": cmd_sweep,
    "select": cmd_select,
    "dist": cmd_dist,
    "export": cmd_export,
    "compare": cmd_compare,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return _COMMANDS[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
