"""Command line: ``decorgd {train,grid,demo,eval}``.

Every :class:`RunConfig` key is also a flag (``decor_lr`` -> ``--decor-lr``).
Flags override values read from ``--config``.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import fields, replace

from .config import GRID_LEARNING_RATES, RunConfig, apply_preset, parse_value, read_config, \
    write_config
from .curves import emit_curves


def _add_config_flags(p: argparse.ArgumentParser):
    p.add_argument("--config", help="key = value config file")
    for f in fields(RunConfig):
        p.add_argument("--" + f.name.replace("_", "-"), dest=f.name, default=None,
                       metavar=f.type.upper())


def config_from_args(args) -> RunConfig:
    config = read_config(args.config) if args.config else RunConfig()
    overrides = {f.name: parse_value(f.name, getattr(args, f.name))
                 for f in fields(RunConfig) if getattr(args, f.name) is not None}
    return replace(config, **overrides)


def _float_list(text: str) -> list[float]:
    return [float(s) for s in text.split(",") if s.strip()]


def cmd_train(args) -> int:
    from .training import train

    config = apply_preset(config_from_args(args))
    results = train(config, jobs=args.jobs)
    if config.out:
        write_config(os.path.join(config.out, "run.cfg"), config)
        emit_curves(results, os.path.join(config.out, "curves.txt"))
    for seed, records in results.items():
        last = records[-1] if records else None
        if last is None:
            continue
        status = "DIVERGED" if last.diverged else "ok"
        print(f"seed {seed}: epoch {last.epoch} train_acc {last.train_acc:.4f} "
              f"val_acc {last.val_acc:.4f} test_acc {last.test_acc:.4f} [{status}]")
    return 1 if any(r and r[-1].diverged for r in results.values()) else 0


def cmd_grid(args) -> int:
    from .grid import grid_search

    config = config_from_args(args)
    result = grid_search(config, _float_list(args.lr_set), _float_list(args.decor_lr_set))
    for row in result.table:
        print(f"lr={row.lr:g} decor_lr={row.decor_lr:g} best_val={row.best_val_acc:.4f} "
              f"(epoch {row.best_epoch}) final_val={row.final_val_acc:.4f}")
    print(f"best: lr={result.best.lr:g} decor_lr={result.best.decor_lr:g}")
    return 0


def cmd_demo(args) -> int:
    from .demo import run_demo

    for path in run_demo(args.kind, args.out or "demo_out"):
        print(path)
    return 0


def cmd_eval(args) -> int:
    from ..network import load_checkpoint
    from .training import build_network, evaluate, prepare_data

    config = config_from_args(args)
    data = prepare_data(config)
    net = load_checkpoint(build_network(config, data, config.seeds[0]), args.weights)
    for name, ds in (("train", data.train), ("val", data.val), ("test", data.test)):
        if ds is not None:
            loss, acc = evaluate(net, ds, config.eval_batch_size)
            print(f"{name}: loss {loss:.6f} acc {acc:.4f}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="decorgd")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one network per seed")
    _add_config_flags(p)
    p.add_argument("--jobs", type=int, default=1, help="seeds trained in parallel")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("grid", help="grid search over forward and decorrelation rates")
    _add_config_flags(p)
    default_set = ",".join(repr(v) for v in GRID_LEARNING_RATES)
    p.add_argument("--lr-set", default=default_set)
    p.add_argument("--decor-lr-set", default="0," + default_set)
    p.set_defaults(func=cmd_grid)

    p = sub.add_parser("demo", help="write plot data for a demo")
    p.add_argument("kind", choices=["landscape", "decor-dynamics"])
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_demo)

    p = sub.add_parser("eval", help="evaluate a saved checkpoint")
    _add_config_flags(p)
    p.add_argument("--weights", required=True, help="checkpoint written by train")
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
