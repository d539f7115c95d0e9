"""Command line entry point: run, sweep, matchup, plots, validate.

Exit codes: 0 success, 2 configuration error, 1 runtime failure. Relative
output directories are resolved under ``$APC_OUTPUT_ROOT`` when it is set.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import traceback
from pathlib import Path

from apc.harness.config import ConfigError, load_config
from apc.harness.experiment import (
    COARSE_GRID,
    FULL_GRID,
    OPPONENTS,
    emit_plot_data,
    evaluate_matchup,
    output_root,
    run_experiment,
    sweep_cd,
)


def _grid(text: str | None, full: bool) -> tuple[float, ...]:
    if text:
        try:
            return tuple(float(v) for v in text.split(","))
        except ValueError:
            raise ConfigError("--grid", f"expected comma-separated numbers, got {text!r}") from None
    return FULL_GRID if full else COARSE_GRID


def _overrides(cfg, args):
    changes = {}
    if getattr(args, "episodes", None) is not None:
        changes["training.episodes"] = args.episodes
    if getattr(args, "seeds", None):
        changes["training.seeds"] = [int(s) for s in args.seeds.split(",")]
    return cfg.replace(**changes) if changes else cfg


def cmd_run(args) -> int:
    cfg = _overrides(load_config(args.config), args)
    res = run_experiment(cfg, args.out, workers=args.workers)
    print(json.dumps({"directory": str(res.directory), "final": res.summary["final"]}, indent=2, sort_keys=True))
    return 0


def cmd_sweep(args) -> int:
    cfg = _overrides(load_config(args.config), args)
    c_grid = _grid(args.c_grid, args.full_grid)
    d_grid = _grid(args.d_grid, args.full_grid)
    path = output_root(cfg, args.out) / "sweep_cd.csv"
    res = sweep_cd(cfg, c_grid, d_grid, out=path)
    print(f"wrote {path}")
    for d, row in zip(res.d_grid, res.rates):
        print(f"delta={d:<4} " + " ".join(f"{v:5.2f}" for v in row))
    return 0


def cmd_matchup(args) -> int:
    cfg = _overrides(load_config(args.config), args)
    out = output_root(cfg, args.out)
    res = evaluate_matchup(
        cfg,
        args.opponent,
        episodes=args.episodes,
        checkpoint_dir=args.checkpoint,
        train_focal=args.train_focal,
        out=out,
    )
    print(json.dumps({"opponent": args.opponent, "windows": len(res.curves), "intensity": res.intensity}, indent=2))
    return 0


def cmd_plots(args) -> int:
    for path in emit_plot_data(args.directory, args.out):
        print(path)
    return 0


def cmd_validate(args) -> int:
    cfg = load_config(args.config)
    print(f"{args.config}: ok ({cfg.environment}, {len(cfg.agents)} agents, {len(cfg.training.seeds)} seeds)")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="apc", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("config", help="YAML file or preset name")
        sp.add_argument("--out", type=Path, default=None, help="output root (overrides $APC_OUTPUT_ROOT)")
        sp.add_argument("--episodes", type=int, default=None)
        sp.add_argument("--seeds", default=None, help="comma-separated seeds")

    sp = sub.add_parser("run", help="run every seed of a config")
    common(sp)
    sp.add_argument("--workers", type=int, default=1, help="seeds run in parallel processes")
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("sweep", help="cooperation rate over a (c, delta) grid")
    common(sp)
    sp.add_argument("--c-grid", default=None)
    sp.add_argument("--d-grid", default=None)
    sp.add_argument("--full-grid", action="store_true", help="0, 0.1, ..., 1.4 instead of the coarse grid")
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("matchup", help="focal APC agent against a fixed or learning opponent")
    common(sp)
    sp.add_argument("--opponent", required=True, choices=OPPONENTS)
    sp.add_argument("--checkpoint", type=Path, default=None, help="checkpoint directory of a finished run")
    sp.add_argument("--train-focal", action="store_true")
    sp.set_defaults(func=cmd_matchup)

    sp = sub.add_parser("plots", help="curve files from a metrics directory")
    sp.add_argument("directory", type=Path)
    sp.add_argument("--out", type=Path, default=None)
    sp.set_defaults(func=cmd_plots)

    sp = sub.add_parser("validate", help="parse and check a config")
    sp.add_argument("config", help="YAML file or preset name")
    sp.set_defaults(func=cmd_validate)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001
        if args.verbose:
            traceback.print_exc()
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
