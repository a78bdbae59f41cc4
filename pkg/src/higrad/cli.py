"""Command-line interface.

Subcommands: run (single training run), sweep (grid of runs), diagnose
(post-hoc diagnostics for a run directory), make-figures (render PNGs from
one or more run directories).

Exit codes: 0 success, 2 bad arguments, 3 run diverged, 1 other failure.
"""

from __future__ import annotations

import argparse
import json
import sys

from . import figures, harness

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_USAGE = 2
EXIT_DIVERGED = 3


def _add_run_args(p: argparse.ArgumentParser):
    p.add_argument("--config", help="JSON file with config fields; flags override")
    p.add_argument("--experiment", choices=harness.EXPERIMENTS)
    p.add_argument("--optimizer", choices=harness.OPTIMIZERS)
    p.add_argument("--eta", type=float)
    p.add_argument("--batch", type=int, dest="batch_size")
    p.add_argument("--tau", type=float)
    p.add_argument("--kappa", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--gamma", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--budget-updates", type=int, dest="budget_updates")
    p.add_argument("--budget-seconds", type=float, dest="budget_seconds")
    p.add_argument("--target-test-loss", type=float, dest="target_test_loss")
    p.add_argument("--train-size", type=int, dest="train_size")
    p.add_argument("--test-size", type=int, dest="test_size")
    p.add_argument("--init-params", dest="init_params_path")
    p.add_argument("--from-run", dest="from_run",
                   help="continue from the final parameters of another run")
    p.add_argument("--out", dest="out_dir")
    p.add_argument("--figures", action="store_true",
                   help="also render figures for this run into <out>/figures")


def _build_config(args) -> tuple[harness.ExperimentConfig, str | None]:
    fields = {}
    if args.config:
        with open(args.config, encoding="utf-8") as f:
            fields.update(json.load(f))
    for key in ("experiment", "optimizer", "eta", "batch_size", "tau", "kappa",
                "beta", "gamma", "seed", "budget_updates", "budget_seconds",
                "target_test_loss", "train_size", "test_size",
                "init_params_path", "out_dir"):
        value = getattr(args, key, None)
        if value is not None:
            fields[key] = value
    missing = [k for k in ("experiment", "optimizer", "out_dir") if k not in fields]
    if missing:
        raise SystemExit(f"missing required options: {', '.join('--' + m.replace('_', '-').replace('out-dir', 'out') for m in missing)}")
    return harness.ExperimentConfig(**fields), args.from_run


def _cmd_run(args) -> int:
    cfg, from_run = _build_config(args)
    if from_run:
        result = harness.pretrain_handoff(from_run, cfg)
    else:
        result = harness.run_experiment(cfg)
    print(f"{result.status}: {result.updates} updates, "
          f"{result.wall_seconds:.1f}s training wall clock, "
          f"final test loss {result.final_test_loss:.6g} -> {result.out_dir}")
    if args.figures:
        written = figures.make_figures([result.out_dir], f"{result.out_dir}/figures")
        for path in written:
            print(path)
    return EXIT_OK if result.status == "ok" else EXIT_DIVERGED


def _cmd_sweep(args) -> int:
    summary = harness.sweep(args.grid, args.out)
    bad = 0
    for entry in summary:
        print(f"{entry['dir']}: {entry['status']}, "
              f"final test loss {entry['final_test_loss']:.6g}")
        if entry["status"] != "ok":
            bad += 1
    print(f"{len(summary) - bad}/{len(summary)} runs ok -> {args.out}/summary.csv")
    return EXIT_OK if bad == 0 else EXIT_DIVERGED


def _cmd_diagnose(args) -> int:
    written = harness.diagnostics(args.run)
    for name, path in written.items():
        print(f"{name}: {path}")
    return EXIT_OK


def _cmd_figures(args) -> int:
    written = figures.make_figures(args.run_dirs, args.out)
    for path in written:
        print(path)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="higrad",
        description="Differentiable-physics training laboratory for "
                    "half-inverse gradient optimization.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute one training run")
    _add_run_args(p_run)
    p_run.set_defaults(fn=_cmd_run)

    p_sweep = sub.add_parser("sweep", help="run a grid of configurations")
    p_sweep.add_argument("--grid", required=True, help="JSON grid file")
    p_sweep.add_argument("--out", required=True, help="output directory")
    p_sweep.set_defaults(fn=_cmd_sweep)

    p_diag = sub.add_parser("diagnose", help="post-hoc diagnostics for a run")
    p_diag.add_argument("--run", required=True, help="run directory")
    p_diag.set_defaults(fn=_cmd_diagnose)

    p_fig = sub.add_parser("make-figures", help="render figures from runs")
    p_fig.add_argument("run_dirs", nargs="+", help="run directories")
    p_fig.add_argument("--out", required=True, help="output directory")
    p_fig.set_defaults(fn=_cmd_figures)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except SystemExit:
        raise
    except (OSError, ValueError, figures.FigureError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
