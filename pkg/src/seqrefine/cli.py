"""Command-line entry point.

Subcommands: train, generate, refine, corrupt-recover, ablate, report,
eval. Every experiment flag mirrors an ExperimentConfig key verbatim
(underscore form; a dashed alias is also accepted); ``--config`` loads a
key=value file first and explicit flags then override it. Exit code 0 on
success, 1 with a message on stderr for any error.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys

from .experiment import (ExperimentConfig, apply_overrides, cmd_ablate,
                         cmd_corrupt_recover, cmd_eval, cmd_generate, cmd_refine,
                         cmd_report, cmd_train, default_config, load_config)

_CONFIG_FIELDS = [f.name for f in dataclasses.fields(ExperimentConfig)]


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", default=None, metavar="PATH",
                        help="key=value config file; flags override it")
    for name in _CONFIG_FIELDS:
        flags = [f"--{name}"]
        dashed = f"--{name.replace('_', '-')}"
        if dashed not in flags:
            flags.append(dashed)
        parser.add_argument(*flags, dest=name, default=None, help=argparse.SUPPRESS)


def _build_config(args: argparse.Namespace) -> ExperimentConfig:
    overrides = {name: getattr(args, name) for name in _CONFIG_FIELDS
                 if getattr(args, name, None) is not None}
    if args.config is not None:
        return load_config(args.config, overrides)
    cfg = default_config(overrides.get("task", "sudoku4"))
    return apply_overrides(cfg, overrides)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="seqrefine",
        description="Sequential region-wise diffusion experiments with "
                    "iterative partial refinement.")
    sub = parser.add_subparsers(dest="command", required=True)

    for name, text in (("train", "train a denoiser and write a checkpoint"),
                       ("generate", "sample with the sequential scheduler"),
                       ("refine", "generate then iteratively refine"),
                       ("ablate", "run the ratio/noise/region variant grid")):
        _add_config_flags(sub.add_parser(name, help=text))

    p = sub.add_parser("corrupt-recover", help="corrupt valid grids, measure recovery")
    _add_config_flags(p)
    p.add_argument("--k-list", "--k_list", dest="k_list", default="1,2,3",
                   help="comma-separated swap counts")

    p = sub.add_parser("report", help="aggregate result tables across seeds")
    p.add_argument("tables", nargs="+", help="result table CSV paths")
    p.add_argument("--out-dir", "--out_dir", dest="out_dir", default="runs")

    p = sub.add_parser("eval", help="evaluate saved sample artifacts")
    _add_config_flags(p)
    p.add_argument("paths", nargs="+", help="artifact files to score")

    args = parser.parse_args(argv)
    try:
        if args.command == "train":
            ckpt, loss_path = cmd_train(_build_config(args))
            print(f"checkpoint: {ckpt}")
            print(f"loss curve: {loss_path}")
        elif args.command == "generate":
            table = cmd_generate(_build_config(args))
            _print_table_summary(table)
        elif args.command == "refine":
            table = cmd_refine(_build_config(args))
            _print_table_summary(table)
        elif args.command == "corrupt-recover":
            k_list = tuple(int(v) for v in str(args.k_list).replace(",", " ").split())
            table = cmd_corrupt_recover(_build_config(args), k_list)
            _print_table_summary(table)
        elif args.command == "ablate":
            table = cmd_ablate(_build_config(args))
            _print_table_summary(table)
        elif args.command == "report":
            for path in cmd_report(args.tables, args.out_dir):
                print(f"wrote {path}")
        elif args.command == "eval":
            table = cmd_eval(_build_config(args), args.paths)
            for seed, r, metric, value, n in table.sorted_rows():
                print(f"{metric}: {value:.6g}  (n={n})")
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


def _print_table_summary(table) -> None:
    rows = table.sorted_rows()
    print(f"{len(rows)} rows")
    last_r = max((r for _, r, _, _, _ in rows), default=0)
    for seed, r, metric, value, n in rows:
        if r in (0, last_r) and not metric.endswith("_calls"):
            print(f"seed={seed} r={r} {metric}={value:.4f} (n={n})")


if __name__ == "__main__":
    sys.exit(main())
