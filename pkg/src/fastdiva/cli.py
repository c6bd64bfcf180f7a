"""Command-line entry point.

Subcommands:
  run <config.json>     run a configured experiment, write CSV + JSON reports
  plot-data <report.json>  re-emit sweep aggregates as x/y series
  demo-moving-source    run the moving-source demonstration
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from .harness import (ConfigError, ExperimentConfig, run_demo_moving_source,
                      run_experiment)

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2
EXIT_CONFIG = 3


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="fastdiva",
        description="Blind source extraction/separation experiments for "
                    "block-wise time-varying mixtures.")
    sub = p.add_subparsers(dest="command")

    run_p = sub.add_parser("run", help="run an experiment from a JSON config")
    run_p.add_argument("config", help="path to the JSON config file")
    run_p.add_argument("--out", default=".", help="output directory")
    run_p.add_argument("--seed", type=int, default=None,
                       help="override the config master seed")
    run_p.add_argument("--trials", type=int, default=None,
                       help="override the config trial count")
    run_p.add_argument("--sequential", action="store_true",
                       help="force single-threaded execution (trials always "
                            "run sequentially; flag kept for compatibility)")

    plot_p = sub.add_parser("plot-data",
                            help="emit aggregate x/y series from a report")
    plot_p.add_argument("report", help="path to a JSON report file")

    demo_p = sub.add_parser("demo-moving-source",
                            help="run the moving-source demonstration")
    demo_p.add_argument("--out", default=".", help="output directory")
    demo_p.add_argument("--seed", type=int, default=0)
    demo_p.add_argument("--Nb", type=int, default=10000,
                        help="samples per block")
    return p


def _cmd_run(args) -> int:
    config = ExperimentConfig.from_json_file(args.config)
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.trials is not None:
        overrides["trials"] = args.trials
    if overrides:
        raw = config.to_dict()
        raw.update(overrides)
        config = ExperimentConfig.from_dict(raw)
    report = run_experiment(config)
    os.makedirs(args.out, exist_ok=True)
    base = os.path.join(args.out, config.kind)
    report.to_csv(base + "_trials.csv")
    report.to_json(base + "_report.json")
    table = report.summary_table()
    if table:
        print(table)
    print(f"wrote {base}_trials.csv and {base}_report.json")
    return EXIT_OK


def _cmd_plot_data(args) -> int:
    try:
        with open(args.report) as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        print(f"cannot read report: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    aggregates = doc.get("aggregates", [])
    axis = next((c for c in ("alpha", "lambda", "r") if aggregates
                 and c in aggregates[0]), None)
    if axis is None:
        print("report has no sweep aggregates", file=sys.stderr)
        return EXIT_RUNTIME
    metric = next((c for c in ("isr_trimmed_mean_db", "isr_median_db")
                   if c in aggregates[0]), None)
    curves = {}
    for agg in aggregates:
        curves.setdefault(agg.get("variant", "default"), []).append(
            (agg[axis], agg[metric]))
    for variant in sorted(curves):
        print(f"# {variant}  ({axis} vs {metric})")
        for x, y in curves[variant]:
            print(f"{x} {y}")
    return EXIT_OK


def _cmd_demo(args) -> int:
    config = ExperimentConfig(kind="demo_moving_source", trials=1, d=5, T=5,
                              Nb=args.Nb, field_kind="real", seed=args.seed,
                              init="random", score="rational")
    os.makedirs(args.out, exist_ok=True)
    signal_path = os.path.join(args.out, "demo_separated_signals.txt")
    report = run_demo_moving_source(config, signal_path=signal_path)
    base = os.path.join(args.out, "demo_moving_source")
    report.to_csv(base + "_trials.csv")
    report.to_json(base + "_report.json")
    print(report.summary_table())
    print(f"wrote {signal_path}")
    return EXIT_OK


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    try:
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "plot-data":
            return _cmd_plot_data(args)
        if args.command == "demo-moving-source":
            return _cmd_demo(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # runtime failure, reported with diagnostics
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
