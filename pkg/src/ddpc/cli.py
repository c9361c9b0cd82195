"""Command-line interface: collect, check, run, compare and plot-data."""

from __future__ import annotations

import argparse
import csv
import json
import sys

import numpy as np

from . import harness
from .harness import CheckFailure, ConfigError, RunConfig
from .lti import save_experiment_csv

_FMT = "%.17g"


def _load_config(args) -> RunConfig:
    if args.config is None:
        cfg = RunConfig()
    else:
        cfg = harness.load_config(args.config)
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "controller", None) is not None:
        cfg.controller = args.controller
        cfg.validate()
    return cfg


def _cmd_collect(args) -> int:
    cfg = _load_config(args)
    sys_model = cfg.system()
    streams = harness._streams(cfg.seed)
    large, small = harness.collect_excitation(
        cfg, sys_model, streams["excitation"], streams["excitation_noise"])
    save_experiment_csv(large, args.out)
    print(f"wrote {len(large)} samples to {args.out}")
    if small is not None:
        small_path = str(args.out) + ".small.csv"
        save_experiment_csv(small, small_path)
        print(f"wrote {len(small)} samples to {small_path}")
    return 0


def _cmd_check(args) -> int:
    cfg = _load_config(args)
    report = harness.check_config(cfg)
    failed_required = []
    for name, value, bound, passed, enforced in report:
        status = "pass" if passed else "FAIL"
        enforcement = "required" if enforced else "reported"
        print(f"{name}: value {value} vs bound {bound} -> {status} ({enforcement})")
        if enforced and not passed:
            failed_required.append(name)
    if failed_required:
        print(f"failing checks: {', '.join(failed_required)}")
        return 2
    return 0


def _cmd_run(args) -> int:
    cfg = _load_config(args)
    record = harness.run_closed_loop(cfg)
    harness.save_run_record(record, args.out)
    summary = record.summary
    print(
        f"run complete: J={summary['J']:.6g} J_u={summary['J_u']:.6g} "
        f"mean_solve_ms={summary['mean_solve_ms']:.3g} converged={summary['converged']}"
    )
    print(f"wrote {len(record.rows)} rows to {args.out}")
    return 0


def _cmd_compare(args) -> int:
    cfg = _load_config(args)
    variants = None
    if args.config is not None:
        with open(args.config) as fh:
            raw = json.load(fh)
        variants = raw.get("compare")
    seeds = list(range(cfg.seed, cfg.seed + args.seeds))
    rows, aggregates = harness.compare_runs(cfg, variants=variants, seeds=seeds)
    harness.save_compare_csv(rows, aggregates, args.out)
    for agg in aggregates:
        print(
            f"{agg['config']}: runs={agg['runs']} median_J={agg['median_J']:.6g} "
            f"IQR={agg['iqr_J']:.3g} mean_solve_ms={agg['mean_solve_ms']:.3g}"
        )
    failed = [r for r in rows if r["status"] != "ok"]
    if failed:
        print(f"{len(failed)} runs failed (see {args.out})")
    print(f"wrote per-run rows to {args.out} and aggregates to {args.out}.aggregate.csv")
    return 0


def _cmd_plot_data(args) -> int:
    rows = harness.load_run_rows(args.run)
    if not rows:
        print("run record is empty", file=sys.stderr)
        return 2
    n_u = rows[0]["u"].shape[0]
    n_y = rows[0]["y"].shape[0]
    import os

    os.makedirs(args.out, exist_ok=True)

    def write(name, headers, extract):
        path = os.path.join(args.out, name)
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(headers)
            for row in rows:
                writer.writerow([str(row["k"])] + [_FMT % v for v in extract(row)])
        print(f"wrote {path}")

    write("outputs.csv",
          ["k"] + [f"y{i+1}" for i in range(n_y)] + [f"ry{i+1}" for i in range(n_y)],
          lambda row: np.concatenate([row["y"], row["r_y"]]))
    write("inputs.csv",
          ["k"] + [f"u{i+1}" for i in range(n_u)] + [f"ru{i+1}" for i in range(n_u)],
          lambda row: np.concatenate([row["u"], row["r_u"]]))
    write("optimized_inputs.csv",
          ["k"] + [f"ug{i+1}" for i in range(n_u)],
          lambda row: row["u_g"])
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ddpc",
        description="Data-driven predictive control toolkit (SPC, DeePC, GDPC)",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=None, help="JSON run configuration")
    common.add_argument("--seed", type=int, default=None, help="override the config seed")
    common.add_argument("--controller", default=None, choices=harness.CONTROLLERS,
                        help="override the configured controller")

    p = sub.add_parser("collect", parents=[common],
                       help="run the excitation experiment and write the dataset CSV")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_collect)

    p = sub.add_parser("check", parents=[common],
                       help="report data-length and rank gates for a configuration")
    p.set_defaults(func=_cmd_check)

    p = sub.add_parser("run", parents=[common], help="single closed-loop run")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("compare", parents=[common], help="Monte-Carlo controller sweep")
    p.add_argument("--out", required=True)
    p.add_argument("--seeds", type=int, default=1, help="number of consecutive seeds")
    p.set_defaults(func=_cmd_compare)

    p = sub.add_parser("plot-data", help="reshape a run record into per-figure CSV series")
    p.add_argument("run", help="run record CSV produced by the run command")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=_cmd_plot_data)
    return parser


def cli_main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (ConfigError, CheckFailure) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(cli_main())


if __name__ == "__main__":
    main()
