"""Command line entry point: ``ncs run``, ``ncs crlb``, ``ncs timing``."""

from __future__ import annotations

import argparse
import sys

from .config import load_scenario
from .crlb import crlb_report_csv
from .harness import ExperimentConfig, parse_sweep, run_experiment, summarize
from .protocol import plan_timing, timing_report_csv, timing_report_text


def _run(args) -> int:
    var, values = parse_sweep(args.sweep) if args.sweep else (None, ())
    mm_pairs = tuple(int(p) for p in args.pairs.split(",")) if args.pairs else None
    config = ExperimentConfig(
        scenario=args.config,
        pipeline=args.pipeline,
        sweep_var=var,
        sweep_values=values,
        trials=args.trials,
        seed=args.seed,
        desk_scale=args.desk_scale,
        output=args.out,
        assoc_radius=args.assoc_radius,
        mm_pairs=mm_pairs,
    )
    rows = run_experiment(config)
    csv_text, table = summarize(rows)
    if args.out is None:
        sys.stdout.write(csv_text)
    elif not args.quiet:
        sys.stdout.write(table)
    return 0


def _crlb(args) -> int:
    sc = load_scenario(args.config)
    if args.desk_scale:
        sc = sc.with_radio(sc.radio.desk_scale())
    if args.tx_power is not None:
        sc = sc.with_tx_power(args.tx_power)
    sys.stdout.write(crlb_report_csv(sc))
    return 0


def _timing(args) -> int:
    plan = plan_timing(args.cell_radius, args.d_int, args.d_min, args.available_gp)
    sys.stdout.write(timing_report_csv(plan) if args.csv else timing_report_text(plan))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ncs", description="Networked collaborative sensing simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="Monte Carlo experiment, RMSE against root-CRLB")
    run.add_argument("--config", required=True, help="scenario TOML file")
    run.add_argument("--sweep", help="e.g. txpower=10:5:40, nbs=2:1:10, i=1,2,3")
    run.add_argument("--trials", type=int, default=200)
    run.add_argument("--seed", type=int, default=7)
    run.add_argument("--pipeline", choices=["full", "ideal_mm", "crlb_only", "mm_only"], default="full")
    run.add_argument("--desk-scale", action="store_true", help="use 256x16x4x4 tensors")
    run.add_argument("--assoc-radius", type=float, default=20.0, help="association gate, m")
    run.add_argument("--pairs", help="pair indices for mm_only, comma separated")
    run.add_argument("--out", help="CSV output path (default: CSV on stdout)")
    run.add_argument("--quiet", action="store_true", help="suppress the summary table")
    run.set_defaults(func=_run)

    crlb = sub.add_parser("crlb", help="root-CRLB of every target state axis as CSV")
    crlb.add_argument("--config", required=True)
    crlb.add_argument("--desk-scale", action="store_true")
    crlb.add_argument("--tx-power", type=float, help="override TX power, dBm")
    crlb.set_defaults(func=_crlb)

    timing = sub.add_parser("timing", help="guard-period gap plan")
    timing.add_argument("--cell-radius", type=float, required=True, help="m")
    timing.add_argument("--d-int", type=float, required=True, help="farthest interfering BS, m")
    timing.add_argument("--d-min", type=float, required=True, help="shortest TX-RX propagation path, m")
    timing.add_argument("--available-gp", type=float, help="guard period available, s")
    timing.add_argument("--csv", action="store_true")
    timing.set_defaults(func=_timing)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"ncs: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
