"""Command-line interface.

    alsed generate --spec spec.json --out data.ds
    alsed run --config exp.json --strategy top_k_10 --seed 3
    alsed sweep --config exp.json
    alsed report --in runs/ --metric total_iou --out summary.csv

Exit codes: 0 success, 1 runtime failure (I/O, bad data, failed runs),
2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import sys

from .experiment import (
    REPORT_METRICS,
    ConfigError,
    cmd_generate,
    cmd_report,
    cmd_run,
    cmd_sweep,
)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="alsed",
        description="Active-learning experiments for segment-level sound "
        "event detection on synthetic corpora.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="generate a dataset from a spec JSON")
    p.add_argument("--spec", required=True, help="dataset spec JSON")
    p.add_argument("--out", required=True, help="output dataset file")

    p = sub.add_parser("run", help="execute a single run and print its CSV rows")
    p.add_argument("--config", required=True, help="experiment config JSON")
    p.add_argument("--strategy", required=True, help="strategy label from the config")
    p.add_argument("--seed", required=True, type=int)

    p = sub.add_parser("sweep", help="execute all runs in the config")
    p.add_argument("--config", required=True, help="experiment config JSON")

    p = sub.add_parser("report", help="aggregate run files into a summary CSV")
    p.add_argument("--in", dest="in_dir", required=True, help="directory of .run files")
    p.add_argument("--metric", required=True, choices=REPORT_METRICS)
    p.add_argument("--out", required=True, help="output summary CSV")
    p.add_argument(
        "--plot-data",
        dest="plot_data",
        default=None,
        help="also write per-strategy plot data files into this directory",
    )
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "generate":
            return cmd_generate(args.spec, args.out)
        if args.command == "run":
            return cmd_run(args.config, args.strategy, args.seed)
        if args.command == "sweep":
            return cmd_sweep(args.config)
        return cmd_report(args.in_dir, args.metric, args.out, args.plot_data)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - uniform runtime-failure exit
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
