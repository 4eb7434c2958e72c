#!/usr/bin/env python3
"""Compare the uncertainty-aggregation strategies on one synthetic corpus.

Runs every aggregation variant (plus the random baseline and the two
diversified top-k variants) across a seed range, then writes a summary
table and per-curve plot data. The sweep is resumable: rerunning picks up
completed runs from the output directory.
"""

import argparse
import json
import os
import sys

from alsed import cmd_report, cmd_sweep


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="results/strategy_comparison")
    ap.add_argument("--n-files", type=int, default=500)
    ap.add_argument("--n-seeds", type=int, default=20)
    ap.add_argument("--epochs", type=int, default=30)
    ap.add_argument("--baseline-repeats", type=int, default=5)
    ap.add_argument("--metric", default="total_iou",
                    choices=("total_iou", "recall", "f1"))
    args = ap.parse_args()

    os.makedirs(args.out, exist_ok=True)
    config = {
        "dataset": {
            "n_files": args.n_files,
            "event_ratio": 0.2,
            "snr_db": 0.0,
            "rng_seed": 0,
        },
        "strategies": [
            "mean_entropy",
            "median_entropy",
            "mean_event_entropy",
            "top_k_10",
            {"strategy": "top_k_10", "diversifier": "farthest_traversal"},
            {"strategy": "top_k_10", "diversifier": "random_from_prebatch"},
            "random",
        ],
        "seeds": list(range(args.n_seeds)),
        "baseline_repeats": args.baseline_repeats,
        "train": {"epochs": args.epochs},
        "output_dir": "runs",
    }
    config_path = os.path.join(args.out, "config.json")
    with open(config_path, "w", encoding="utf-8") as fh:
        json.dump(config, fh, indent=2)

    rc = cmd_sweep(config_path)
    if rc != 0:
        return rc
    return cmd_report(
        os.path.join(args.out, "runs"),
        args.metric,
        os.path.join(args.out, f"summary_{args.metric}.csv"),
        os.path.join(args.out, "plots"),
    )


if __name__ == "__main__":
    sys.exit(main())
