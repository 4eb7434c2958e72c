#!/usr/bin/env python3
"""Sweep the K parameter of the top-k entropy strategy.

K = segments_per_file turns top-k into plain mean entropy, so the sweep
brackets the whole range between "most uncertain segment only" and "whole
file".
"""

import argparse
import json
import os
import sys

from alsed import cmd_report, cmd_sweep

K_VALUES = (1, 5, 10, 25, 50, 175)


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="results/k_sweep")
    ap.add_argument("--n-files", type=int, default=500)
    ap.add_argument("--n-seeds", type=int, default=20)
    ap.add_argument("--epochs", type=int, default=30)
    ap.add_argument("--baseline-repeats", type=int, default=5)
    args = ap.parse_args()

    os.makedirs(args.out, exist_ok=True)
    config = {
        "dataset": {
            "n_files": args.n_files,
            "event_ratio": 0.2,
            "snr_db": 0.0,
            "rng_seed": 0,
        },
        "strategies": [f"top_k_{k}" for k in K_VALUES] + ["random"],
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
        "total_iou",
        os.path.join(args.out, "summary_total_iou.csv"),
        os.path.join(args.out, "plots"),
    )


if __name__ == "__main__":
    sys.exit(main())
