#!/usr/bin/env python3
"""Top-k vs random under corpus shifts: SNR, event ratio, mean drift.

Each condition regenerates the corpus with one knob moved and repeats the
same top_k_10 vs random protocol, so the summaries are directly comparable
against the base condition.
"""

import argparse
import json
import os
import sys

from alsed import cmd_report, cmd_sweep

CONDITIONS = {
    "base": {},
    "snr_minus10": {"snr_db": -10.0},
    "snr_plus10": {"snr_db": 10.0},
    "all_event_files": {"event_ratio": 1.0},
    "shifted_means": {"domain_shift": 0.3},
}


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="results/generalization")
    ap.add_argument("--n-files", type=int, default=500)
    ap.add_argument("--n-seeds", type=int, default=10)
    ap.add_argument("--epochs", type=int, default=30)
    ap.add_argument("--baseline-repeats", type=int, default=3)
    ap.add_argument("--conditions", nargs="*", default=sorted(CONDITIONS))
    args = ap.parse_args()

    unknown = set(args.conditions) - set(CONDITIONS)
    if unknown:
        print(f"unknown conditions: {sorted(unknown)}", file=sys.stderr)
        return 2

    for name in args.conditions:
        out = os.path.join(args.out, name)
        os.makedirs(out, exist_ok=True)
        spec = {
            "n_files": args.n_files,
            "event_ratio": 0.2,
            "snr_db": 0.0,
            "rng_seed": 0,
        }
        spec.update(CONDITIONS[name])
        config = {
            "dataset": spec,
            "strategies": ["top_k_10", "random"],
            "seeds": list(range(args.n_seeds)),
            "baseline_repeats": args.baseline_repeats,
            "train": {"epochs": args.epochs},
            "output_dir": "runs",
        }
        config_path = os.path.join(out, "config.json")
        with open(config_path, "w", encoding="utf-8") as fh:
            json.dump(config, fh, indent=2)

        print(f"== condition {name}")
        rc = cmd_sweep(config_path)
        if rc != 0:
            return rc
        rc = cmd_report(
            os.path.join(out, "runs"),
            "total_iou",
            os.path.join(out, "summary_total_iou.csv"),
            os.path.join(out, "plots"),
        )
        if rc != 0:
            return rc
    return 0


if __name__ == "__main__":
    sys.exit(main())
