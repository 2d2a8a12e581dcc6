#!/usr/bin/env python3
"""Run the end-to-end l2-vs-H1 comparison study and print per-seed results.

Usage: python3 scripts/run_replication.py [--epochs N] [--seeds 1,2,3]
"""

import argparse
import json
import time

import numpy as np

from derivop.replication import StudyConfig, run_study


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--epochs", type=int, default=100)
    parser.add_argument("--seeds", default="1,2,3,4,5",
                        help="comma-separated weight seeds")
    parser.add_argument("--out", default=None,
                        help="optional JSON path for the per-seed records")
    args = parser.parse_args()

    seeds = tuple(int(s) for s in args.seeds.split(","))
    cfg = StudyConfig(epochs=args.epochs, weight_seeds=seeds)

    def progress(seed, loss_name, accs):
        line = " ".join(f"{k}={v:+.4f}" for k, v in accs.items())
        print(f"seed {seed} {loss_name:8s} {line}", flush=True)

    t0 = time.perf_counter()
    result = run_study(cfg, progress=progress)
    elapsed = time.perf_counter() - t0

    print(f"\ntotal wall time: {elapsed:.1f} s")
    for metric in ("l2", "h1", "gn", "rgn"):
        a = result.accuracy("l2", metric)
        b = result.accuracy("h1_full", metric)
        print(f"{metric:4s} l2-trained median {np.median(a):+.4f}  "
              f"h1-trained median {np.median(b):+.4f}  "
              f"median gap {np.median(b - a):+.4f}")

    if args.out:
        with open(args.out, "w", encoding="utf-8") as f:
            json.dump({"per_seed": result.per_seed, "seconds": elapsed},
                      f, indent=2)
        print(f"wrote {args.out}")


if __name__ == "__main__":
    main()
