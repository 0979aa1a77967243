#!/usr/bin/env python3
"""Desk-scale supervised suite: both training modes for every domain plus
the graph replay run, followed by transfer metrics and figure summaries.

All artifacts land under --out (default ./runs/ilp-suite); pass
--paper-scale for the full-size task generators (slow).
"""

import argparse
import os
import shutil
import sys

from lifelong_nlm.cli import main as cli


def run(argv):
    code = cli(argv)
    if code != 0:
        sys.exit(code)


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--out", default=os.path.join("runs", "ilp-suite"))
    parser.add_argument("--seeds", default="4")
    parser.add_argument("--epochs", type=int, default=50)
    parser.add_argument("--paper-scale", action="store_true")
    args = parser.parse_args()

    scale = ["--paper-scale"] if args.paper_scale else []
    base = ["--seeds", args.seeds, "--epochs", str(args.epochs),
            "--out-dir", args.out] + scale
    jobs = []
    for domain in ("graph", "tree", "arithmetic"):
        for mode in ("lifelong", "individual"):
            jobs.append(["train-ilp", "--domain", domain, "--mode", mode,
                         "--replay", "off"] + base)
    jobs.append(["train-ilp", "--domain", "graph", "--mode", "lifelong",
                 "--replay", "on"] + base)
    for job in jobs:
        print("::", " ".join(job), flush=True)
        run(job)

    metrics_dir = os.path.join(args.out, "metrics")
    os.makedirs(metrics_dir, exist_ok=True)
    csvs = []
    for name in sorted(os.listdir(args.out)):
        src = os.path.join(args.out, name, "metrics")
        if not os.path.isdir(src):
            continue
        for csv_name in sorted(os.listdir(src)):
            if csv_name.startswith("ilp_") and csv_name.endswith(".csv"):
                dst = os.path.join(metrics_dir, csv_name)
                shutil.copyfile(os.path.join(src, csv_name), dst)
                csvs.append(dst)
    run(["metrics", "--in", ",".join(csvs)])
    run(["report", "--in", metrics_dir])
    print(f"summaries under {metrics_dir}")


if __name__ == "__main__":
    main()
