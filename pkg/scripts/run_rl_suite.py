#!/usr/bin/env python3
"""Offline-RL suite: collect one buffer per BlocksWorld task, train both
modes over the five-task sequence, and export figure summaries.

Desk scale by default (3 blocks, 5k transitions per task); --paper-scale
switches to 6 blocks and 50k transitions, which takes hours.
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
    parser.add_argument("--out", default=os.path.join("runs", "rl-suite"))
    parser.add_argument("--seeds", default="4")
    parser.add_argument("--transitions", type=int)
    parser.add_argument("--grad-steps", type=int)
    parser.add_argument("--workers", type=int, default=1)
    parser.add_argument("--paper-scale", action="store_true")
    args = parser.parse_args()

    scale = ["--paper-scale"] if args.paper_scale else []
    buffers = os.path.join(args.out, "buffers")
    os.makedirs(buffers, exist_ok=True)
    for task in range(5):
        name = f"collect_task{task}"
        extra = ["--n", str(args.transitions)] if args.transitions else []
        run(["collect", "--task", str(task), "--seed", str(100 + task),
             "--out-dir", args.out, "--name", name] + extra + scale)
        shutil.copyfile(
            os.path.join(args.out, name, "data", f"buffer_task{task}.jsonl"),
            os.path.join(buffers, f"buffer_task{task}.jsonl"),
        )
    for mode in ("lifelong", "individual"):
        extra = ["--grad-steps", str(args.grad_steps)] if args.grad_steps else []
        run(["train-rl", "--mode", mode, "--seeds", args.seeds,
             "--buffers", buffers, "--out-dir", args.out,
             "--workers", str(args.workers)] + extra + scale)

    metrics_dir = os.path.join(args.out, "metrics")
    os.makedirs(metrics_dir, exist_ok=True)
    for mode in ("lifelong", "individual"):
        shutil.copyfile(
            os.path.join(args.out, f"train-rl_{mode}", "metrics", f"rl_{mode}.csv"),
            os.path.join(metrics_dir, f"rl_{mode}.csv"),
        )
    run(["report", "--in", metrics_dir])
    print(f"summaries under {metrics_dir}")


if __name__ == "__main__":
    main()
