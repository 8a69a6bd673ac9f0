#!/usr/bin/env python3
"""End-to-end desk-scale experiment: generate a synthetic dataset, train a
decomposition model on its unpaired halves, then write an evaluation report
comparing the model against the constant-prediction baselines.

Example:
    python3 scripts/run_experiment.py --out runs/demo --steps 2000
"""

import argparse
import sys
from pathlib import Path

from intrinsics.cli import main as cli


def parse_args(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", required=True, help="experiment root directory")
    ap.add_argument("--scenes", type=int, default=64)
    ap.add_argument("--size", type=int, default=64)
    ap.add_argument("--steps", type=int, default=2000)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--config", help="optional config file forwarded to train")
    return ap.parse_args(argv)


def run(args) -> int:
    root = Path(args.out)
    data = root / "data"
    train_out = root / "train"
    report = root / "report"

    rc = cli(["generate-data", "--out", str(data), "--scenes", str(args.scenes),
              "--size", str(args.size), "--seed", str(args.seed)])
    if rc:
        return rc

    train_cmd = ["train", "--data", str(data), "--out", str(train_out),
                 "--steps", str(args.steps), "--seed", str(args.seed)]
    if args.config:
        train_cmd += ["--config", args.config]
    rc = cli(train_cmd)
    if rc:
        return rc

    rc = cli(["evaluate", "--checkpoint", str(train_out / "checkpoints" / "final"),
              "--data", str(data), "--out", str(report)])
    if rc:
        return rc
    print((report / "report.txt").read_text())
    return 0


if __name__ == "__main__":
    sys.exit(run(parse_args()))
