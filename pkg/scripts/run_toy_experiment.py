#!/usr/bin/env python3
"""Train both adversarial variants on the synthetic talking-face corpus,
evaluate each on the held-out videos, and write a side-by-side comparison.

Everything runs through the packaged command line, so the artifacts match
what `ganlip train / evaluate / report` produce on their own.
"""

import argparse
import sys
from pathlib import Path

from ganlip.cli import main as cli


def run(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", type=Path, default=Path("runs/toy"),
                    help="root directory for checkpoints, reports, comparison")
    ap.add_argument("--videos", type=int, default=20)
    ap.add_argument("--frames", type=int, default=30)
    ap.add_argument("--size", type=int, default=16)
    ap.add_argument("--epochs", type=int, default=20)
    ap.add_argument("--batch-size", type=int, default=32)
    ap.add_argument("--learning-rate", type=float, default=1e-3)
    ap.add_argument("--seed", type=int, default=10)
    args = ap.parse_args(argv)

    toy = ["--toy", "--toy-videos", str(args.videos),
           "--toy-frames", str(args.frames), "--toy-size", str(args.size)]
    reports = []
    for model in ("l1wgan-gp", "lipgan"):
        run_dir = args.out / model
        rc = cli(["train", "--model", model, *toy,
                  "--epochs", str(args.epochs),
                  "--batch-size", str(args.batch_size),
                  "--learning-rate", str(args.learning_rate),
                  "--seed", str(args.seed), "--out", str(run_dir)])
        if rc:
            return rc
        eval_dir = args.out / f"{model}-eval"
        rc = cli(["evaluate", "--checkpoint", str(run_dir / "generator.ckpt"),
                  *toy, "--out", str(eval_dir)])
        if rc:
            return rc
        reports.append(str(eval_dir / "report.json"))

    return cli(["report", *reports, "--out", str(args.out / "comparison")])


if __name__ == "__main__":
    sys.exit(run())
