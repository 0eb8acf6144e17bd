"""Hybrid-ratio sweep on the synthetic task, end to end through the CLI.

Generates the data, then runs ``glabigru sweep`` over the given gammas and
leaves ``sweep.tsv`` in --out.

    python3 scripts/gamma_sweep_synthetic.py --out runs/sweep --trials 3
"""

import argparse
import sys
from pathlib import Path

from glabigru import cli


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--out", required=True)
    ap.add_argument("--gammas", default="0,0.25,0.5,0.75,1")
    ap.add_argument("--trials", type=int, default=3)
    ap.add_argument("--jobs", type=int, default=1)
    ap.add_argument("--epochs", type=int, default=10)
    ap.add_argument("--mode", default="hard", choices=["none", "hard", "soft"])
    ap.add_argument("--off-path", type=float, default=0.2)
    ap.add_argument("--seed", type=int, default=1)
    args = ap.parse_args()

    out = Path(args.out)
    data = out / "data"
    code = cli.run(["synth", "--classes", "4", "--train", "500", "--test", "200", "--off-path", str(args.off_path),
                    "--seed", "3", "--out", str(data)])
    if code:
        sys.exit(code)
    sys.exit(cli.run([
        "sweep", "--data", str(data / "train.txt"), "--deps", str(data / "train.deps"),
        "--eval-data", str(data / "test.txt"), "--eval-deps", str(data / "test.deps"),
        "--gammas", args.gammas, "--trials", str(args.trials), "--jobs", str(args.jobs),
        "--epochs", str(args.epochs), "--mode", args.mode, "--de", "50", "--dh", "32",
        "--seed", str(args.seed), "--out", str(out / "sweep"),
    ]))


if __name__ == "__main__":
    main()
