"""End-to-end run of the command-line pipeline on a synthetic cohort.

synth -> train (Cox) -> select -> tune -> train-nn -> calibrate both models.
"""

import argparse
import sys
from pathlib import Path

from survrisk.cli import main as cli


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="pipeline_run")
    ap.add_argument("--n", type=int, default=20000)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--budget", type=int, default=20)
    args = ap.parse_args()

    root = Path(args.out)
    cohort = root / "cohort"
    io = ["--cohort", cohort / "cohort.csv", "--schema", cohort / "schema.json", "--seed", args.seed]
    steps = [
        ["synth", "--out", cohort, "--n", args.n, "--seed", args.seed],
        ["train", *io, "--out", root / "cox"],
        ["select", *io, "--out", root / "select"],
        ["tune", *io, "--out", root / "nn", "--budget", args.budget],
        ["train-nn", *io, "--out", root / "nn"],
        ["calibrate", *io, "--model", root / "cox" / "model.json", "--out", root / "cox"],
        ["calibrate", *io, "--model", root / "nn" / "nn_model.json", "--out", root / "nn"],
    ]
    for argv in steps:
        print(f"$ survrisk {' '.join(str(a) for a in argv)}", flush=True)
        code = cli([str(a) for a in argv])
        if code:
            sys.exit(code)


if __name__ == "__main__":
    main()
