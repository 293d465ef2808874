#!/usr/bin/env python3
"""Run registry figures and print a one-line summary for each."""

import argparse
from pathlib import Path

from mfknots.harness import FIGURE_IDS, reproduce


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("figures", nargs="*", default=list(FIGURE_IDS), help="figure ids (default: all)")
    p.add_argument("--out", default="figures")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--scale", type=float, default=1.0, help="fraction of the full run length")
    args = p.parse_args()
    for fid in args.figures:
        rep = reproduce(fid, Path(args.out) / fid, args.seed, args.scale)
        knots = ", ".join(f"{k:+.3f}" for k in rep.knots)
        print(f"{fid:6s} risk {rep.risk:.2e}  knots [{knots}]  admissible={rep.verdict['admissible']}")


if __name__ == "__main__":
    main()
