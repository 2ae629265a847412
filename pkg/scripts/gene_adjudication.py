"""Tabulate protein-noise CV^2 from the printed closed forms, both moment engines
and the exact-binomial simulator for the default gene-expression parameters.

    python scripts/gene_adjudication.py [--paths 100000] [--seed 0]
"""

import argparse
import math

from ttshs.cli import gene_report
from ttshs.gene import GeneModelParams


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--paths", type=int, default=100_000)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--kx", type=float, default=10.0)
    ap.add_argument("--beta", type=float, default=1.0)
    ap.add_argument("--gamma", type=float, default=1.0)
    args = ap.parse_args()
    params = GeneModelParams(args.kx, 1.0, args.beta, dilution_rate=args.gamma)
    for bursts in (False, True):
        print(f"\n{'bursty' if bursts else 'deterministic'} production")
        rows = gene_report(params, bursts, True, args.paths, args.seed, 1, "binomial")
        sim = rows[-1]
        for source, mean, cv2, se in rows:
            tag = f"+- {se:.5f}" if not math.isnan(se) else ""
            z = "" if not math.isnan(se) else f"z vs simulator {(cv2 - sim[2]) / sim[3]:+7.2f}"
            print(f"  {source:26s} mean {mean:9.4f}  CV2 {cv2:.5f} {tag:10s} {z}")


if __name__ == "__main__":
    main()
