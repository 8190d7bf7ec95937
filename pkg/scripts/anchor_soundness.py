"""How often does the anchor lower bound overshoot the true precision?

Runs the constructed categorical surrogate (true anchor precision 0.9) for a
range of precision thresholds and reports the overshoot rate, the mean
estimate and the distinct anchors returned.

    python scripts/anchor_soundness.py --runs 200 --taus 0.8 0.85 0.95
"""

import argparse
import sys
from collections import Counter
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "tests"))

from oracles import anchor_runs  # noqa: E402
from scendbg.anchors import AnchorConfig  # noqa: E402


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--runs", type=int, default=200)
    ap.add_argument("--taus", type=float, nargs="+", default=[0.8, 0.85, 0.9, 0.95])
    ap.add_argument("--noise", type=float, default=0.1)
    args = ap.parse_args()
    truth = 1 - args.noise
    for tau in args.taus:
        res = anchor_runs((("a", "A0"),), args.noise,
                          AnchorConfig(precision_threshold=tau, coverage_samples=2000), args.runs)
        over = sum(r.lower > truth for r in res)
        sizes = Counter(len(r.rule.predicates) for r in res)
        print(f"tau {tau:.2f}: lower > {truth:.2f} in {over}/{args.runs}, "
              f"mean estimate {np.mean([r.precision for r in res]):.3f}, "
              f"anchor sizes {dict(sorted(sizes.items()))}")


if __name__ == "__main__":
    main()
