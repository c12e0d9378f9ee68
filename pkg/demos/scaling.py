"""Transformation cost grows with the number of frames.

For each live-value count k, the recursion is stopped at depth n and its
stack transformed; op_count / n stays constant.
"""
from __future__ import annotations

import numpy as np

from unistack.harness import ExperimentConfig, transform_scaling


def main() -> None:
    cfg = ExperimentConfig("transform-scaling", ks=(0, 2, 4, 8), depths=(1, 2, 5, 10, 20, 50, 100), repetitions=3)
    res = transform_scaling(cfg)
    print(f"{'k':>3} {'n':>4} {'op_count':>9} {'op/n':>5} {'usec':>8}")
    for r in res.rows:
        print(f"{r['k']:>3} {r['n']:>4} {r['op_count']:>9} {r['alpha']:>5} {r['wall_seconds'] * 1e6:>8.1f}")
    alpha = res.summary["alpha"]
    print(f"\nalpha(k) = {res.summary['alpha_slope']:g} k + {res.summary['alpha_intercept']:g}: {alpha}")
    for k, fit in res.summary["wall_fit"].items():
        print(f"k={k}: {fit['slope'] * 1e6:.2f} usec per frame")
    ks = np.array([int(k) for k in alpha], dtype=float)
    print("alpha exactly affine:", bool(np.allclose(np.polyval(np.polyfit(ks, list(alpha.values()), 1), ks),
                                                  list(alpha.values()))))


if __name__ == "__main__":
    main()
