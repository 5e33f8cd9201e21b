#!/usr/bin/env python3
"""Intersection local time of two independent Brownian motions.

Growth ratios against n^gamma (gamma = 1/4) and against n^{1/2}.
"""

import argparse
from dataclasses import dataclass

import numpy as np

from loctail.moments import MomentSeries, growth_ratio, moment_mc
from loctail.presets import preset


@dataclass
class Config:
    orders: tuple = (2, 3, 4, 5, 6)
    samples: int = 2_000_000
    seed: int = 800


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--samples", type=int, default=Config.samples)
    p.add_argument("--seed", type=int, default=Config.seed)
    args = p.parse_args()
    cfg = Config(samples=args.samples, seed=args.seed)
    spec = preset("exceptional")
    ests = [moment_mc(spec, n, cfg.samples, cfg.seed + n) for n in cfg.orders]
    series = MomentSeries(spec.fingerprint(), ests)
    low = growth_ratio(series, spec.lam)
    high = growth_ratio(series, 0.5)
    print(f"gamma = {spec.lam}")
    print(f"{'n':>2} {'E Z^n':>12} {'/n^gamma':>9} {'/n^0.5':>8}")
    for e, a, b in zip(ests, low, high):
        print(f"{e.order:>2} {e.value:>12.5g} {a.ratio:>9.4f} {b.ratio:>8.4f}")
    hi = np.array([b.ratio for b in high])
    print(f"max deviation from mean against n^0.5: {np.max(np.abs(hi / hi.mean() - 1)):.3f}")


if __name__ == "__main__":
    main()
