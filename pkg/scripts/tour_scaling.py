#!/usr/bin/env python3
"""Worst-case nearest-neighbour tour length versus n on the unit square."""

import argparse
import time
from dataclasses import dataclass

import numpy as np

from loctail.tours import (grid_covering_bound, loglog_slope, narrowing_order, nn_tour_length,
                           worst_case_search)


@dataclass
class Config:
    ns: tuple = (16, 64, 256, 1024)
    alpha: tuple = (1.0, 1.0)
    random_instances: int = 1000
    restarts: int = 32
    seed: int = 0


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--random", type=int, default=Config.random_instances)
    p.add_argument("--restarts", type=int, default=Config.restarts)
    args = p.parse_args()
    cfg = Config(random_instances=args.random, restarts=args.restarts)
    rng = np.random.default_rng(cfg.seed)
    bounds, searched = [], []
    print(f"{'n':>5} {'bound':>9} {'rand max':>9} {'search':>9} {'sec':>6}")
    for n in cfg.ns:
        t0 = time.perf_counter()
        bound = grid_covering_bound(n, cfg.alpha)
        worst = 0.0
        for _ in range(cfg.random_instances):
            P = rng.random((n, len(cfg.alpha)))
            worst = max(worst, nn_tour_length(P, narrowing_order(P, cfg.alpha), cfg.alpha))
        rep = worst_case_search(n, cfg.alpha, cfg.restarts, seed=n)
        bounds.append(bound)
        searched.append(rep.length)
        print(f"{n:>5} {bound:>9.3f} {worst:>9.3f} {rep.length:>9.3f} {time.perf_counter() - t0:>6.1f}")
    print(f"slopes: bound {loglog_slope(cfg.ns, bounds):.3f}, search {loglog_slope(cfg.ns, searched):.3f}")


if __name__ == "__main__":
    main()
