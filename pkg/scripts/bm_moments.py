#!/usr/bin/env python3
"""Brownian local-time moments against E|N(0,1)|^n, plus the tail-slope check."""

import argparse
import json
from dataclasses import asdict, dataclass

from loctail.asymptotics import limit_diagnostics
from loctail.moments import abs_normal_moment, growth_ratio, moment_series
from loctail.paths import tail_curve
from loctail.presets import preset


@dataclass
class Config:
    n_max: int = 6
    budget: int = 3_000_000
    replications: int = 10_000
    grid: int = 4096
    seed: int = 7
    thresholds: tuple = (1.5, 1.75, 2.0, 2.25, 2.5, 2.75, 3.0)


def run(cfg: Config) -> dict:
    bm = preset("bm")
    series = moment_series(bm, cfg.n_max, cfg.budget, cfg.seed)
    rows = []
    for e, g in zip(series.estimates, growth_ratio(series, bm.lam)):
        exact = abs_normal_moment(e.order)
        rows.append({"n": e.order, "mc": e.value, "stderr": e.stderr, "exact": exact,
                     "z": (e.value - exact) / e.stderr, "ratio": g.ratio})
    curve = tail_curve(bm, cfg.thresholds, cfg.replications, cfg.seed, cfg.grid)
    verdict = limit_diagnostics(series, curve, bm.lam)
    return {"config": asdict(cfg), "moments": rows, "verdict": verdict.to_json()}


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--seed", type=int, default=Config.seed)
    p.add_argument("--budget", type=int, default=Config.budget)
    p.add_argument("--out", default=None, help="write JSON here")
    args = p.parse_args()
    res = run(Config(seed=args.seed, budget=args.budget))
    print(f"{'n':>2} {'mc':>10} {'exact':>10} {'z':>6} {'ratio':>7}")
    for r in res["moments"]:
        print(f"{r['n']:>2} {r['mc']:>10.5f} {r['exact']:>10.5f} {r['z']:>6.2f} {r['ratio']:>7.4f}")
    v = res["verdict"]
    print(f"A-hat {v['A_hat']:.4f}  implied c {v['implied_constant']:.4f}  "
          f"slope {v['slope']:.4f}  consistent={v['consistent']}")
    if args.out:
        with open(args.out, "w") as fh:
            json.dump(res, fh, indent=2)


if __name__ == "__main__":
    main()
