"""Acceptance criteria 1-9; each test prints one PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -s``; the lines are also
collected into the terminal summary of a full run.
"""

import math
import time

import numpy as np
import pytest

import oracles
from conftest import PRESETS, record_acceptance
from loctail.asymptotics import (dirichlet_approx, fit_moment_limit, kasahara_tail_constant,
                                 partition_count)
from loctail.covariance import (conditional_detcov, detcov_chain_check,
                                reduction_inequality_check)
from loctail.field import NonIntegrableError
from loctail.moments import MomentSeries, growth_ratio, kernel_K_n, moment_mc, moment_series
from loctail.paths import tail_curve, tail_exponent_fit
from loctail.presets import preset
from loctail.tours import (grid_covering_bound, loglog_slope, narrowing_order, nn_tour_length,
                           worst_case_search)

TAIL_X = [1.5, 1.75, 2.0, 2.25, 2.5, 2.75, 3.0]


def _check(number, title, ok, detail):
    record_acceptance(number, title, ok, detail)
    assert ok, detail


def test_c1_bm_moment_oracle(bm):
    t0 = time.perf_counter()
    worst, parts = 0.0, []
    ok = True
    for n in range(1, 5):
        e = moment_mc(bm, n, 10 ** 6, seed=100 + n)
        exact = oracles.BM_MOMENTS[n]
        tol = max(3 * e.stderr, 0.02 * exact)
        ok &= abs(e.value - exact) <= tol
        parts.append(f"n={n}: {e.value:.5f} vs {exact:.5f}")
    elapsed = time.perf_counter() - t0
    ok &= elapsed <= 300
    _check(1, "BM moment oracle", bool(ok), "; ".join(parts) + f"; {elapsed:.1f}s")


def test_c2_growth_exponent(bm):
    series = MomentSeries.exact(oracles.BM_MOMENTS.get, range(1, 13))
    pts = growth_ratio(series, bm.lam)
    target = math.exp(-0.5)
    r10 = pts[9].ratio
    ok = bm.lam == 0.5 and abs(r10 - target) / target < 0.10
    _check(2, "growth exponent", ok, f"lambda={bm.lam}, ratio(10)={r10:.4f}, target {target:.4f}")


def test_c3_tail_exponent_and_kasahara(bm):
    curve = tail_curve(bm, TAIL_X, 10 ** 4, seed=2024, grid=2 ** 12)
    fit = tail_exponent_fit(curve, 0.5)
    series = moment_series(bm, 6, 3 * 10 ** 6, seed=7)
    A = fit_moment_limit(series, 0.5).A
    c = kasahara_tail_constant(0.5, A)
    ok = abs(fit.slope - 0.5) <= 0.15 and abs(c - 0.5) <= 0.15
    _check(3, "tail exponent + Kasahara closure", ok,
           f"slope={fit.slope:.4f}, A-hat={A:.4f}, kasahara={c:.4f}")


def test_c4_kernel_scaling_identity():
    rng = np.random.default_rng(4)
    names = ["fbm:0.3", "fbm:0.75", "fbm2d:0.4", "aniso:0.5:1,2", "aniso:0.35:2,1.5:1,2"]
    worst = 0.0
    for i in range(1000):
        spec = preset(names[i % len(names)])
        n = int(rng.integers(1, 7))
        P = rng.random((n, spec.N))
        omega = float(np.exp(rng.uniform(-2, 2)))
        lhs = kernel_K_n(spec, P * omega ** spec.alpha.array).log
        rhs = -n * spec.H.trace * math.log(omega) + kernel_K_n(spec, P).log
        worst = max(worst, abs(math.expm1(lhs - rhs)))
    _check(4, "kernel scaling identity", worst <= 1e-8, f"max relative error {worst:.2e} over 1000 draws")


def test_c5_determinant_suite():
    rng = np.random.default_rng(5)
    chain_worst, red_worst, degenerate = 0.0, math.inf, 0
    for i in range(1000):
        spec = preset(PRESETS[i % len(PRESETS)])
        n = int(rng.integers(1, 9))
        rep = detcov_chain_check(spec, rng.random((n, spec.N)))
        if rep.degenerate:
            degenerate += 1
            continue
        chain_worst = max(chain_worst, rep.rel_error)
    for i in range(1000):
        spec = preset(PRESETS[i % len(PRESETS)])
        m = int(rng.integers(1, 5))
        k = int(rng.integers(1, max(1, 8 // m) + 1))
        blocks = [rng.random((k, spec.N)) for _ in range(m)]
        rep = reduction_inequality_check(spec, blocks, pivot=int(rng.integers(m)))
        red_worst = min(red_worst, rep.margin_reduction, rep.margin_product)
    mono = True
    for i in range(200):
        spec = preset(PRESETS[i % len(PRESETS)])
        u = rng.random(spec.N)
        S = rng.random((7, spec.N))
        vals = [conditional_detcov(spec, u, S[:j]) for j in range(8)]
        mono &= all(b <= a * (1 + 1e-9) + 1e-15 for a, b in zip(vals, vals[1:]))
    ok = chain_worst <= 1e-8 and red_worst >= -1e-9 and mono and degenerate == 0
    _check(5, "determinant suite", ok,
           f"chain max rel err {chain_worst:.1e}, min log-margin {red_worst:.2e}, "
           f"monotone={mono}, degenerate={degenerate}")


def test_c6_nn_tour_bound():
    ns = [16, 64, 256, 1024]
    alpha = (1.0, 1.0)
    rng = np.random.default_rng(6)
    bounds, maxima, violations = [], [], 0
    for n in ns:
        bound = grid_covering_bound(n, alpha)
        bounds.append(bound)
        for _ in range(1000):
            P = rng.random((n, 2))
            if nn_tour_length(P, narrowing_order(P, alpha), alpha) > bound:
                violations += 1
        rep = worst_case_search(n, alpha, restarts=32, seed=n)
        violations += rep.length > bound
        maxima.append(rep.length)
    s_bound = loglog_slope(ns, bounds)
    s_search = loglog_slope(ns, maxima)
    ok = violations == 0 and abs(s_bound - 0.5) <= 0.05 and abs(s_search - 0.5) <= 0.15
    _check(6, "NN-tour bound", ok,
           f"violations={violations}, bound slope {s_bound:.3f}, search slope {s_search:.3f}")


def test_c7_combinatorics():
    bad = 0
    for n in range(1, 13):
        for m in range(1, 12 // n + 1):
            bad += partition_count(n, m) != oracles.partition_brute(n, m)
    rng = np.random.default_rng(7)
    misses = 0
    for _ in range(1000):
        a = float(rng.uniform(-50, 50))
        n = int(rng.integers(1, 1001))
        p, q = dirichlet_approx(a, n)
        misses += not (1 <= q <= n and abs(p - q * a) <= 1.0 / n)
    _check(7, "combinatorics exactness", bad == 0 and misses == 0,
           f"partition mismatches={bad}, dirichlet failures={misses}")


def test_c8_exceptional_case():
    spec = preset("exceptional")
    ests = [moment_mc(spec, n, 2 * 10 ** 6, seed=800 + n) for n in range(2, 7)]
    series = MomentSeries(spec.fingerprint(), ests)
    low = [p.ratio for p in growth_ratio(series, spec.lam)]
    high = np.array([p.ratio for p in growth_ratio(series, 0.5)])
    rising = all(b > a for a, b in zip(low, low[1:]))
    band = float(np.max(np.abs(high / high.mean() - 1)))
    ok = spec.lam == pytest.approx(0.25) and rising and band <= 0.15
    _check(8, "exceptional case", ok,
           f"vs n^0.25: {', '.join(f'{r:.4f}' for r in low)}; n^0.5 band {band:.3f}")


def test_c9_integrability_frontier(bm):
    threshold = bm.alpha.total / bm.H.trace
    try:
        moment_mc(bm, 2, 1000, seed=9, beta=threshold)
        refused = False
    except NonIntegrableError as exc:
        refused = "sum(alpha) > beta * tr(H)" in str(exc)
    e = moment_mc(bm, 2, 10 ** 5, seed=9, beta=0.9 * threshold)
    ok = refused and math.isfinite(e.value) and e.value > 0
    _check(9, "integrability frontier", ok,
           f"beta={threshold:g} refused={refused}; beta={0.9 * threshold:g} gives {e.value:.4f}")
