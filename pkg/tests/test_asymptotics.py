import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

import oracles
from loctail.asymptotics import (dirichlet_approx, fit_moment_limit, kasahara_moment_limit,
                                 kasahara_tail_constant, limit_diagnostics, partition_count,
                                 partition_lower_bound, subdivision_diagnostic)
from loctail.moments import MomentSeries
from loctail.paths import TailCurve

BM_EXACT = MomentSeries.exact(oracles.BM_MOMENTS.get, range(1, 13))


class TestKasahara:
    def test_examples(self):
        assert kasahara_tail_constant(1.0, 1.0) == pytest.approx(1 / math.e, rel=1e-14)
        assert kasahara_tail_constant(0.5, math.exp(-0.5)) == pytest.approx(0.5, rel=1e-14)
        assert kasahara_tail_constant(0.5, math.inf) == 0.0

    @given(st.floats(0.05, 3.0), st.floats(0.01, 50.0), st.floats(1.001, 2.0))
    def test_decreasing_and_inverse(self, lam, A, f):
        c = kasahara_tail_constant(lam, A)
        assert kasahara_tail_constant(lam, A * f) < c
        assert kasahara_moment_limit(lam, c) == pytest.approx(A, rel=1e-9)

    def test_invalid(self):
        with pytest.raises(ValueError):
            kasahara_tail_constant(0.0, 1.0)
        with pytest.raises(ValueError):
            kasahara_tail_constant(0.5, -1.0)


def _gaussian_curve(lo=3.0, hi=6.0, R=10 ** 14):
    # exact |N| tail; the log x correction biases short windows near x = 2 upward
    x = np.linspace(lo, hi, 9)
    return TailCurve.synthetic(x, 2 * stats.norm.sf(x), R)


class TestDiagnostics:
    def test_moment_limit_oracle(self):
        fit = fit_moment_limit(BM_EXACT, 0.5)
        assert abs(fit.A - math.exp(-0.5)) / math.exp(-0.5) < 0.05
        assert fit.ci[0] <= math.exp(-0.5) * 1.0 + 0.01

    def test_bm_oracle_chain_consistent(self):
        v = limit_diagnostics(BM_EXACT, _gaussian_curve(), 0.5)
        assert v.consistent, v
        assert 0.4 < v.implied_constant < 0.6
        assert not v.curvature_flag
        assert v.slope_ci[0] <= 0.5 <= v.slope_ci[1]

    def test_short_window_bias_is_visible(self):
        v = limit_diagnostics(BM_EXACT, _gaussian_curve(1.5, 3.0), 0.5)
        assert v.slope > 0.55

    def test_inconsistent_pair(self):
        # moments of |N| against a tail decaying four times faster
        x = np.linspace(1.0, 2.0, 7)
        curve = TailCurve.synthetic(x, np.exp(-2.0 * x ** 2))
        v = limit_diagnostics(BM_EXACT, curve, 0.5)
        assert not v.consistent

    def test_wrong_lambda_propagates_flag(self):
        x = np.linspace(0.5, 3.0, 11)
        v = limit_diagnostics(BM_EXACT, TailCurve.synthetic(x, 2 * stats.norm.sf(x)), 0.25)
        assert v.curvature_flag and not v.consistent
        assert any("curvature" in note for note in v.notes)

    def test_verdict_json(self):
        doc = limit_diagnostics(BM_EXACT, _gaussian_curve(), 0.5).to_json()
        assert doc["schema"] == "loctail.verdict/1" and isinstance(doc["consistent"], bool)


class TestSubdivision:
    def test_bm_omega_two(self):
        tr = subdivision_diagnostic(BM_EXACT, 2.0, [2], alpha=(1.0,), trace_H=0.5)
        assert tr.M == 2
        # E Z^6 / [2^{2*2*0.5} (E Z^2)^2 2^{2*2} / 2^{2*2}] = 15 / 4
        assert tr.ratios[0] == pytest.approx(15.0 / 4.0, rel=1e-12)

    def test_degenerate_M_one(self):
        tr = subdivision_diagnostic(BM_EXACT, 1.0, [3], alpha=(1.0,), trace_H=0.5)
        assert tr.M == 1
        assert tr.ratios[0] == pytest.approx(oracles.BM_MOMENTS[4] / oracles.BM_MOMENTS[3])

    def test_trace_bounded_below(self):
        tr = subdivision_diagnostic(BM_EXACT, 2.0, [2, 3, 4, 5], alpha=(1.0,), trace_H=0.5)
        assert tr.floor > 0 and tr.kappa > 0
        assert all(math.isfinite(r) for r in tr.ratios)

    def test_missing_order(self):
        with pytest.raises(ValueError):
            subdivision_diagnostic(BM_EXACT, 2.0, [6], alpha=(1.0,), trace_H=0.5)


class TestCombinatorics:
    @pytest.mark.parametrize("n,m,val", [(2, 2, 6), (3, 1, 6), (2, 3, 20)])
    def test_examples(self, n, m, val):
        assert partition_count(n, m) == val

    def test_exhaustive_small(self):
        for n in range(1, 13):
            for m in range(1, 13 // n + 1):
                if n * m <= 12:
                    assert partition_count(n, m) == oracles.partition_brute(n, m), (n, m)

    def test_lower_bound(self):
        for n in range(1, 40):
            for m in range(1, 170 // n + 1):
                assert partition_lower_bound(n, m) <= math.log(partition_count(n, m)) + 1e-9

    @pytest.mark.parametrize("alpha,n,pq", [(0.5, 2, (1, 2)), (math.log2(3), 5, (8, 5)),
                                            (math.pi, 7, (22, 7))])
    def test_dirichlet_examples(self, alpha, n, pq):
        assert dirichlet_approx(alpha, n) == pq
        assert dirichlet_approx(alpha, n) == oracles.dirichlet_brute(alpha, n)

    @given(st.floats(-100, 100, allow_nan=False), st.integers(1, 1000))
    def test_dirichlet_bound(self, alpha, n):
        p, q = dirichlet_approx(alpha, n)
        assert 1 <= q <= n
        assert abs(p - q * alpha) <= 1.0 / n + 1e-9 * max(1.0, abs(alpha) * n)
