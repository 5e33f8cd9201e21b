"""Moment-growth and tail-decay constants, and two exact combinatorial helpers."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from .moments import MomentSeries, growth_ratio
from .paths import InsufficientData, TailCurve, tail_exponent_fit


def kasahara_tail_constant(lam: float, A: float) -> float:
    """``lam / (e A^{1/lam})``: tail constant matching a moment-growth limit ``A``."""
    if not lam > 0:
        raise ValueError(f"lam must be positive, got {lam}")
    if not A > 0:
        raise ValueError(f"A must be positive, got {A}")
    if math.isinf(A):
        return 0.0
    return float(lam / (math.e * math.exp(math.log(A) / lam)))


def kasahara_moment_limit(lam: float, c: float) -> float:
    """Inverse of ``kasahara_tail_constant`` in ``A``."""
    if not (lam > 0 and c > 0):
        raise ValueError("lam and c must be positive")
    return float((lam / (math.e * c)) ** lam)


@dataclass
class MomentLimitFit:
    A: float
    ci: tuple
    extrapolated: Optional[float]
    orders: tuple


def fit_moment_limit(series: MomentSeries, lam: float) -> MomentLimitFit:
    """Median of the growth ratio over the top third of orders.

    The interval joins the median of the pointwise intervals with a
    ``A + b/n`` extrapolation over the top half, since finite-order ratios
    can sit on either side of the limit.
    """
    pts = growth_ratio(series, lam)
    if len(pts) < 1:
        raise InsufficientData("empty series")
    k = max(1, math.ceil(len(pts) / 3))
    top = pts[-k:]
    A = float(np.median([p.ratio for p in top]))
    lo = float(np.median([p.lo for p in top]))
    hi = float(np.median([p.hi for p in top]))
    half = pts[len(pts) // 2:]
    extra = None
    if len(half) >= 2:
        inv_n = np.array([1.0 / p.n for p in half])
        r = np.array([p.ratio for p in half])
        extra = float(np.polyfit(inv_n, r, 1)[1])
        lo, hi = min(lo, extra), max(hi, extra)
    return MomentLimitFit(A, (lo, hi), extra, tuple(p.n for p in top))


@dataclass
class LimitVerdict:
    lam: float
    A_hat: float
    A_ci: tuple
    slope: float
    slope_ci: tuple
    implied_constant: float
    implied_ci: tuple
    consistent: bool
    curvature: float
    curvature_flag: bool
    notes: list = field(default_factory=list)

    def to_json(self) -> dict:
        doc = asdict(self)
        doc["schema"] = "loctail.verdict/1"
        return doc


def _overlap(a: tuple, b: tuple) -> bool:
    return a[0] <= b[1] and b[0] <= a[1]


def limit_diagnostics(series: MomentSeries, curve: TailCurve, lam: float) -> LimitVerdict:
    """Compare the tail constant implied by the moments with the fitted tail slope.

    Both routes converge slowly and from opposite sides for Brownian motion,
    so each interval includes its own drift band (see ``fit_moment_limit``
    and ``TailFit.band``); ``slope_ci`` reports the widened tail interval.
    """
    notes = []
    fit = fit_moment_limit(series, lam)
    tail = tail_exponent_fit(curve, lam)
    A_lo = max(fit.ci[0], 1e-300)
    implied = kasahara_tail_constant(lam, fit.A)
    implied_ci = (kasahara_tail_constant(lam, fit.ci[1]), kasahara_tail_constant(lam, A_lo))
    if len(series) < 3:
        notes.append("fewer than 3 moment orders; moment limit is weakly determined")
    if tail.curvature_flag:
        notes.append(f"tail curvature {tail.curvature:.3g} suggests lambda={lam:g} is wrong")
    consistent = _overlap(implied_ci, tail.band) and not tail.curvature_flag
    return LimitVerdict(lam, fit.A, fit.ci, tail.slope, tail.band, implied, implied_ci,
                        bool(consistent), tail.curvature, tail.curvature_flag, notes)


@dataclass
class SubdivisionTrace:
    omega: float
    M: int
    r: tuple
    ratios: tuple
    floor: float
    kappa: float


def subdivision_diagnostic(series: MomentSeries, omega: float, r_values: Sequence[int],
                           alpha: Sequence[float], trace_H: float) -> SubdivisionTrace:
    """Ratio ``E Z^{M(r+1)} / [omega^{rM trH} (E Z^r)^M M^{rM} / omega^{rM sum(alpha)}]``.

    ``M`` is the product of ``floor(omega^{alpha_i})``.  ``kappa`` is the
    smallest constant with ``ratio >= kappa^M / r^{M(N+1)}`` over the trace.
    """
    a = np.asarray(alpha, dtype=float)
    if not omega >= 1:
        raise ValueError("omega must be >= 1")
    M = int(np.prod(np.floor(omega ** a + 1e-12)))
    N = a.size
    ratios, kappas = [], []
    for r in r_values:
        try:
            hi = series.get(M * (r + 1)).value
            lo = series.get(r).value
        except KeyError as exc:
            raise InsufficientData(f"series lacks order {exc.args[0]}") from exc
        logden = (r * M * trace_H * math.log(omega) + M * math.log(lo)
                  + r * M * math.log(M) - r * M * a.sum() * math.log(omega))
        ratio = math.exp(math.log(hi) - logden)
        ratios.append(ratio)
        kappas.append(math.exp((math.log(ratio) + M * (N + 1) * math.log(r)) / M))
    return SubdivisionTrace(float(omega), M, tuple(int(r) for r in r_values), tuple(ratios),
                            float(min(ratios)), float(min(kappas)))


def partition_count(n: int, m: int) -> int:
    """Ways to split ``n m`` labelled items into n labelled baskets of size m."""
    if n < 0 or m < 0:
        raise ValueError("n and m must be nonnegative")
    return math.factorial(n * m) // math.factorial(m) ** n


STIRLING_K1 = math.sqrt(2.0 * math.pi)
STIRLING_K2 = math.e


def partition_lower_bound(n: int, m: int, k1: float = STIRLING_K1, k2: float = STIRLING_K2) -> float:
    """``k1 sqrt(n) n^{nm} / (k2^n sqrt(m^n))`` in log form, returned as a float log."""
    if n < 1 or m < 1:
        raise ValueError("n and m must be positive")
    return (math.log(k1) + 0.5 * math.log(n) + n * m * math.log(n)
            - n * math.log(k2) - 0.5 * n * math.log(m))


def dirichlet_approx(alpha: float, n: int) -> tuple:
    """``(p, q)`` with ``1 <= q <= n`` minimizing ``|p - q alpha|``; smallest q on ties."""
    if n < 1:
        raise ValueError("n must be >= 1")
    q = np.arange(1, n + 1)
    p = np.rint(q * alpha)
    err = np.abs(p - q * alpha)
    i = int(np.argmin(err))
    return int(p[i]), int(q[i])
