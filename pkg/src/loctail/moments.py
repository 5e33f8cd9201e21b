"""Local-time moments from the covariance-determinant kernel.

The n-th moment of the local time at the origin equals the integral of

    K_n(t_1, ..., t_n) = (2 pi)^{-nd/2} detcov(X_{t_1}, ..., X_{t_n})^{-1/2}

over the n-fold unit cube.  ``moment_mc`` estimates it with uniform points.
Every chunk of samples draws from its own stream, keyed by ``(order, chunk)``,
so estimates do not depend on how many workers run the chunks.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, NamedTuple, Optional, Sequence

import numpy as np

from .covariance import DegenerateConfiguration, batched_logdet, cov_batch, cov_matrix
from .field import FieldSpec, ScalingMatrix, ScalingVector, SpecificationError
from .models import DifferenceField

LOG_2PI = math.log(2.0 * math.pi)
CHUNK = 2 ** 15
MOM_BLOCKS = 32
REJECT_WARN = 0.01


def worker_count(requested: Optional[int] = None) -> int:
    """Workers to use: ``requested``, capped by ``LOCTAIL_THREADS`` when set."""
    n = requested if requested is not None else (os.cpu_count() or 1)
    cap = os.environ.get("LOCTAIL_THREADS")
    if cap:
        try:
            n = min(n, max(1, int(cap)))
        except ValueError:
            warnings.warn(f"ignoring malformed LOCTAIL_THREADS={cap!r}")
    return max(1, n)


class KernelValue(NamedTuple):
    log: float
    value: float


def kernel_K_n(spec: FieldSpec, points, beta: float = 1.0) -> KernelValue:
    """``K_n^beta`` at one configuration; raises on a degenerate covariance."""
    P = np.atleast_2d(np.asarray(points, dtype=float))
    cm = cov_matrix(spec, P)
    if not cm.ok:
        raise DegenerateConfiguration("covariance of the configuration is singular")
    n = P.shape[0]
    logk = beta * (-0.5 * n * spec.d * LOG_2PI - 0.5 * cm.logdet)
    value = math.exp(logk) if logk < 709.0 else math.inf
    return KernelValue(logk, value)


def log_kernel_batch(spec: FieldSpec, points: np.ndarray, beta: float = 1.0):
    """``(log K_n^beta, ok)`` for a ``(B, n, N)`` stack of configurations."""
    P = np.asarray(points, dtype=float)
    n = P.shape[-2]
    logdet, ok = batched_logdet(cov_batch(spec, P))
    logk = beta * (-0.5 * n * spec.d * LOG_2PI - 0.5 * logdet)
    return logk, ok


@dataclass(frozen=True)
class MomentEstimate:
    order: int
    value: float
    stderr: float
    samples: int
    rejected: int
    seed: int
    beta: float = 1.0
    estimator: str = "mom"

    @property
    def reject_rate(self) -> float:
        return self.rejected / max(self.samples, 1)

    @property
    def flagged(self) -> bool:
        return self.reject_rate > REJECT_WARN


def _chunk_logs(spec, order, beta, seed, chunk_index, size):
    ss = np.random.SeedSequence(seed, spawn_key=(order, chunk_index))
    rng = np.random.default_rng(ss)
    pts = rng.random((size, order, spec.N))
    return log_kernel_batch(spec, pts, beta)


def _combine(logs: np.ndarray, estimator: str, blocks: int):
    shift = float(np.max(logs))
    vals = np.exp(logs - shift)
    n = vals.size
    scale = math.exp(shift) if shift < 709.0 else math.inf
    sd = float(np.std(vals, ddof=1)) if n > 1 else 0.0
    stderr = sd / math.sqrt(n) * scale
    if estimator == "mean" or n < blocks:
        return float(np.mean(vals)) * scale, stderr
    # equal consecutive blocks in stream order; the tail remainder joins the last block
    edges = np.linspace(0, n, blocks + 1).astype(int)
    means = np.add.reduceat(vals, edges[:-1]) / np.diff(edges)
    return float(np.median(means)) * scale, stderr


def moment_mc(spec: FieldSpec, n: int, samples: int, seed: int, beta: float = 1.0,
              estimator: str = "mom", blocks: int = MOM_BLOCKS,
              workers: Optional[int] = None, chunk: int = CHUNK) -> MomentEstimate:
    """Monte-Carlo estimate of ``int K_n^beta`` over ``(I^N)^n``.

    Degenerate configurations are rejected and replaced by further draws;
    ``rejected`` counts them.  ``estimator`` is ``"mom"`` (median of ``blocks``
    block means) or ``"mean"``.
    """
    if n < 1:
        raise ValueError(f"order must be >= 1, got {n}")
    samples = int(samples)
    if samples <= 0:
        raise ValueError("samples must be positive")
    if estimator not in ("mom", "mean"):
        raise ValueError(f"unknown estimator {estimator!r}")
    if not beta > 0:
        raise ValueError("beta must be positive")
    spec.require_integrable(beta)
    if n * spec.d > spec.limits.max_factor:
        raise ValueError(f"order {n} with d={spec.d} exceeds the factorization cap")
    # keep chunk memory bounded for large orders
    size = max(256, min(chunk, (2 ** 22) // (n * spec.d) ** 2))
    w = worker_count(workers)
    kept, rejected, have, next_chunk = [], 0, 0, 0
    max_chunks = 4 * (samples // size + 1) + 4
    with ThreadPoolExecutor(max_workers=w) as pool:
        while have < samples:
            need = -(-(samples - have) // size)
            idx = list(range(next_chunk, next_chunk + max(need, 1)))
            next_chunk += len(idx)
            if next_chunk > max_chunks:
                raise DegenerateConfiguration(
                    f"rejection rate too high: {rejected} degenerate draws for {have} kept")
            for logk, ok in pool.map(lambda c: _chunk_logs(spec, n, beta, seed, c, size), idx):
                rejected += int((~ok).sum())
                good = logk[ok]
                kept.append(good)
                have += good.size
    logs = np.concatenate(kept)[:samples]
    value, stderr = _combine(logs, estimator, blocks)
    est = MomentEstimate(n, value, stderr, samples, rejected, int(seed), float(beta), estimator)
    if est.flagged:
        warnings.warn(f"order {n}: {rejected} of {samples} draws rejected as degenerate")
    return est


@dataclass
class MomentSeries:
    fingerprint: str
    estimates: list
    beta: float = 1.0

    def __post_init__(self):
        orders = [e.order for e in self.estimates]
        if any(b <= a for a, b in zip(orders, orders[1:])):
            raise ValueError(f"orders must be strictly increasing, got {orders}")

    @property
    def orders(self) -> list:
        return [e.order for e in self.estimates]

    @property
    def values(self) -> np.ndarray:
        return np.array([e.value for e in self.estimates])

    @property
    def stderrs(self) -> np.ndarray:
        return np.array([e.stderr for e in self.estimates])

    def get(self, order: int) -> MomentEstimate:
        for e in self.estimates:
            if e.order == order:
                return e
        raise KeyError(order)

    def __len__(self):
        return len(self.estimates)

    @classmethod
    def exact(cls, func: Callable[[int], float], orders: Sequence[int],
              fingerprint: str = "exact") -> "MomentSeries":
        """Series with known values and zero standard error."""
        ests = [MomentEstimate(int(n), float(func(n)), 0.0, 0, 0, 0, 1.0, "exact")
                for n in orders]
        return cls(fingerprint, ests)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["n", "value", "stderr", "samples", "rejected", "seed"])
        for e in self.estimates:
            w.writerow([e.order, repr(float(e.value)), repr(float(e.stderr)), e.samples,
                        e.rejected, e.seed])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, fingerprint: str = "", beta: float = 1.0) -> "MomentSeries":
        rows = list(csv.DictReader(io.StringIO(text)))
        ests = [MomentEstimate(int(r["n"]), float(r["value"]), float(r["stderr"]),
                               int(r["samples"]), int(r["rejected"]), int(r["seed"]), beta)
                for r in rows]
        return cls(fingerprint, ests, beta)

    def to_json(self) -> dict:
        return {"schema": "loctail.moments/1", "fingerprint": self.fingerprint,
                "beta": self.beta, "estimates": [asdict(e) for e in self.estimates]}

    @classmethod
    def from_json(cls, doc: dict) -> "MomentSeries":
        return cls(doc["fingerprint"], [MomentEstimate(**e) for e in doc["estimates"]],
                   doc.get("beta", 1.0))


def moment_series(spec: FieldSpec, n_max: int, budget: int, seed: int, beta: float = 1.0,
                  estimator: str = "mom", pilot_fraction: float = 0.05,
                  min_samples: int = 4096, workers: Optional[int] = None) -> MomentSeries:
    """Estimate orders ``1..n_max`` sharing a total sample ``budget``.

    A pilot run measures each order's relative variance; the budget is then
    split in proportion to it.  Final runs extend the pilot streams, so the
    pilot draws are the prefix of the final ones.
    """
    if n_max < 1:
        raise ValueError("n_max must be >= 1")
    budget = int(budget)
    if budget < n_max * min_samples:
        raise ValueError(f"budget {budget} too small for {n_max} orders "
                         f"(need >= {n_max * min_samples})")
    spec.require_integrable(beta)
    pilot = max(min_samples, int(pilot_fraction * budget / n_max))
    relvar = []
    for n in range(1, n_max + 1):
        est = moment_mc(spec, n, pilot, seed, beta, "mean", workers=workers)
        rv = (est.stderr ** 2 * pilot) / max(est.value, 1e-300) ** 2
        relvar.append(max(rv, 1e-12))
    relvar = np.array(relvar)
    alloc = np.maximum(min_samples, np.floor(budget * relvar / relvar.sum())).astype(int)
    ests = [moment_mc(spec, n, int(alloc[n - 1]), seed, beta, estimator, workers=workers)
            for n in range(1, n_max + 1)]
    return MomentSeries(spec.fingerprint(), ests, beta)


def _root_and_se(e: MomentEstimate):
    n = e.order
    r = e.value ** (1.0 / n) if e.value > 0 else 0.0
    se = r * e.stderr / (n * e.value) if e.value > 0 else math.inf
    return r, se


def lyapunov_consistent(series: MomentSeries, k: float = 3.0) -> bool:
    """``E(Z^n)^{1/n}`` nondecreasing in n within ``k`` combined standard errors."""
    roots = [_root_and_se(e) for e in series.estimates]
    for (r0, s0), (r1, s1) in zip(roots, roots[1:]):
        if r1 < r0 - k * math.hypot(s0, s1) - 1e-12 * r0:
            return False
    return True


class GrowthPoint(NamedTuple):
    n: int
    ratio: float
    lo: float
    hi: float


def growth_ratio(series: MomentSeries, lam: float, z: float = 1.959964) -> list:
    """``E(Z^n)^{1/n} / n^lam`` with a delta-method interval."""
    if len(series) == 0:
        raise ValueError("empty series")
    out = []
    for e in series.estimates:
        r, se = _root_and_se(e)
        scale = e.order ** (-lam)
        out.append(GrowthPoint(e.order, r * scale, (r - z * se) * scale, (r + z * se) * scale))
    return out


@dataclass(frozen=True)
class FactorialBound:
    c: float
    per_order: tuple
    slope: float
    stable: bool


FACTORIAL_SLOPE_MAX = 0.2


def factorial_bound_check(series: MomentSeries, xi_sum: float, beta: float = 1.0) -> FactorialBound:
    """Smallest ``c`` with ``value_n <= c^n (n!)^{beta / xi_sum}`` on the observed orders.

    The verdict asks whether the per-order constants stay flat: their
    log-log slope against n must stay below ``FACTORIAL_SLOPE_MAX``.
    """
    if not xi_sum > 0:
        raise ValueError("xi_sum must be positive")
    cs = []
    for e in series.estimates:
        n = e.order
        logc = (math.log(e.value) - beta / xi_sum * math.lgamma(n + 1)) / n if e.value > 0 else -math.inf
        cs.append(math.exp(logc))
    c = max(cs)
    ns = np.array(series.orders, dtype=float)
    if len(cs) < 3:
        return FactorialBound(c, tuple(cs), 0.0, math.isfinite(c))
    slope = float(np.polyfit(np.log(ns), np.log(np.maximum(cs, 1e-300)), 1)[0])
    return FactorialBound(c, tuple(cs), slope, math.isfinite(c) and slope < FACTORIAL_SLOPE_MAX)


def intersection_field(specs: Sequence[FieldSpec], name: str = "") -> FieldSpec:
    """Field of adjoined differences of independent copies; its lambda is the
    intersection exponent ``(m-1) tr(H) / sum sum alpha``."""
    specs = list(specs)
    if len(specs) < 2:
        raise SpecificationError("need at least two fields")
    d = specs[0].d
    H0 = specs[0].H.matrix
    for s in specs[1:]:
        if s.d != d:
            raise SpecificationError(f"fields have different value dimensions {d} and {s.d}")
        if not np.allclose(s.H.matrix, H0, rtol=1e-12, atol=0):
            raise SpecificationError("fields must share the same scaling matrix H")
    m = len(specs)
    alpha = tuple(a for s in specs for a in s.alpha.alpha)
    Ht = np.kron(np.eye(m - 1), H0)
    model = DifferenceField(tuple(s.model for s in specs), tuple(s.N for s in specs))
    return FieldSpec(N=sum(s.N for s in specs), d=(m - 1) * d, alpha=ScalingVector(alpha),
                     H=ScalingMatrix(Ht), model=model, c0=sum(s.c0 for s in specs),
                     name=name or "x".join(s.name or "field" for s in specs),
                     limits=specs[0].limits)


@dataclass
class HolderReport:
    margins: np.ndarray = field(repr=False)
    max_margin: float = -math.inf
    rejected: int = 0

    @property
    def holds(self) -> bool:
        return self.max_margin <= 1e-9


def holder_kernel_bound_check(specs: Sequence[FieldSpec], q: Sequence[float], configs) -> HolderReport:
    """Log-margins ``log K^Delta - sum_k q_k log K^{X_k}`` (must be <= 0).

    ``configs`` is a sequence of tuples ``(P_1, ..., P_m)`` where ``P_k`` holds
    the n points of field k, shape ``(n, N_k)``.
    """
    specs = list(specs)
    m = len(specs)
    q = np.asarray(q, dtype=float)
    if q.shape != (m,):
        raise ValueError(f"need {m} weights, got {q.shape}")
    if np.any(q < 0) or np.any(q > 1) or not math.isclose(q.sum(), m - 1, abs_tol=1e-12):
        raise ValueError(f"weights must lie in [0, 1] and sum to {m - 1}, got {q.tolist()}")
    delta = intersection_field(specs)
    margins, rejected = [], 0
    for cfg in configs:
        blocks = [np.atleast_2d(np.asarray(b, dtype=float)) for b in cfg]
        try:
            lk = kernel_K_n(delta, np.hstack(blocks)).log
            parts = [kernel_K_n(s, b).log if qk > 0 else 0.0
                     for s, b, qk in zip(specs, blocks, q)]
        except DegenerateConfiguration:
            rejected += 1
            continue
        margins.append(lk - float(np.dot(q, parts)))
    arr = np.array(margins)
    return HolderReport(arr, float(arr.max()) if arr.size else -math.inf, rejected)


def abs_normal_moment(n: int) -> float:
    """``E|N(0,1)|^n``; the local-time moments of Brownian motion at 0 up to time 1."""
    return 2.0 ** (n / 2.0) * math.gamma((n + 1) / 2.0) / math.sqrt(math.pi)


def series_to_json(series: MomentSeries) -> str:
    return json.dumps(series.to_json(), indent=2, sort_keys=True)
