"""Narrowing orders, nearest-neighbour tours and grid-covering length bounds.

Distances are ``sum_i |x_i - y_i|^{1/alpha_i}`` after rescaling alpha so that
its smallest entry is at least 1, which makes the distance a metric.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numba
import numpy as np

from .field import ScalingVector


def metric_alpha(alpha) -> np.ndarray:
    sv = alpha if isinstance(alpha, ScalingVector) else ScalingVector(tuple(np.atleast_1d(alpha)))
    return sv.normalized().array


@numba.njit(cache=True)
def _pow(x, e):
    if e == 1.0:
        return x
    if e == 0.5:
        return math.sqrt(x)
    return x ** e


@numba.njit(cache=True)
def _dist(P, i, j, inv):
    s = 0.0
    for a in range(P.shape[1]):
        s += _pow(abs(P[i, a] - P[j, a]), inv[a])
    return s


@numba.njit(cache=True)
def _nn_sequence(P, inv, start):
    """Greedy nearest-neighbour visit order from ``start``; lowest index wins ties."""
    n = P.shape[0]
    seq = np.empty(n, dtype=np.int64)
    best = np.full(n, np.inf)
    used = np.zeros(n, dtype=np.bool_)
    cur = start
    for k in range(n):
        seq[k] = cur
        used[cur] = True
        nxt = -1
        bd = np.inf
        for j in range(n):
            if not used[j]:
                dj = _dist(P, cur, j, inv)
                if dj < bd:
                    bd = dj
                    nxt = j
        if nxt < 0:
            break
        cur = nxt
    return seq


@numba.njit(cache=True)
def _closed_length(P, order, inv):
    n = order.shape[0]
    total = 0.0
    for k in range(n - 1):
        total += _dist(P, order[k + 1], order[k], inv)
    last = order[n - 1]
    for a in range(P.shape[1]):
        total += _pow(abs(P[last, a]), inv[a])
    return total


def _prep(points, alpha):
    P = np.ascontiguousarray(np.atleast_2d(np.asarray(points, dtype=float)))
    a = metric_alpha(alpha)
    if P.shape[1] != a.size:
        raise ValueError(f"points have {P.shape[1]} coordinates, alpha has {a.size}")
    return P, 1.0 / a


def _check_distinct(P):
    if np.unique(P, axis=0).shape[0] != P.shape[0]:
        raise ValueError("points must be distinct")


def narrowing_order(points, alpha, start: int = 0) -> np.ndarray:
    """Indices ``(t_1, ..., t_n)`` forming a narrowing sequence with ``t_n = start``.

    Built by walking nearest neighbours from ``start`` and reversing the walk.
    """
    P, inv = _prep(points, alpha)
    _check_distinct(P)
    if not 0 <= start < P.shape[0]:
        raise ValueError(f"start index {start} out of range")
    return _nn_sequence(P, inv, start)[::-1].copy()


def nn_tour_length(points, ordering, alpha) -> float:
    """``sum_k ||t_{k+1} - t_k||`` along ``ordering``, closed by ``t_{n+1} = 0``."""
    P, inv = _prep(points, alpha)
    order = np.asarray(ordering, dtype=np.int64)
    if sorted(order.tolist()) != list(range(P.shape[0])):
        raise ValueError("ordering must be a permutation of the point indices")
    return float(_closed_length(P, order, inv))


def sorted_order_1d(points) -> np.ndarray:
    """Increasing order for points on the line."""
    P = np.asarray(points, dtype=float).reshape(-1)
    return np.argsort(P, kind="stable")


def _pairwise(P, inv):
    diff = np.abs(P[:, None, :] - P[None, :, :])
    return np.sum(diff ** inv, axis=-1)


def is_narrowing(points, ordering, alpha, rtol: float = 1e-12) -> bool:
    """``d(t_{k+1}, t_k) == min_{i <= k} d(t_{k+1}, t_i)`` for every k."""
    P, inv = _prep(points, alpha)
    D = _pairwise(P[np.asarray(ordering)], inv)
    for k in range(1, D.shape[0]):
        if D[k, k - 1] > D[k, :k].min() * (1 + rtol):
            return False
    return True


def is_nn_tour(points, tour, alpha, rtol: float = 1e-12) -> bool:
    """Every step goes to a nearest not-yet-visited point."""
    P, inv = _prep(points, alpha)
    D = _pairwise(P[np.asarray(tour)], inv)
    for k in range(D.shape[0] - 1):
        if D[k, k + 1] > D[k, k + 1:].min() * (1 + rtol):
            return False
    return True


@dataclass(frozen=True)
class Covering:
    """Anisotropic grid covering of the unit cube by boxes of side ``m^{-alpha_i}``."""

    m: int
    alpha: tuple

    def __post_init__(self):
        if self.m < 1:
            raise ValueError("m must be >= 1")

    @property
    def sides(self) -> np.ndarray:
        return float(self.m) ** -np.array(self.alpha)

    @property
    def counts(self) -> tuple:
        return tuple(int(math.ceil(self.m ** a - 1e-12)) for a in self.alpha)

    @property
    def cardinality(self) -> int:
        return int(np.prod(self.counts))

    @property
    def diameter(self) -> float:
        # sup of the distance over a box is attained at opposite corners
        return float(np.sum(self.sides ** (1.0 / np.array(self.alpha))))

    def cells(self) -> np.ndarray:
        """Lower corners, shape ``(cardinality, N)``."""
        axes = [np.arange(c) * s for c, s in zip(self.counts, self.sides)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def covers(self, points) -> bool:
        P = np.atleast_2d(np.asarray(points, dtype=float))
        idx = np.floor(P / self.sides).astype(int)
        idx = np.minimum(idx, np.array(self.counts) - 1)
        return bool(np.all(idx >= 0) and np.all(P <= idx * self.sides + self.sides + 1e-12))


def grid_covering(m: int, alpha) -> Covering:
    return Covering(int(m), tuple(metric_alpha(alpha)))


def covering_bound(n: int, coverings: Sequence, ambient_diameter: float) -> float:
    """Worst-case tour bound from a nested family with nonincreasing diameters.

    ``coverings`` are objects with ``diameter`` and ``cardinality`` or plain
    ``(diameter, cardinality)`` pairs, finest last.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if not coverings:
        raise ValueError("need at least one covering")
    pairs = [(c.diameter, c.cardinality) if hasattr(c, "diameter") else (float(c[0]), int(c[1]))
             for c in coverings]
    D = [p[0] for p in pairs]
    if any(b > a * (1 + 1e-12) for a, b in zip(D, D[1:])):
        raise ValueError(f"covering diameters must be nonincreasing, got {D}")
    if ambient_diameter < D[0] * (1 - 1e-12):
        raise ValueError("ambient diameter is smaller than the coarsest covering's")
    total = n * D[-1]
    for k in range(1, len(pairs)):
        total += pairs[k][1] * (D[k - 1] - D[k])
    total += pairs[0][1] * (ambient_diameter - D[0])
    return float(total)


def default_levels(n: int, alpha) -> int:
    """``ceil(n^{1 / sum(alpha)})`` for the normalized alpha."""
    a = metric_alpha(alpha)
    return max(1, int(math.ceil(n ** (1.0 / a.sum()) - 1e-12)))


def grid_covering_bound(n: int, alpha, M: Optional[int] = None, optimal: bool = False) -> float:
    """Covering bound with the grid family ``P_1, ..., P_M`` on the unit cube.

    ``optimal`` minimizes over M instead of using ``default_levels``.
    """
    a = metric_alpha(alpha)
    N = a.size

    def at(M_):
        return covering_bound(n, [(N / m, grid_covering(m, a).cardinality)
                                  for m in range(1, M_ + 1)], float(N))

    if optimal:
        # the bound is convex-ish in M; scan far enough past the default
        top = max(2, 4 * default_levels(n, a))
        vals = [at(M_) for M_ in range(1, top + 1)]
        return float(min(vals))
    return at(default_levels(n, a) if M is None else int(M))


@dataclass
class TourReport:
    points: np.ndarray = field(repr=False)
    ordering: np.ndarray = field(repr=False)
    alpha: tuple = ()
    length: float = 0.0
    bound: float = 0.0
    fit: dict = field(default_factory=dict)

    def recompute_length(self) -> float:
        return nn_tour_length(self.points, self.ordering, self.alpha)

    def to_json(self) -> dict:
        return {"schema": "loctail.tour/1", "alpha": list(self.alpha), "length": self.length,
                "bound": self.bound, "ordering": self.ordering.tolist(),
                "points": self.points.tolist(), "fit": self.fit}

    @classmethod
    def from_json(cls, doc: dict) -> "TourReport":
        return cls(np.array(doc["points"], dtype=float), np.array(doc["ordering"], dtype=np.int64),
                   tuple(doc["alpha"]), doc["length"], doc["bound"], doc.get("fit", {}))


def load_points_csv(text: str) -> np.ndarray:
    """One point per row; a non-numeric first row is treated as a header."""
    rows = [r for r in csv.reader(io.StringIO(text)) if r and any(c.strip() for c in r)]
    if not rows:
        raise ValueError("no points")
    try:
        [float(c) for c in rows[0]]
    except ValueError:
        rows = rows[1:]
    P = np.array([[float(c) for c in r] for r in rows])
    if P.ndim != 2:
        raise ValueError("rows have inconsistent lengths")
    return P


def tour_report(points, alpha, start: int = 0) -> TourReport:
    P = np.atleast_2d(np.asarray(points, dtype=float))
    order = narrowing_order(P, alpha, start)
    length = nn_tour_length(P, order, alpha)
    return TourReport(P, order, tuple(metric_alpha(alpha)), length,
                      grid_covering_bound(P.shape[0], alpha))


def _tour_len(P, inv):
    return _closed_length(P, _nn_sequence(P, inv, 0)[::-1].copy(), inv)


def worst_case_search(n: int, alpha, restarts: int = 32, seed: int = 0, steps: int = 200,
                      step0: float = 0.5, decay: float = 0.98) -> TourReport:
    """Multi-start hill climbing for point sets with long nearest-neighbour tours.

    Each step perturbs one coordinate of a random subset of points and keeps
    the move if the tour grows.  Steps start at ``step0`` times the typical
    spacing ``n^{-1/sum(alpha)}`` and decay geometrically.
    """
    if not 1 <= n <= 1024:
        raise ValueError("n must lie in [1, 1024]")
    a = metric_alpha(alpha)
    inv = 1.0 / a
    N = a.size
    bound = grid_covering_bound(n, a)
    best_len, best_P = -1.0, None
    for r in range(restarts):
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(r,)))
        P = rng.random((n, N))
        cur = _tour_len(P, inv)
        step = step0 * n ** (-1.0 / a.sum())
        k = max(1, n // 16)
        for _ in range(steps):
            Q = P.copy()
            who = rng.choice(n, size=k, replace=False)
            axis = rng.integers(0, N, size=k)
            Q[who, axis] = np.clip(Q[who, axis] + rng.normal(0.0, step, size=k), 0.0, 1.0)
            if np.unique(Q, axis=0).shape[0] == n:
                val = _tour_len(Q, inv)
                if val > cur:
                    P, cur = Q, val
            step *= decay
        if cur > best_len:
            best_len, best_P = cur, P
    order = narrowing_order(best_P, a)
    length = nn_tour_length(best_P, order, a)
    if length > bound * (1 + 1e-12):
        raise AssertionError(f"tour length {length} exceeds the covering bound {bound}")
    return TourReport(best_P, order, tuple(a), length, bound)


def loglog_slope(ns, values) -> float:
    return float(np.polyfit(np.log(np.asarray(ns, float)), np.log(np.asarray(values, float)), 1)[0])


def report_json(report: TourReport) -> str:
    return json.dumps(report.to_json(), indent=2)
