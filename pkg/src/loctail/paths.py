"""Exact grid sampling, mollified local times and empirical tail curves."""

from __future__ import annotations

import csv
import io
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.linalg import cholesky
from scipy.stats import binomtest
from scipy.stats import t as student_t

from .field import FieldSpec

DEFAULT_EPS_K = (4, 5, 6, 7, 8)
BATCH = 256
ZERO_VAR = 1e-300


class ModelDefect(RuntimeError):
    """The grid covariance is not positive definite."""


class InsufficientData(ValueError):
    """Too few usable points for a fit."""


def default_resolution(N: int) -> int:
    return {1: 2 ** 12, 2: 2 ** 6}.get(N, int(4096 ** (1.0 / N)))


def unit_grid(N: int, G) -> np.ndarray:
    """Right-endpoint nodes ``k / G_i``, ``k = 1..G_i``, of the unit cube."""
    Gs = [int(G)] * N if np.isscalar(G) else [int(g) for g in G]
    if len(Gs) != N or min(Gs) < 1:
        raise ValueError(f"need {N} positive resolutions, got {Gs}")
    axes = [np.arange(1, g + 1) / g for g in Gs]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=-1)


PSD_TOL = 1e-9


def _root(C: np.ndarray) -> np.ndarray:
    """A matrix ``F`` with ``F F^T = C``: Cholesky, or a symmetric root when
    ``C`` is singular but positive semidefinite (difference fields on product
    grids are rank deficient)."""
    try:
        F = cholesky(C, lower=True, check_finite=True)
        if np.all(np.diag(F) ** 2 > ZERO_VAR):
            return F
    except np.linalg.LinAlgError:
        pass
    w, V = np.linalg.eigh(C)
    if w.min() < -PSD_TOL * max(w.max(), 0.0):
        raise ModelDefect(f"grid covariance is not positive semidefinite "
                          f"(eigenvalue {w.min():.3g}, largest {w.max():.3g})")
    keep = w > PSD_TOL * w.max()
    return V[:, keep] * np.sqrt(w[keep])


class GridSampler:
    """Factor the grid covariance once; draw exact samples from it.

    Nodes where the field has zero variance (the origin for fields vanishing
    there) are set to exactly 0 and kept out of the factorization.
    """

    def __init__(self, spec: FieldSpec, nodes: np.ndarray, cell_volume: Optional[float] = None):
        nodes = np.atleast_2d(np.asarray(nodes, dtype=float))
        if nodes.shape[-1] != spec.N:
            raise ValueError(f"nodes need {spec.N} coordinates")
        k = nodes.shape[0] * spec.d
        if k > spec.limits.max_factor:
            raise ValueError(f"{nodes.shape[0]} nodes x d={spec.d} exceeds the factorization "
                             f"cap {spec.limits.max_factor}")
        self.spec = spec
        self.nodes = nodes
        self.cell_volume = cell_volume if cell_volume is not None else 1.0 / nodes.shape[0]
        C = spec.model.cross_cov(nodes, nodes).reshape(k, k)
        C = 0.5 * (C + C.T)
        self.active = np.diag(C) > ZERO_VAR
        Ca = C[np.ix_(self.active, self.active)]
        self.factor = _root(Ca) if Ca.size else np.zeros((0, 0))

    @property
    def size(self) -> int:
        return self.nodes.shape[0]

    def draw(self, rng: np.random.Generator, R: int) -> np.ndarray:
        """``(R, nodes, d)`` samples."""
        k = self.size * self.spec.d
        out = np.zeros((R, k))
        m = self.factor.shape[1]
        if m:
            z = rng.standard_normal((R, m))
            out[:, self.active] = z @ self.factor.T
        return out.reshape(R, self.size, self.spec.d)

    def batches(self, R: int, seed: int, batch: int = BATCH):
        """Yield sample batches; batch b uses the stream keyed by ``(seed, b)``."""
        for b, start in enumerate(range(0, R, batch)):
            rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(b,)))
            yield self.draw(rng, min(batch, R - start))


@dataclass
class GridPath:
    nodes: np.ndarray = field(repr=False)
    values: np.ndarray = field(repr=False)
    cell_volume: float
    fingerprint: str
    seed: int


def sample_field(spec: FieldSpec, grid, seed: int) -> GridPath:
    """One exact sample of the field at the grid nodes.

    ``grid`` is a resolution (scalar or per axis) or an explicit node array.
    """
    if isinstance(grid, GridSampler):
        sampler = grid
    elif np.ndim(grid) == 2:
        sampler = GridSampler(spec, np.asarray(grid, dtype=float))
    else:
        sampler = GridSampler(spec, unit_grid(spec.N, grid))
    values = sampler.draw(np.random.default_rng(seed), 1)[0]
    return GridPath(sampler.nodes, values, sampler.cell_volume, spec.fingerprint(), int(seed))


def ball_volume(eps: float, d: int, norm: str = "sup") -> float:
    if norm == "sup":
        return (2.0 * eps) ** d
    if norm == "euclidean":
        return math.pi ** (d / 2.0) / math.gamma(d / 2.0 + 1.0) * eps ** d
    raise ValueError(f"unknown norm {norm!r}")


def _dist(values: np.ndarray, x, norm: str) -> np.ndarray:
    diff = values - np.asarray(x, dtype=float)
    if norm == "sup":
        return np.max(np.abs(diff), axis=-1)
    if norm == "euclidean":
        return np.sqrt(np.sum(diff * diff, axis=-1))
    raise ValueError(f"unknown norm {norm!r}")


def local_time_eps(path: GridPath, x, eps: float, norm: str = "sup") -> float:
    """``vol{t : ||X_t - x|| < eps} / V_eps`` on the grid."""
    if not eps > 0:
        raise ValueError("eps must be positive")
    d = path.values.shape[-1]
    x = np.broadcast_to(np.asarray(x, dtype=float), (d,))
    occ = np.count_nonzero(_dist(path.values, x, norm) < eps) * path.cell_volume
    return float(occ / ball_volume(eps, d, norm))


def local_times(values: np.ndarray, eps: Sequence[float], cell_volume: float, x=0.0,
                norm: str = "sup") -> np.ndarray:
    """Mollified local times for a ``(R, nodes, d)`` ensemble; shape ``(R, len(eps))``."""
    d = values.shape[-1]
    x = np.broadcast_to(np.asarray(x, dtype=float), (d,))
    dist = _dist(values, x, norm)
    out = np.empty((values.shape[0], len(eps)))
    for j, e in enumerate(eps):
        out[:, j] = np.count_nonzero(dist < e, axis=-1) * cell_volume / ball_volume(e, d, norm)
    return out


def richardson(z_small: np.ndarray, z_big: np.ndarray, ratio: float = 2.0) -> np.ndarray:
    """Two-point extrapolation for a first-order error in eps, clipped at 0."""
    return np.maximum((ratio * z_small - z_big) / (ratio - 1.0), 0.0)


@dataclass
class OccupationDensity:
    edges: list
    density: np.ndarray = field(repr=False)
    bin_width: float = 0.0

    @property
    def bin_volume(self) -> float:
        return self.bin_width ** len(self.edges)

    @property
    def centers(self) -> list:
        return [0.5 * (e[1:] + e[:-1]) for e in self.edges]

    @property
    def mass(self) -> float:
        return float(self.density.sum() * self.bin_volume)

    def integrate(self, f: Callable[[np.ndarray], np.ndarray]) -> float:
        """``int f(x) density(x) dx`` by the midpoint rule."""
        mesh = np.meshgrid(*self.centers, indexing="ij")
        pts = np.stack(mesh, axis=-1)
        return float(np.sum(f(pts) * self.density) * self.bin_volume)


def occupation_density(path: GridPath, bin_width: float) -> OccupationDensity:
    """Occupation histogram of the path, normalized per unit value-volume."""
    if not bin_width > 0:
        raise ValueError("bin_width must be positive")
    v = path.values
    d = v.shape[-1]
    edges = []
    for a in range(d):
        lo = math.floor(v[:, a].min() / bin_width) * bin_width
        hi = (math.floor(v[:, a].max() / bin_width) + 1) * bin_width
        edges.append(np.arange(lo, hi + 0.5 * bin_width, bin_width))
    counts, _ = np.histogramdd(v, bins=edges)
    dens = counts * path.cell_volume / bin_width ** d
    return OccupationDensity(edges, dens, bin_width)


def time_integral(path: GridPath, f: Callable[[np.ndarray], np.ndarray]) -> float:
    """``int f(X_t) dt`` by the grid rule."""
    return float(np.sum(f(path.values)) * path.cell_volume)


@dataclass
class Ensemble:
    z_eps: np.ndarray = field(repr=False)
    z: np.ndarray = field(repr=False)
    eps: tuple = ()
    levels: tuple = ()


MIN_HITS = 40


def resolved_levels(z_eps: np.ndarray, eps: Sequence[float], cell_volume: float, d: int = 1,
                    norm: str = "sup", min_hits: float = MIN_HITS) -> list:
    """Indices of radii whose window holds at least ``min_hits`` nodes on average."""
    return [j for j, e in enumerate(eps)
            if z_eps[:, j].mean() * ball_volume(e, d, norm) / cell_volume >= min_hits]


def local_time_ensemble(spec: FieldSpec, replications: int, seed: int, grid=None,
                        eps_k: Sequence[int] = DEFAULT_EPS_K, norm: str = "sup",
                        extrapolate: bool = True, sampler: Optional[GridSampler] = None,
                        min_hits: float = MIN_HITS) -> Ensemble:
    """Local times at the origin over independent replications.

    ``z`` extrapolates the two smallest radii that the grid resolves (mean
    window occupancy of at least ``min_hits`` nodes); with ``extrapolate``
    off it is the smallest resolved radius alone.
    """
    if replications < 1:
        raise ValueError("replications must be positive")
    eps = tuple(2.0 ** -k for k in sorted(eps_k))
    if sampler is None:
        grid = default_resolution(spec.N) if grid is None else grid
        sampler = GridSampler(spec, unit_grid(spec.N, grid))
    zs = [local_times(v, eps, sampler.cell_volume, norm=norm)
          for v in sampler.batches(replications, seed)]
    z_eps = np.vstack(zs)
    ok = resolved_levels(z_eps, eps, sampler.cell_volume, spec.d, norm, min_hits)
    if not ok:
        warnings.warn("no radius in the schedule is resolved by the grid; using the largest")
        ok = [0]
    fine = ok[-1]
    if extrapolate and fine >= 1:
        coarse = fine - 1
        z = richardson(z_eps[:, fine], z_eps[:, coarse], eps[coarse] / eps[fine])
        levels = (coarse, fine)
    else:
        z = z_eps[:, fine].copy()
        levels = (fine,)
    return Ensemble(z_eps, z, eps, tuple(eps[j] for j in levels))


@dataclass
class TailCurve:
    thresholds: np.ndarray
    p_hat: np.ndarray
    ci_lo: np.ndarray
    ci_hi: np.ndarray
    counts: np.ndarray
    replications: int
    eps: tuple = ()

    @classmethod
    def from_samples(cls, z: np.ndarray, thresholds, eps: tuple = (),
                     confidence: float = 0.95) -> "TailCurve":
        x = np.asarray(thresholds, dtype=float)
        if np.any(np.diff(x) < 0):
            raise ValueError("thresholds must be ascending")
        R = int(z.size)
        counts = np.array([np.count_nonzero(z > t) for t in x])
        lo, hi = [], []
        for c in counts:
            ci = binomtest(int(c), R).proportion_ci(confidence, method="wilson")
            lo.append(ci.low)
            hi.append(ci.high)
        return cls(x, counts / R, np.array(lo), np.array(hi), counts, R, tuple(eps))

    @classmethod
    def synthetic(cls, thresholds, p, replications: int = 10 ** 6) -> "TailCurve":
        """Curve with prescribed probabilities, for testing fits."""
        x = np.asarray(thresholds, dtype=float)
        p = np.asarray(p, dtype=float)
        counts = np.round(p * replications).astype(int)
        return cls(x, p, p, p, counts, replications)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["x", "p_hat", "ci_lo", "ci_hi"])
        for row in zip(self.thresholds, self.p_hat, self.ci_lo, self.ci_hi):
            w.writerow([repr(float(v)) for v in row])
        return buf.getvalue()


def tail_curve(spec: FieldSpec, thresholds, replications: int, seed: int, grid=None,
               eps_k: Sequence[int] = DEFAULT_EPS_K, norm: str = "sup") -> TailCurve:
    """Empirical ``P(Z > x)`` of the extrapolated local time at the origin."""
    x = np.asarray(thresholds, dtype=float)
    if np.any(np.diff(x) < 0):
        raise ValueError("thresholds must be ascending")
    ens = local_time_ensemble(spec, replications, seed, grid, eps_k, norm)
    return TailCurve.from_samples(ens.z, x, ens.levels)


@dataclass(frozen=True)
class TailFit:
    slope: float
    ci: tuple
    intercept: float
    curvature: float
    curvature_flag: bool
    n_used: int
    end_slope: float = math.nan

    @property
    def band(self) -> tuple:
        """``ci`` widened by the drift from the fitted slope to the window-end slope."""
        drift = self.end_slope - self.slope if math.isfinite(self.end_slope) else 0.0
        lo, hi = self.ci
        return (min(lo, lo + drift), max(hi, hi + drift))


MIN_COUNT = 20
P_MAX = 0.5
CURVATURE_MAX = 0.4
CURVATURE_T = 2.0


def tail_exponent_fit(curve: TailCurve, lam: float, min_count: int = MIN_COUNT,
                      p_max: float = P_MAX) -> TailFit:
    """Weighted least squares of ``-log p`` on ``x^{1/lam}``.

    Uses thresholds with at least ``min_count`` exceedances and ``p <= p_max``.
    Curvature is the spread of local slopes of a quadratic fit across the
    window, relative to the mid-window slope.  It is flagged when it exceeds
    ``CURVATURE_MAX`` in size and the quadratic term is significant
    (|t| > ``CURVATURE_T``): then ``lam`` does not straighten the curve.
    """
    if not lam > 0:
        raise ValueError("lam must be positive")
    p = curve.p_hat
    use = (curve.counts >= min_count) & (p > 0) & (p < 1) & (p <= p_max)
    if use.sum() < 4:
        raise InsufficientData(f"only {int(use.sum())} usable thresholds, need 4")
    u = curve.thresholds[use] ** (1.0 / lam)
    y = -np.log(p[use])
    R = curve.replications
    w = R * p[use] / (1.0 - p[use])  # inverse delta-method variance of log p
    X = np.column_stack([np.ones_like(u), u])
    W = np.diag(w)
    cov = np.linalg.inv(X.T @ W @ X)
    beta = cov @ X.T @ W @ y
    resid = y - X @ beta
    dof = len(u) - 2
    chi2 = float(resid @ W @ resid) / dof
    se = math.sqrt(cov[1, 1] * max(1.0, chi2))
    half = student_t.ppf(0.975, dof) * se
    Xq = np.column_stack([np.ones_like(u), u, u * u])
    covq = np.linalg.inv(Xq.T @ W @ Xq)
    bq = covq @ Xq.T @ W @ y
    rq = y - Xq @ bq
    chi2q = float(rq @ W @ rq) / max(len(u) - 3, 1)
    c1, c2 = bq[1], bq[2]
    t_c2 = abs(c2) / math.sqrt(covq[2, 2] * max(1.0, chi2q)) if covq[2, 2] > 0 else math.inf
    s_lo, s_mid, s_hi = (c1 + 2 * c2 * v for v in (u.min(), 0.5 * (u.min() + u.max()), u.max()))
    kappa = (s_hi - s_lo) / abs(s_mid) if s_mid != 0 else math.inf
    flag = abs(kappa) > CURVATURE_MAX and t_c2 > CURVATURE_T
    return TailFit(float(beta[1]), (float(beta[1] - half), float(beta[1] + half)),
                   float(beta[0]), float(kappa), bool(flag), int(len(u)), float(s_hi))


def excursion_warning(path: GridPath, eps: float) -> None:
    """Warn when fewer than 10 grid cells fall inside the eps-window."""
    hits = np.count_nonzero(np.max(np.abs(path.values), axis=-1) < eps)
    if hits < 10:
        warnings.warn(f"only {hits} grid nodes within eps={eps:g}; refine the grid")
