"""Covariance assembly, log-domain determinants and determinant inequality checks.

Determinants are always carried as ``log det``.  A factorization whose pivot
(squared diagonal of the Cholesky factor) falls below ``PIVOT_FLOOR`` is
reported as a failure; no jitter is ever added.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.linalg import cho_solve

from .field import FieldSpec, ScalingMatrix, SLNDSpec, alpha_norm, matrix_power, schur_scale

PIVOT_FLOOR = 1e-300
# pivots below this fraction of their diagonal entry are cancellation noise
PIVOT_REL = 64 * np.finfo(float).eps


class DegenerateConfiguration(ArithmeticError):
    """The covariance of a point configuration is (numerically) singular."""


@dataclass(frozen=True)
class CovMatrix:
    entries: np.ndarray
    chol: Optional[np.ndarray]
    logdet: float

    @property
    def ok(self) -> bool:
        return self.chol is not None

    @property
    def size(self) -> int:
        return self.entries.shape[0]

    @property
    def det(self) -> float:
        return math.exp(self.logdet) if self.ok else float("nan")


def factor(entries: np.ndarray) -> CovMatrix:
    """Cholesky-factor a symmetric matrix, marking failure instead of raising."""
    A = np.asarray(entries, dtype=float)
    if A.size == 0:
        return CovMatrix(A, A.copy(), 0.0)
    try:
        L = np.linalg.cholesky(A)
    except np.linalg.LinAlgError:
        return CovMatrix(A, None, float("nan"))
    piv = np.diagonal(L) ** 2
    if not np.all(_pivots_ok(piv, np.diagonal(A))):
        return CovMatrix(A, None, float("nan"))
    return CovMatrix(A, L, float(np.sum(np.log(piv))))


def _pivots_ok(piv: np.ndarray, diag: np.ndarray) -> np.ndarray:
    return (piv > PIVOT_FLOOR) & (piv > PIVOT_REL * diag)


def _cholesky_loop(A: np.ndarray):
    """Column Cholesky vectorized over the batch axis; tracks per-item failure."""
    B, k, _ = A.shape
    L = np.zeros_like(A)
    ok = np.ones(B, dtype=bool)
    logdet = np.zeros(B)
    for j in range(k):
        piv = A[:, j, j] - np.einsum("bi,bi->b", L[:, j, :j], L[:, j, :j])
        bad = ~_pivots_ok(piv, A[:, j, j])
        ok &= ~bad
        piv = np.where(bad, 1.0, piv)
        root = np.sqrt(piv)
        L[:, j, j] = root
        logdet += np.log(piv)
        if j + 1 < k:
            rest = A[:, j + 1:, j] - np.einsum("bri,bi->br", L[:, j + 1:, :j], L[:, j, :j])
            L[:, j + 1:, j] = rest / root[:, None]
    return logdet, ok


def batched_logdet(A: np.ndarray):
    """``(logdet, ok)`` for a stack of symmetric matrices of shape (B, k, k)."""
    A = np.asarray(A, dtype=float)
    try:
        L = np.linalg.cholesky(A)
    except np.linalg.LinAlgError:
        return _cholesky_loop(A)
    piv = np.diagonal(L, axis1=-2, axis2=-1) ** 2
    ok = np.all(_pivots_ok(piv, np.diagonal(A, axis1=-2, axis2=-1)), axis=-1)
    with np.errstate(divide="ignore"):
        logdet = np.sum(np.log(np.where(ok[:, None], piv, 1.0)), axis=-1)
    return logdet, ok


def cross_cov(spec: FieldSpec, s: np.ndarray, t: np.ndarray) -> np.ndarray:
    """Flattened ``E[X_s X_t^T]`` for point stacks ``(..., n, N)`` and ``(..., m, N)``."""
    s = np.asarray(s, dtype=float)
    t = np.asarray(t, dtype=float)
    if s.shape[-1] != spec.N or t.shape[-1] != spec.N:
        raise ValueError(f"points must have {spec.N} coordinates")
    C = spec.model.cross_cov(s, t)
    n, d, m = C.shape[-4], C.shape[-3], C.shape[-2]
    return C.reshape(C.shape[:-4] + (n * d, m * d))


def cov_batch(spec: FieldSpec, points: np.ndarray) -> np.ndarray:
    """Joint covariance of ``X`` at each configuration in a ``(B, n, N)`` stack."""
    points = np.asarray(points, dtype=float)
    C = cross_cov(spec, points, points)
    return 0.5 * (C + np.swapaxes(C, -1, -2))


def cov_matrix(spec: FieldSpec, points) -> CovMatrix:
    """Covariance of the adjoined vector ``[X_{t_1}, ..., X_{t_n}]`` (point-major)."""
    P = np.atleast_2d(np.asarray(points, dtype=float))
    if P.shape[0] * spec.d > spec.limits.max_factor:
        raise ValueError(f"{P.shape[0]} points x d={spec.d} exceeds the factorization cap "
                         f"{spec.limits.max_factor}")
    C = cross_cov(spec, P, P)
    scale = max(1.0, float(np.abs(C).max()))
    if np.abs(C - C.T).max() > 1e-12 * scale:
        raise ValueError("model produced a non-symmetric covariance")
    return factor(0.5 * (C + C.T))


def increment_cov(spec: FieldSpec, points, base) -> np.ndarray:
    """Covariance of the increments ``X_{t_i} - X_base``."""
    P = np.atleast_2d(np.asarray(points, dtype=float))
    allp = np.vstack([P, np.atleast_2d(base)])
    C = cov_matrix(spec, allp).entries
    n, d = P.shape[0], spec.d
    T = np.hstack([np.eye(n * d), -np.tile(np.eye(d), (n, 1))])
    return T @ C @ T.T


def self_similarity_residual(spec: FieldSpec, omega: float, points,
                             H: Optional[ScalingMatrix] = None) -> float:
    """Max relative gap between ``Cov(X_{s∘ω^α}, X_{t∘ω^α})`` and ``ω^H Cov ω^{H^T}``.

    ``H`` defaults to the field's scaling matrix; passing another one tests
    whether it is the right value scaling for the model.
    """
    P = np.atleast_2d(np.asarray(points, dtype=float))
    Hm = spec.H if H is None else H
    W = matrix_power(omega, Hm)
    n = P.shape[0]
    lhs = cross_cov(spec, schur_scale(P, omega, spec.alpha), schur_scale(P, omega, spec.alpha))
    base = cross_cov(spec, P, P)
    Omega = np.kron(np.eye(n), W)
    rhs = Omega @ base @ Omega.T
    scale = np.abs(rhs).max()
    if scale == 0:
        return float(np.abs(lhs).max())
    return float(np.abs(lhs - rhs).max() / scale)


def conditional_detcov(spec: FieldSpec, u, conditioners) -> float:
    """``det Cov(X_u | X_{t_1}, ..., X_{t_n})`` via the Schur complement."""
    u = np.atleast_2d(np.asarray(u, dtype=float))
    S = np.asarray(conditioners, dtype=float).reshape(-1, spec.N)
    Cuu = cov_matrix(spec, u).entries
    if S.shape[0] == 0:
        return float(max(np.linalg.det(Cuu), 0.0))
    cm = cov_matrix(spec, S)
    if not cm.ok:
        raise DegenerateConfiguration("conditioning covariance is singular")
    Cus = cross_cov(spec, u, S)
    schur = Cuu - Cus @ cho_solve((cm.chol, True), Cus.T)
    schur = 0.5 * (schur + schur.T)
    return float(max(np.linalg.det(schur), 0.0))


@dataclass(frozen=True)
class ChainReport:
    logdet_joint: float
    logdet_chain: float
    rel_error: float
    degenerate: bool = False

    @property
    def passed(self) -> bool:
        return (not self.degenerate) and self.rel_error <= 1e-8


def detcov_chain_check(spec: FieldSpec, points) -> ChainReport:
    """Compare ``log detcov`` of the joint vector with the sum of log conditional detcovs."""
    P = np.atleast_2d(np.asarray(points, dtype=float))
    joint = cov_matrix(spec, P)
    if not joint.ok:
        return ChainReport(float("nan"), float("nan"), float("nan"), True)
    total = 0.0
    for k in range(P.shape[0]):
        try:
            v = conditional_detcov(spec, P[k], P[:k])
        except DegenerateConfiguration:
            return ChainReport(joint.logdet, float("nan"), float("nan"), True)
        if v <= 0:
            return ChainReport(joint.logdet, float("-inf"), float("inf"), True)
        total += math.log(v)
    err = abs(total - joint.logdet) / max(1.0, abs(joint.logdet))
    return ChainReport(joint.logdet, total, err)


def _logdet(C: np.ndarray) -> float:
    sign, val = np.linalg.slogdet(C)
    return float(val) if sign > 0 else float("-inf")


@dataclass(frozen=True)
class ReductionReport:
    """Log-margins ``log(rhs) - log(lhs)`` of the two detcov inequalities."""

    logdet_joint: float
    margin_reduction: float
    margin_product: float
    degenerate: bool = False

    @property
    def holds(self) -> bool:
        tol = -1e-9
        return self.margin_reduction >= tol and self.margin_product >= tol


def reduction_inequality_check(spec: FieldSpec, blocks: Sequence, pivot: int = 0) -> ReductionReport:
    """Check the reduction and product inequalities for jointly Gaussian blocks.

    ``blocks[i]`` is an array of points; ``Y_i`` is the field stacked over
    them.  All blocks must have the same number of points (the differences
    ``Y_i - Y_pivot`` need equal sizes).
    """
    blocks = [np.atleast_2d(np.asarray(b, dtype=float)) for b in blocks]
    sizes = {b.shape[0] for b in blocks}
    if len(sizes) != 1:
        raise ValueError("all blocks must contain the same number of points")
    if not 0 <= pivot < len(blocks):
        raise ValueError(f"pivot {pivot} out of range")
    P = np.vstack(blocks)
    C = cov_matrix(spec, P).entries
    k = blocks[0].shape[0] * spec.d
    n = len(blocks)
    lhs = _logdet(C)
    if not np.isfinite(lhs):
        return ReductionReport(lhs, float("inf"), float("inf"), True)
    diag_blocks = [C[i * k:(i + 1) * k, i * k:(i + 1) * k] for i in range(n)]
    prod = sum(_logdet(b) for b in diag_blocks)
    if n == 1:
        red = _logdet(diag_blocks[0])
    else:
        T = np.zeros(((n - 1) * k, n * k))
        row = 0
        for i in range(n):
            if i == pivot:
                continue
            T[row * k:(row + 1) * k, i * k:(i + 1) * k] = np.eye(k)
            T[row * k:(row + 1) * k, pivot * k:(pivot + 1) * k] = -np.eye(k)
            row += 1
        red = _logdet(diag_blocks[pivot]) + _logdet(T @ C @ T.T)
    return ReductionReport(lhs, red - lhs, prod - lhs)


@dataclass
class SLNDProbe:
    min_ratio: float
    argmin_u: Optional[np.ndarray]
    argmin_conditioners: Optional[np.ndarray]
    trials: int
    rejected: int
    ratios: np.ndarray = field(repr=False, default_factory=lambda: np.empty(0))


def slnd_probe(spec: FieldSpec, slnd: SLNDSpec, trials: int, n_max: int,
               rng_seed: int) -> SLNDProbe:
    """Empirical floor of ``detcov[X_u | X_t] / min_i ||u - t_i||^{2H}`` (t_0 = 0)."""
    if spec.d * (n_max + 1) > spec.limits.max_factor:
        raise ValueError("configuration exceeds the factorization cap")
    rng = np.random.default_rng(rng_seed)
    a = slnd.alpha.array
    best, best_u, best_t = math.inf, None, None
    rejected = 0
    ratios = []
    for _ in range(trials):
        n = int(rng.integers(1, n_max + 1))
        u = rng.random(spec.N)
        ts = rng.random((n, spec.N))
        anchors = np.vstack([np.zeros(spec.N), ts])
        dist = alpha_norm(u - anchors, a).min()
        if dist <= 0:
            rejected += 1
            continue
        try:
            v = conditional_detcov(spec, u, ts)
        except DegenerateConfiguration:
            rejected += 1
            continue
        r = v / dist ** (2.0 * slnd.H_slnd)
        ratios.append(r)
        if r < best:
            best, best_u, best_t = r, u, ts
    return SLNDProbe(best, best_u, best_t, trials, rejected, np.array(ratios))
