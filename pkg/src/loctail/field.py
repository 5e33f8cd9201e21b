"""Field specifications, the alpha-metric and diagonal self-similarity scaling."""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional, Sequence

import numpy as np

from .models import CovModel, ExplicitKernel, ModelError, model_from_json, warn_unvalidated

SCHEMA_FIELDSPEC = "loctail.fieldspec/1"


class SpecificationError(ValueError):
    """Invalid or inconsistent field specification."""


class NonIntegrableError(SpecificationError):
    """``K_n^beta`` cannot be integrable: ``sum(alpha) > beta * tr(H)`` fails."""


@dataclass(frozen=True)
class Limits:
    """Desk-scale caps; artifact limits, not mathematical ones."""

    max_N: int = 4
    max_d: int = 4
    max_factor: int = 4096


DEFAULT_LIMITS = Limits()

_ALPHA_RANGE = (1e-3, 1e3)
_RATIONAL_DENOMINATOR = 10 ** 6
_RATIONAL_RTOL = 1e-12


@dataclass(frozen=True)
class ScalingVector:
    alpha: tuple

    def __post_init__(self):
        a = tuple(float(x) for x in np.atleast_1d(self.alpha))
        object.__setattr__(self, "alpha", a)
        if not a:
            raise SpecificationError("alpha must be non-empty")
        lo, hi = _ALPHA_RANGE
        for x in a:
            if not x > 0:
                raise SpecificationError(f"alpha entries must be > 0, got {a}")
            if not lo <= x <= hi:
                raise SpecificationError(f"alpha entries must lie in [{lo}, {hi}], got {a}")

    def __len__(self):
        return len(self.alpha)

    @property
    def array(self) -> np.ndarray:
        return np.array(self.alpha)

    @property
    def total(self) -> float:
        return float(sum(self.alpha))

    @property
    def mutually_rational(self) -> bool:
        """All ratios ``alpha_i / alpha_j`` are p/q with q <= 1e6 (rel. 1e-12)."""
        a0 = self.alpha[0]
        for x in self.alpha[1:]:
            r = x / a0
            frac = Fraction(r).limit_denominator(_RATIONAL_DENOMINATOR)
            if abs(float(frac) - r) > _RATIONAL_RTOL * abs(r):
                return False
        return True

    def normalized(self) -> "ScalingVector":
        """Rescale so that every entry is >= 1 (a metric on R^N)."""
        m = min(self.alpha)
        if m >= 1.0:
            return self
        return ScalingVector(tuple(x / m for x in self.alpha))


@dataclass(frozen=True)
class ScalingMatrix:
    H: tuple

    def __post_init__(self):
        arr = np.atleast_2d(np.asarray(self.H, dtype=float))
        if arr.ndim != 2 or arr.shape[0] != arr.shape[1]:
            raise SpecificationError(f"H must be square, got shape {arr.shape}")
        object.__setattr__(self, "H", tuple(tuple(float(v) for v in row) for row in arr))
        if not np.trace(arr) > 0:
            raise SpecificationError(f"tr(H) must be positive, got {np.trace(arr)}")

    @property
    def matrix(self) -> np.ndarray:
        return np.array(self.H)

    @property
    def trace(self) -> float:
        return float(np.trace(self.matrix))

    @property
    def d(self) -> int:
        return len(self.H)


def _as_alpha(alpha) -> np.ndarray:
    if isinstance(alpha, ScalingVector):
        return alpha.array
    return np.asarray(alpha, dtype=float)


def alpha_norm(t, alpha) -> float | np.ndarray:
    """``sum_i |t_i|^{1/alpha_i}``; broadcasts over leading axes of ``t``."""
    a = _as_alpha(alpha)
    t = np.asarray(t, dtype=float)
    if t.shape[-1] != a.shape[0]:
        raise SpecificationError(f"point has {t.shape[-1]} coordinates, alpha has {a.shape[0]}")
    out = np.sum(np.abs(t) ** (1.0 / a), axis=-1)
    return float(out) if out.ndim == 0 else out


def schur_scale(t, omega: float, alpha) -> np.ndarray:
    """Entrywise ``t_i * omega^{alpha_i}``."""
    if not omega > 0:
        raise SpecificationError(f"omega must be positive, got {omega}")
    a = _as_alpha(alpha)
    t = np.asarray(t, dtype=float)
    if t.shape[-1] != a.shape[0]:
        raise SpecificationError(f"point has {t.shape[-1]} coordinates, alpha has {a.shape[0]}")
    return t * omega ** a


def _expm_series(A: np.ndarray) -> np.ndarray:
    norm = np.linalg.norm(A, 1)
    s = max(0, int(math.ceil(math.log2(norm / 0.5)))) if norm > 0.5 else 0
    B = A / 2.0 ** s
    term = np.eye(A.shape[0])
    total = term.copy()
    for k in range(1, 40):
        term = term @ B / k
        total = total + term
        if np.max(np.abs(term)) <= 1e-18 * np.max(np.abs(total)):
            break
    for _ in range(s):
        total = total @ total
    return total


def matrix_power(omega: float, H) -> np.ndarray:
    """``omega^H = exp(ln(omega) H)``."""
    if not omega > 0:
        raise SpecificationError(f"omega must be positive, got {omega}")
    M = H.matrix if isinstance(H, ScalingMatrix) else np.atleast_2d(np.asarray(H, dtype=float))
    L = math.log(omega)
    if np.allclose(M, M.T, rtol=0, atol=1e-14 * max(1.0, np.abs(M).max())):
        w, V = np.linalg.eigh(0.5 * (M + M.T))
        return (V * np.exp(L * w)) @ V.T
    return _expm_series(L * M)


@dataclass(frozen=True)
class FieldSpec:
    """A centered Gaussian (N, d)-field together with its scaling data.

    ``c0`` bounds the component variances on the unit cube.  Specs whose
    model declares self-similarity data are checked against ``alpha`` and
    ``H``; a common positive rescaling ``(alpha / p, H / p)`` is accepted.
    """

    N: int
    d: int
    alpha: ScalingVector
    H: ScalingMatrix
    model: CovModel
    c0: float = 1.0
    name: str = ""
    limits: Limits = field(default=DEFAULT_LIMITS, compare=False, repr=False)

    def __post_init__(self):
        if not isinstance(self.alpha, ScalingVector):
            object.__setattr__(self, "alpha", ScalingVector(self.alpha))
        if not isinstance(self.H, ScalingMatrix):
            object.__setattr__(self, "H", ScalingMatrix(self.H))
        if self.N < 1 or self.d < 1:
            raise SpecificationError("N and d must be positive")
        if self.N > self.limits.max_N or self.d > self.limits.max_d:
            raise SpecificationError(
                f"(N, d) = ({self.N}, {self.d}) exceeds the configured caps "
                f"({self.limits.max_N}, {self.limits.max_d})")
        if len(self.alpha) != self.N:
            raise SpecificationError(f"alpha has {len(self.alpha)} entries, N = {self.N}")
        if self.H.d != self.d:
            raise SpecificationError(f"H is {self.H.d}x{self.H.d}, d = {self.d}")
        if not self.c0 > 0:
            raise SpecificationError("c0 must be positive")
        if self.model.N is not None and self.model.N != self.N:
            raise SpecificationError(f"model is indexed by R^{self.model.N}, spec says N = {self.N}")
        if self.model.d != self.d:
            raise SpecificationError(f"model has d = {self.model.d}, spec says d = {self.d}")
        self._check_scaling()

    def _check_scaling(self):
        try:
            data = self.model.scaling(self.N)
        except ModelError as exc:
            raise SpecificationError(str(exc)) from exc
        if data is None:
            warn_unvalidated(self.model)
            return
        m_alpha, m_H = np.asarray(data[0], dtype=float), np.asarray(data[1], dtype=float)
        p = m_alpha[0] / self.alpha.alpha[0]
        ok = (np.allclose(self.alpha.array * p, m_alpha, rtol=1e-10, atol=0)
              and np.allclose(self.H.matrix * p, m_H, rtol=1e-10, atol=1e-14))
        if not ok:
            raise SpecificationError(
                f"declared scaling (alpha={self.alpha.alpha}, H={self.H.H}) does not match "
                f"the model's (alpha={tuple(m_alpha)}, H={m_H.tolist()})")

    @classmethod
    def from_model(cls, model: CovModel, N: Optional[int] = None, c0: float = 1.0,
                   name: str = "", limits: Limits = DEFAULT_LIMITS) -> "FieldSpec":
        N = model.N if N is None else N
        if N is None:
            raise SpecificationError("N must be given for models without intrinsic dimension")
        data = model.scaling(N)
        if data is None:
            raise SpecificationError("model has no scaling data; build FieldSpec explicitly")
        return cls(N=N, d=model.d, alpha=ScalingVector(data[0]), H=ScalingMatrix(data[1]),
                   model=model, c0=c0, name=name, limits=limits)

    @property
    def lam(self) -> float:
        return lambda_exponent(self)

    def integrable(self, beta: float = 1.0) -> bool:
        return self.alpha.total > beta * self.H.trace

    def require_integrable(self, beta: float = 1.0) -> None:
        if not self.integrable(beta):
            raise NonIntegrableError(
                f"K_n^beta cannot be integrable over the unit cube: need sum(alpha) > "
                f"beta * tr(H), got {self.alpha.total:g} <= {beta:g} * {self.H.trace:g}")

    def to_json(self) -> dict:
        return {
            "schema": SCHEMA_FIELDSPEC,
            "name": self.name,
            "N": self.N,
            "d": self.d,
            "alpha": list(self.alpha.alpha),
            "H": [list(r) for r in self.H.H],
            "c0": self.c0,
            "model": self.model.to_json(),
        }

    @classmethod
    def from_json(cls, doc: dict, limits: Limits = DEFAULT_LIMITS) -> "FieldSpec":
        schema = doc.get("schema", SCHEMA_FIELDSPEC)
        if schema != SCHEMA_FIELDSPEC:
            raise SpecificationError(f"unsupported schema {schema!r}")
        try:
            model = model_from_json(doc["model"])
            return cls(N=int(doc["N"]), d=int(doc["d"]), alpha=ScalingVector(doc["alpha"]),
                       H=ScalingMatrix(doc["H"]), model=model, c0=float(doc.get("c0", 1.0)),
                       name=str(doc.get("name", "")), limits=limits)
        except (KeyError, TypeError, ModelError) as exc:
            raise SpecificationError(f"malformed field spec: {exc}") from exc

    def fingerprint(self) -> str:
        if isinstance(self.model, ExplicitKernel):
            payload = f"explicit:{self.model.func!r}:{self.N}:{self.d}"
        else:
            payload = json.dumps(self.to_json(), sort_keys=True)
        return hashlib.sha256(payload.encode()).hexdigest()[:16]


def lambda_exponent(spec: FieldSpec) -> float:
    """``tr(H) / sum(alpha)``."""
    return spec.H.trace / spec.alpha.total


@dataclass(frozen=True)
class SLNDSpec:
    """Strong local nondeterminism data: scaling vector xi, exponent and constant.

    The bound reads ``detcov[X_u | X_t1..X_tn] >= C min_i ||u - t_i||^{2 H}``
    in the metric with exponents ``H * xi``.
    """

    xi: tuple
    H_slnd: float
    C_slnd: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "xi", tuple(float(x) for x in self.xi))
        if any(x <= 0 for x in self.xi):
            raise SpecificationError("xi entries must be positive")
        if self.H_slnd <= 0 or self.C_slnd <= 0:
            raise SpecificationError("H_slnd and C_slnd must be positive")

    @property
    def alpha(self) -> ScalingVector:
        return ScalingVector(tuple(self.H_slnd * x for x in self.xi))

    @property
    def xi_sum(self) -> float:
        return float(sum(self.xi))

    @classmethod
    def for_field(cls, spec: FieldSpec, C: float = 1.0) -> "SLNDSpec":
        trH = spec.H.trace
        return cls(tuple(a / trH for a in spec.alpha.alpha), trH, C)


def variance_sandwich(spec: FieldSpec, n_probe: int = 2000, seed: int = 0,
                      decades: float = 4.0):
    """Fit ``c1 <= detcov(X_t) / ||t||_alpha^{2 tr H} <= c2`` on log-spaced probes.

    Probes are ``sigma ∘ r^alpha`` with ``sigma`` uniform on the positive unit
    alpha-sphere and ``r`` log-uniform over ``decades`` decades below 1.
    Returns ``(c1, c2)``.
    """
    from .covariance import cov_matrix  # local: covariance imports this module

    rng = np.random.default_rng(seed)
    a = spec.alpha.array
    trH = spec.H.trace
    ratios = []
    for _ in range(n_probe):
        w = rng.dirichlet(np.ones(spec.N))
        sign = rng.choice([-1.0, 1.0], size=spec.N)
        sigma = sign * w ** a  # ||sigma||_alpha = 1
        r = 10.0 ** rng.uniform(-decades, 0.0)
        t = schur_scale(sigma, r, a)
        cm = cov_matrix(spec, t[None, :])
        if not cm.ok:
            continue
        ratios.append(math.exp(cm.logdet) / alpha_norm(t, a) ** (2.0 * trH))
    ratios = np.array(ratios)
    return float(ratios.min()), float(ratios.max())
