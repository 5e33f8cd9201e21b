"""Covariance models for centered Gaussian (N, d)-fields.

Every model exposes ``cross_cov(s, t)`` which, for point arrays ``s`` of shape
``(..., n, N)`` and ``t`` of shape ``(..., m, N)``, returns the cross covariance
``E[X_s X_t^T]`` as an array of shape ``(..., n, d, m, d)``.  Flattening the last
four axes point-major gives the covariance of the adjoined vector
``[X_{s_1}, ..., X_{s_n}]``.

Scalar models with stationary increments and ``X_0 = 0`` are described by their
increment variance ``phi(u) = E[(X_{s+u} - X_s)^2]``; the covariance is then
``(phi(s) + phi(t) - phi(s - t)) / 2``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np


class ModelError(ValueError):
    """Raised for inconsistent model parameters."""


class CovModel:
    """Base class.  Subclasses are frozen dataclasses."""

    #: intrinsic parameter dimension, ``None`` when any N is accepted
    N: Optional[int] = None
    #: value dimension
    d: int = 1
    #: True when X_0 = 0 almost surely
    zero_at_origin: bool = True

    def cross_cov(self, s: np.ndarray, t: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def scaling(self, N: int):
        """Return ``(alpha, H)`` of the diagonal self-similarity, or ``None``."""
        return None

    def to_json(self) -> dict:
        raise NotImplementedError


class ScalarStationaryModel(CovModel):
    """Scalar field with stationary increments, vanishing at the origin."""

    def phi(self, u: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def cross_cov(self, s, t):
        s = np.asarray(s, dtype=float)
        t = np.asarray(t, dtype=float)
        ps = self.phi(s)[..., :, None]
        pt = self.phi(t)[..., None, :]
        diff = s[..., :, None, :] - t[..., None, :, :]
        c = 0.5 * (ps + pt - self.phi(diff))
        return c[..., :, None, :, None]


@dataclass(frozen=True)
class MultiFBM(ScalarStationaryModel):
    """Multi-parameter (Levy) fractional Brownian motion, ``phi(u) = |u|^{2h}``.

    ``|.|`` is the Euclidean norm on R^N.  Self-similar with ``alpha = (1,...,1)``
    and ``H = [[h]]``.
    """

    hurst: float

    def __post_init__(self):
        if not 0.0 < self.hurst <= 1.0:
            raise ModelError(f"hurst must lie in (0, 1], got {self.hurst}")

    def phi(self, u):
        u = np.asarray(u, dtype=float)
        r2 = np.einsum("...i,...i->...", u, u)
        return r2 ** self.hurst

    def scaling(self, N):
        return (1.0,) * N, np.array([[self.hurst]])

    def to_json(self):
        return {"type": "multi_fbm", "hurst": self.hurst}


@dataclass(frozen=True)
class AnisotropicFBM(ScalarStationaryModel):
    """``phi(u) = (sum_i c_i |u_i|^{p_i})^{2h}`` with ``p_i`` in (0, 2].

    Self-similar with ``alpha_i = 1 / p_i`` and ``H = [[h]]``.
    """

    c: tuple
    p: tuple
    hurst: float

    def __post_init__(self):
        object.__setattr__(self, "c", tuple(float(x) for x in self.c))
        object.__setattr__(self, "p", tuple(float(x) for x in self.p))
        if len(self.c) != len(self.p) or not self.c:
            raise ModelError("c and p must be non-empty and of equal length")
        if any(x <= 0 for x in self.c):
            raise ModelError(f"c entries must be positive, got {self.c}")
        if any(not 0.0 < x <= 2.0 for x in self.p):
            raise ModelError(f"p entries must lie in (0, 2], got {self.p}")
        if not 0.0 < self.hurst <= 1.0:
            raise ModelError(f"hurst must lie in (0, 1], got {self.hurst}")
        if not self.guaranteed_valid:
            warnings.warn(f"anisotropic fBm with hurst={self.hurst} and p={self.p} is not a "
                          "guaranteed variogram; factorizations may fail", stacklevel=3)

    @property
    def guaranteed_valid(self) -> bool:
        """Sufficient condition for a valid variogram (Bernstein composition)."""
        if self.hurst <= 0.5:
            return True
        return len(self.p) == 1 and self.hurst * self.p[0] <= 1.0

    @property
    def N(self):
        return len(self.c)

    def phi(self, u):
        u = np.abs(np.asarray(u, dtype=float))
        base = np.zeros(u.shape[:-1])
        for i, (ci, pi) in enumerate(zip(self.c, self.p)):
            base = base + ci * u[..., i] ** pi
        return base ** (2.0 * self.hurst)

    def scaling(self, N):
        return tuple(1.0 / x for x in self.p), np.array([[self.hurst]])

    def to_json(self):
        return {"type": "anisotropic_fbm", "c": list(self.c), "p": list(self.p),
                "hurst": self.hurst}


@dataclass(frozen=True)
class IndependentComponents(CovModel):
    """Vector field made of independent scalar components.

    The components must share their time-scaling vector; the value scaling is
    ``H = diag(H_1, ..., H_d)``.
    """

    components: tuple

    def __post_init__(self):
        comps = tuple(self.components)
        object.__setattr__(self, "components", comps)
        if not comps:
            raise ModelError("at least one component is required")
        for c in comps:
            if c.d != 1:
                raise ModelError("components must be scalar models")
        Ns = {c.N for c in comps if c.N is not None}
        if len(Ns) > 1:
            raise ModelError(f"components disagree on N: {sorted(Ns)}")

    @property
    def N(self):
        for c in self.components:
            if c.N is not None:
                return c.N
        return None

    @property
    def d(self):
        return len(self.components)

    @property
    def zero_at_origin(self):
        return all(c.zero_at_origin for c in self.components)

    def cross_cov(self, s, t):
        s = np.asarray(s, dtype=float)
        t = np.asarray(t, dtype=float)
        d = self.d
        out = np.zeros(s.shape[:-1] + (d,) + t.shape[-2:-1] + (d,))
        for a, comp in enumerate(self.components):
            out[..., :, a, :, a] = comp.cross_cov(s, t)[..., :, 0, :, 0]
        return out

    def scaling(self, N):
        data = [c.scaling(N) for c in self.components]
        if any(x is None for x in data):
            return None
        alphas = [np.asarray(a) for a, _ in data]
        for a in alphas[1:]:
            if not np.allclose(a, alphas[0], rtol=1e-12):
                raise ModelError("components have different alpha vectors")
        H = np.diag([float(h[0, 0]) for _, h in data])
        return tuple(alphas[0]), H

    def to_json(self):
        return {"type": "independent",
                "components": [c.to_json() for c in self.components]}


@dataclass(frozen=True)
class ExplicitKernel(CovModel):
    """User-supplied covariance ``func(s, t) -> (d, d)`` for single points.

    With ``vectorized=True`` the callable must accept batched arrays and
    return the ``(..., n, d, m, d)`` block directly.  Self-similarity data is
    not declared, so specs built on this model skip that validation.
    """

    func: Callable
    n_params: int
    n_values: int = 1
    vectorized: bool = False
    origin_zero: bool = True

    @property
    def N(self):
        return self.n_params

    @property
    def d(self):
        return self.n_values

    @property
    def zero_at_origin(self):
        return self.origin_zero

    def cross_cov(self, s, t):
        s = np.asarray(s, dtype=float)
        t = np.asarray(t, dtype=float)
        if self.vectorized:
            return np.asarray(self.func(s, t), dtype=float)
        batch = np.broadcast_shapes(s.shape[:-2], t.shape[:-2])
        s = np.broadcast_to(s, batch + s.shape[-2:])
        t = np.broadcast_to(t, batch + t.shape[-2:])
        n, m, d = s.shape[-2], t.shape[-2], self.d
        out = np.empty(batch + (n, d, m, d))
        for idx in np.ndindex(*batch):
            for i in range(n):
                for j in range(m):
                    block = np.asarray(self.func(s[idx + (i,)], t[idx + (j,)]), dtype=float)
                    out[idx + (i, slice(None), j, slice(None))] = block.reshape(d, d)
        return out

    def to_json(self):
        raise ModelError("explicit kernels cannot be serialized")


@dataclass(frozen=True)
class DifferenceField(CovModel):
    """Adjoined differences ``(X_1(t_1) - X_2(t_2), ..., X_{m-1} - X_m)``.

    ``components[k]`` is the model of the k-th independent field, indexed by
    ``R^{dims[k]}``.  A point of the difference field is the concatenation
    ``(t_1, ..., t_m)``; the value dimension is ``(m - 1) d``.
    """

    components: tuple
    dims: tuple

    def __post_init__(self):
        object.__setattr__(self, "components", tuple(self.components))
        object.__setattr__(self, "dims", tuple(int(x) for x in self.dims))
        if len(self.components) < 2:
            raise ModelError("need at least two fields")
        if len(self.components) != len(self.dims):
            raise ModelError("components and dims differ in length")
        ds = {c.d for c in self.components}
        if len(ds) != 1:
            raise ModelError(f"fields must share the value dimension, got {sorted(ds)}")
        for c, n in zip(self.components, self.dims):
            if c.N is not None and c.N != n:
                raise ModelError(f"component declares N={c.N} but dims says {n}")

    @property
    def N(self):
        return sum(self.dims)

    @property
    def d(self):
        return (len(self.components) - 1) * self.components[0].d

    def _split(self, x):
        out, start = [], 0
        for n in self.dims:
            out.append(x[..., start:start + n])
            start += n
        return out

    def cross_cov(self, s, t):
        s = np.asarray(s, dtype=float)
        t = np.asarray(t, dtype=float)
        ss, ts = self._split(s), self._split(t)
        blocks = [c.cross_cov(a, b) for c, a, b in zip(self.components, ss, ts)]
        m = len(self.components)
        d0 = self.components[0].d
        shape = blocks[0].shape
        out = np.zeros(shape[:-4] + (shape[-4], m - 1, d0, shape[-2], m - 1, d0))
        for a in range(m - 1):
            out[..., :, a, :, :, a, :] += blocks[a] + blocks[a + 1]
            if a + 1 < m - 1:
                out[..., :, a, :, :, a + 1, :] -= blocks[a + 1]
                out[..., :, a + 1, :, :, a, :] -= blocks[a + 1]
        n, mm = shape[-4], shape[-2]
        return out.reshape(shape[:-4] + (n, (m - 1) * d0, mm, (m - 1) * d0))

    def scaling(self, N):
        data = [c.scaling(n) for c, n in zip(self.components, self.dims)]
        if any(x is None for x in data):
            return None
        H0 = data[0][1]
        for _, H in data[1:]:
            if H.shape != H0.shape or not np.allclose(H, H0, rtol=1e-12, atol=0):
                raise ModelError("intersection requires a common scaling matrix H")
        alpha = tuple(float(a) for al, _ in data for a in al)
        m = len(self.components)
        k = H0.shape[0]
        H = np.zeros(((m - 1) * k, (m - 1) * k))
        for j in range(m - 1):
            H[j * k:(j + 1) * k, j * k:(j + 1) * k] = H0
        return alpha, H

    def to_json(self):
        return {"type": "difference",
                "components": [c.to_json() for c in self.components],
                "dims": list(self.dims)}


def model_from_json(doc: dict) -> CovModel:
    kind = doc.get("type")
    if kind == "multi_fbm":
        return MultiFBM(float(doc["hurst"]))
    if kind == "anisotropic_fbm":
        return AnisotropicFBM(tuple(doc["c"]), tuple(doc["p"]), float(doc["hurst"]))
    if kind == "independent":
        return IndependentComponents(tuple(model_from_json(c) for c in doc["components"]))
    if kind == "difference":
        return DifferenceField(tuple(model_from_json(c) for c in doc["components"]),
                               tuple(doc["dims"]))
    raise ModelError(f"unknown model type {kind!r}")


def warn_unvalidated(model: CovModel) -> None:
    warnings.warn(f"{type(model).__name__} declares no self-similarity data; "
                  "scaling validation skipped", stacklevel=3)
