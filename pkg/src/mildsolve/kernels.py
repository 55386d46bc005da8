"""Kernel families ``S_t = t^(-a0) exp(tG)`` and their extensions ``𝒮_t = exp(tG)``.

Every built-in kind reduces to a generator ``G`` (zero, diagonal, or a dense
matrix) plus an optional declared singular exponent ``a0``:

===============  ==========================  ============================
kind             S_t                         𝒮_t
===============  ==========================  ============================
identity         I                           I
scalar_exp(l)    e^{l t} I                   e^{l t} I
diagonal_exp(L)  diag(e^{-L_k t})            diag(e^{-L_k t})
matrix_exp(A)    expm(t A)                   expm(t A)
singular_scaled  t^{-a0} (base S_t)          base 𝒮_t
===============  ==========================  ============================

Note the sign convention: ``scalar_exp`` takes the growth rate, ``diagonal_exp``
takes the (heat-semigroup) decay rates.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import scipy.linalg

from .errors import ContractError, DomainError, NumericError
from .spaces import SpaceSpec, StateVector, norm_ratio

KINDS = ("identity", "scalar_exp", "diagonal_exp", "matrix_exp", "singular_scaled")
DEFAULT_BOUNDED_ALPHA = 0.05


class HypothesisWarning(UserWarning):
    """A kernel regularity estimate looks unbounded under mesh refinement."""


@dataclass(frozen=True, eq=False)
class Kernel:
    kind: str
    T: float
    V: SpaceSpec
    W: SpaceSpec | None = None
    alpha: float | None = None
    rho: float = 0.5
    lam: float | None = None
    lams: tuple[float, ...] | None = None
    matrix: np.ndarray | None = None
    alpha0: float = 0.0
    base: "Kernel | None" = None
    # derived
    _diag: np.ndarray | None = field(init=False, repr=False, default=None)
    _gen: np.ndarray | None = field(init=False, repr=False, default=None)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ContractError(f"unknown kernel kind {self.kind!r}")
        if not (np.isfinite(self.T) and self.T > 0):
            raise ContractError(f"kernel horizon T must be positive, got {self.T!r}")
        if self.W is None:
            object.__setattr__(self, "W", self.V)
        if self.W.dim != self.V.dim:
            raise ContractError("V and W must have the same dimension")
        d = self.V.dim
        diag = gen = None
        if self.kind == "identity":
            diag = np.zeros(d)
        elif self.kind == "scalar_exp":
            if self.lam is None or not np.isfinite(self.lam):
                raise ContractError("scalar_exp needs a finite lam")
            diag = np.full(d, float(self.lam))
        elif self.kind == "diagonal_exp":
            if self.lams is None or len(self.lams) != d:
                raise ContractError(f"diagonal_exp needs {d} rates")
            diag = -np.asarray(self.lams, dtype=float)
            object.__setattr__(self, "lams", tuple(float(x) for x in self.lams))
        elif self.kind == "matrix_exp":
            A = np.asarray(self.matrix, dtype=float)
            if A.shape != (d, d) or not np.all(np.isfinite(A)):
                raise ContractError(f"matrix_exp needs a finite {d}x{d} matrix")
            A.setflags(write=False)
            object.__setattr__(self, "matrix", A)
            gen = A
        else:
            if not 0 < self.alpha0 < 1:
                raise ContractError(f"singular_scaled needs alpha0 in (0,1), got {self.alpha0!r}")
            if self.base is None or self.base.kind == "singular_scaled":
                raise ContractError("singular_scaled needs a non-singular base kernel")
            diag, gen = self.base._diag, self.base._gen
        if self.kind != "singular_scaled" and self.alpha0 != 0.0:
            raise ContractError("alpha0 is only meaningful for singular_scaled kernels")
        object.__setattr__(self, "_diag", diag)
        object.__setattr__(self, "_gen", gen)
        if self.alpha is None:
            object.__setattr__(self, "alpha", self.alpha0 if self.alpha0 > 0 else DEFAULT_BOUNDED_ALPHA)
        if not 0 < self.alpha < 1:
            raise ContractError(f"alpha must lie in (0,1), got {self.alpha!r}")
        if not 0 < self.rho < 1:
            raise ContractError(f"rho must lie in (0,1), got {self.rho!r}")

    # -- construction helpers -------------------------------------------------

    @classmethod
    def identity(cls, V, T, **kw):
        return cls("identity", T, V, **kw)

    @classmethod
    def scalar_exp(cls, lam, V, T, **kw):
        return cls("scalar_exp", T, V, lam=lam, **kw)

    @classmethod
    def diagonal_exp(cls, lams, V, T, **kw):
        return cls("diagonal_exp", T, V, lams=tuple(lams), **kw)

    @classmethod
    def matrix_exp(cls, A, V, T, **kw):
        return cls("matrix_exp", T, V, matrix=np.asarray(A, dtype=float), **kw)

    @classmethod
    def singular_scaled(cls, alpha0, base: "Kernel", **kw):
        kw.setdefault("alpha", base.alpha if base.alpha >= alpha0 else None)
        kw.setdefault("rho", base.rho)
        return cls("singular_scaled", base.T, base.V, W=base.W, alpha0=alpha0, base=base, **kw)

    # -- structural facts -------------------------------------------------------

    @property
    def dim(self) -> int:
        return self.V.dim

    @property
    def is_diagonal(self) -> bool:
        return self._gen is None

    @property
    def has_splitting(self) -> bool:
        """Whether ``S_{a+b} = 𝒮_a S_b`` holds (false for a pure power-law factor)."""
        return self.alpha0 == 0.0

    @property
    def _wv_ratio(self) -> float:
        return norm_ratio(self.V, self.W)

    # -- vectorised internals ---------------------------------------------------

    def _exp_matrices(self, u: np.ndarray) -> np.ndarray:
        """``exp(u_q G)`` for a dense generator, shape ``(Q, d, d)``."""
        uniq, inv = np.unique(np.asarray(u, dtype=float).reshape(-1), return_inverse=True)
        eig = _eigen_factors(self._gen_key)
        if eig is not None:
            w, P, Pinv = eig
            E = np.einsum("ak,qk,kb->qab", P, np.exp(uniq[:, None] * w[None, :]), Pinv)
            E = E.real
        elif uniq.size <= _EXPM_LOOP_MAX:
            E = np.stack([_expm_cached(self._gen_key, float(x)) for x in uniq])
        else:
            E = scipy.linalg.expm(uniq[:, None, None] * self._gen[None, :, :])
        return E[inv.reshape(-1)]

    @property
    def _gen_key(self):
        return (self._gen.shape[0], self._gen.tobytes())

    def semigroup_factors(self, u) -> np.ndarray:
        """``exp(u G)`` at times ``u``: shape ``(Q, d)`` if diagonal else ``(Q, d, d)``."""
        u = np.asarray(u, dtype=float).reshape(-1)
        with np.errstate(over="ignore"):
            out = np.exp(u[:, None] * self._diag[None, :]) if self.is_diagonal else self._exp_matrices(u)
        if not np.all(np.isfinite(out)):
            raise NumericError("kernel evaluation overflowed")
        return out

    def act(self, u, Y) -> np.ndarray:
        """Row-wise ``exp(u_q G) Y_q`` (no singular factor)."""
        E = self.semigroup_factors(u)
        Y = np.asarray(Y, dtype=float).reshape(E.shape[0], self.dim)
        if self.is_diagonal:
            return E * Y
        return np.einsum("qab,qb->qa", E, Y)

    def _opnorm_exp(self, u) -> np.ndarray:
        """``||exp(u G)||`` as an operator on V (vector over u)."""
        E = self.semigroup_factors(u)
        if self.is_diagonal:
            return np.abs(E).max(axis=1)
        return np.array([_matrix_opnorm(M, self.V) for M in E])

    def opnorm(self, t) -> np.ndarray:
        """``||S_t||_{L(W,V)}`` (exact for diagonal kinds, sound bound when V != W)."""
        t = np.asarray(t, dtype=float).reshape(-1)
        return t ** (-self.alpha0) * self._opnorm_exp(t) * self._wv_ratio


# eigenvector condition number up to which exp(uG) = P e^{uΛ} P^-1 keeps ~1e-12 accuracy
_EIG_COND_MAX = 1e3
_EXPM_LOOP_MAX = 256


@lru_cache(maxsize=64)
def _eigen_factors(key):
    d, raw = key
    A = np.frombuffer(raw, dtype=float).reshape(d, d)
    w, P = np.linalg.eig(A)
    cond = np.linalg.cond(P)
    if not np.isfinite(cond) or cond > _EIG_COND_MAX:
        return None
    return w, P, np.linalg.inv(P)


@lru_cache(maxsize=65536)
def _expm_cached(key, u: float) -> np.ndarray:
    d, raw = key
    A = np.frombuffer(raw, dtype=float).reshape(d, d)
    return scipy.linalg.expm(u * A)


def _matrix_opnorm(M: np.ndarray, space: SpaceSpec) -> float:
    """Induced operator norm of M on ``space`` (Riesz-Thorin bound for general p)."""
    p = space.exponent
    if space.norm_kind == "weighted_p":
        w = np.asarray(space.weights) ** (1.0 / p)
        M = (w[:, None] * M) / w[None, :]
    if np.isinf(p):
        return float(np.abs(M).sum(axis=1).max())
    if p == 1:
        return float(np.abs(M).sum(axis=0).max())
    if p == 2:
        return float(np.linalg.norm(M, 2))
    n1 = np.abs(M).sum(axis=0).max()
    ninf = np.abs(M).sum(axis=1).max()
    return float(n1 ** (1.0 / p) * ninf ** (1.0 - 1.0 / p))


def _as_coords(v, space: SpaceSpec) -> np.ndarray:
    if isinstance(v, StateVector):
        if v.space != space:
            raise ContractError("vector does not belong to the kernel's space")
        return np.asarray(v.coords)
    c = np.asarray(v, dtype=float).reshape(-1)
    if c.size != space.dim:
        raise ContractError(f"vector of length {c.size} does not match dim {space.dim}")
    return c


def apply_kernel(k: Kernel, t: float, w) -> StateVector:
    """``S_t w`` for ``t`` in ``(0, T)``."""
    if not 0 < t < k.T:
        raise DomainError(f"S_t is defined for t in (0, {k.T}), got {t}")
    c = _as_coords(w, k.W)
    out = t ** (-k.alpha0) * k.act([t], c[None, :])[0]
    if not np.all(np.isfinite(out)):
        raise NumericError("S_t w is not finite")
    return StateVector(out, k.V)


def apply_extended(k: Kernel, t: float, v) -> StateVector:
    """``𝒮_t v`` for ``t`` in ``[0, T]``; ``𝒮_0`` is the identity."""
    if not 0 <= t <= k.T:
        raise DomainError(f"𝒮_t is defined for t in [0, {k.T}], got {t}")
    c = _as_coords(v, k.V)
    if t == 0:
        return StateVector(c, k.V)
    return StateVector(k.act([t], c[None, :])[0], k.V)


def _sup_power_exp(beta: float, rate: float, T: float) -> float:
    """``sup_{t in (0,T)} t^beta e^{rate t}`` for ``beta >= 0``."""
    if beta == 0:
        return max(1.0, math.exp(rate * T))
    if rate >= 0:
        return T**beta * math.exp(rate * T)
    t_star = beta / (-rate)
    if t_star >= T:
        return T**beta * math.exp(rate * T)
    return t_star**beta * math.exp(-beta)


def _mesh(T: float, mesh: int) -> np.ndarray:
    """Geometric points ``T 2^-j`` plus a dyadic uniform mesh; nested as ``mesh`` grows."""
    geo = T * 2.0 ** -np.arange(mesh + 1)
    m = 1 << max(1, math.ceil(math.log2(mesh)))
    uni = T * np.arange(1, m + 1) / m
    return np.union1d(geo, uni)


def singularity_bound(k: Kernel, mesh: int = 64) -> float:
    """``M_alpha = sup_{t in (0,T)} t^alpha ||S_t||``; ``inf`` when ``alpha < alpha0``.

    Exact for diagonal generators, a geometric-plus-uniform mesh maximum otherwise.
    """
    if mesh < 2:
        raise ContractError("mesh must be at least 2")
    beta = k.alpha - k.alpha0
    if beta < 0:
        return math.inf
    if k.is_diagonal:
        return max(_sup_power_exp(beta, r, k.T) for r in k._diag) * k._wv_ratio
    t = _mesh(k.T, mesh)
    vals = t**beta * k._opnorm_exp(t) * k._wv_ratio
    if beta == 0:
        # t^0 ||exp(tG)|| -> 1 as t -> 0
        vals = np.append(vals, k._wv_ratio)
    return float(vals.max())


def _holder_on_mesh(k: Kernel, pts: np.ndarray) -> float:
    s, u = np.meshgrid(pts, pts, indexing="ij")
    mask = u > s
    s, u = s[mask], u[mask]
    if k.is_diagonal:
        Ss = s[:, None] ** (-k.alpha0) * np.exp(s[:, None] * k._diag[None, :])
        Su = u[:, None] ** (-k.alpha0) * np.exp(u[:, None] * k._diag[None, :])
        diff = np.abs(Su - Ss).max(axis=1)
    else:
        E = {x: _expm_cached(k._gen_key, float(x)) for x in pts}
        diff = np.array(
            [_matrix_opnorm(b ** (-k.alpha0) * E[b] - a ** (-k.alpha0) * E[a], k.V) for a, b in zip(s, u)]
        )
    ratios = s**k.alpha * diff * k._wv_ratio / (u - s) ** k.rho
    return float(ratios.max()) if ratios.size else 0.0


def holder_modulus(k: Kernel, mesh: int = 32, divergence_factor: float = 2.0) -> float:
    """Estimate ``sup_{0<s<u<T} s^alpha ||S_u - S_s|| / (u-s)^rho`` on a mesh of pairs.

    Issues a :class:`HypothesisWarning` when doubling the mesh grows the estimate
    by more than ``divergence_factor``.
    """
    if mesh < 2:
        raise ContractError("mesh must be at least 2")
    pts = _mesh(k.T, mesh)
    pts = pts[pts < k.T]
    coarse = _holder_on_mesh(k, pts)
    fine_pts = _mesh(k.T, 2 * mesh)
    fine = _holder_on_mesh(k, fine_pts[fine_pts < k.T])
    if coarse > 0 and fine / coarse > divergence_factor or (coarse == 0 and fine > 0):
        warnings.warn(
            f"Hölder modulus estimate grows from {coarse:.3g} to {fine:.3g} under refinement; "
            f"the kernel may not be rho={k.rho}-Hölder with weight s^alpha",
            HypothesisWarning,
            stacklevel=2,
        )
    return max(coarse, fine)
