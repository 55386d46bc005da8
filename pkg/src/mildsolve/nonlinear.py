"""Nonlinearities ``F: V -> W`` with closed-form local Lipschitz moduli."""

from __future__ import annotations

import importlib
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import ConfigError, ContractError, NumericError
from .kernels import _matrix_opnorm
from .spaces import SpaceSpec, StateVector, norm_ratio

KINDS = ("linear", "polynomial_scalar", "quadratic_riccati", "cubic_reaction", "custom")
AUDIT_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class Nonlinearity:
    """``fn`` acts on arrays of shape ``(..., dim)``; ``psi_coeffs`` are the
    nonnegative coefficients of the polynomial ``Ψ(r) = sum_j c_j r^j``."""

    kind: str
    fn: Callable[[np.ndarray], np.ndarray]
    psi_coeffs: tuple[float, ...]
    V: SpaceSpec
    W: SpaceSpec

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ContractError(f"unknown nonlinearity kind {self.kind!r}")
        c = tuple(float(x) for x in self.psi_coeffs) or (0.0,)
        if any(not np.isfinite(x) or x < 0 for x in c):
            raise ContractError("psi_form coefficients must be finite and nonnegative")
        object.__setattr__(self, "psi_coeffs", c)

    def psi(self, r: float) -> float:
        return float(np.polynomial.polynomial.polyval(r, self.psi_coeffs))

    def __call__(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        with np.errstate(over="ignore", invalid="ignore"):
            out = np.asarray(self.fn(X), dtype=float)
        if out.shape != X.shape:
            raise ContractError(f"nonlinearity returned shape {out.shape} for input {X.shape}")
        if not np.all(np.isfinite(out)):
            idx = np.argwhere(~np.isfinite(out))[0]
            raise NumericError(f"F produced a non-finite value at component {int(idx[-1])}")
        return out


def _nemytskii_psi(scalar_lip: list[float], V: SpaceSpec, W: SpaceSpec) -> tuple[float, ...]:
    # |f(a)-f(b)| <= L(|a|+|b|) |a-b| componentwise, and lattice norms give
    # ||F(v)-F(w)||_W <= c_WV L(kappa (|v|+|w|)) ||v-w||_V
    kappa = V.sup_norm_ratio()
    c = norm_ratio(W, V)
    return tuple(c * a * kappa**j for j, a in enumerate(scalar_lip))


def polynomial_scalar(coeffs, V: SpaceSpec, W: SpaceSpec | None = None, kind: str = "polynomial_scalar") -> Nonlinearity:
    """Componentwise ``v -> sum_j coeffs[j] v^j``.

    Uses ``|a^j - b^j| <= (|a|+|b|)^(j-1) |a-b|``, so the scalar modulus is
    ``L(r) = sum_{j>=1} |c_j| r^(j-1)``.
    """
    W = W or V
    coeffs = [float(c) for c in coeffs]
    if not coeffs:
        raise ContractError("polynomial needs at least one coefficient")
    lip = [abs(c) for c in coeffs[1:]] or [0.0]
    poly = np.polynomial.polynomial.Polynomial(coeffs)
    return Nonlinearity(kind, poly, _nemytskii_psi(lip, V, W), V, W)


def quadratic_riccati(V: SpaceSpec, W: SpaceSpec | None = None) -> Nonlinearity:
    return polynomial_scalar([0.0, 0.0, 1.0], V, W, kind="quadratic_riccati")


def cubic_reaction(V: SpaceSpec, W: SpaceSpec | None = None) -> Nonlinearity:
    return polynomial_scalar([0.0, 1.0, 0.0, -1.0], V, W, kind="cubic_reaction")


def linear(A, V: SpaceSpec, W: SpaceSpec | None = None) -> Nonlinearity:
    W = W or V
    A = np.array(A, dtype=float)
    if A.shape != (V.dim, V.dim):
        raise ContractError(f"linear nonlinearity needs a {V.dim}x{V.dim} matrix")
    A.setflags(write=False)
    lip = _matrix_opnorm(A, V) * norm_ratio(W, V)
    return Nonlinearity("linear", lambda X: X @ A.T, (lip,), V, W)


def custom(fn, psi_coeffs, V: SpaceSpec, W: SpaceSpec | None = None) -> Nonlinearity:
    """User-supplied ``fn`` with a user-supplied ``Ψ``; audited, never trusted blindly."""
    return Nonlinearity("custom", fn, tuple(psi_coeffs), V, W or V)


def resolve_callable(ref: str) -> Callable:
    """Import ``"package.module:attr"``."""
    mod, _, attr = ref.partition(":")
    if not mod or not attr:
        raise ConfigError(f"custom function must look like 'module:attr', got {ref!r}", "nonlinearity.function")
    try:
        obj = getattr(importlib.import_module(mod), attr)
    except (ImportError, AttributeError) as exc:
        raise ConfigError(f"cannot import {ref!r}: {exc}", "nonlinearity.function") from exc
    if not callable(obj):
        raise ConfigError(f"{ref!r} is not callable", "nonlinearity.function")
    return obj


def identity(X):
    """Identity map, handy as a ``custom`` function reference in problem files."""
    return np.array(X, dtype=float)


def eval_F(f: Nonlinearity, v) -> StateVector:
    if isinstance(v, StateVector):
        if v.space != f.V:
            raise ContractError("vector does not belong to F's domain space")
        v = v.coords
    return StateVector(f(np.asarray(v, dtype=float)), f.W)


def lipschitz_modulus(f: Nonlinearity, r: float) -> float:
    """Closed-form upper bound for ``sup ||F(v)-F(w)|| / ||v-w||`` over ``||v||+||w|| <= r``."""
    if not r >= 0:
        raise ContractError(f"r must be nonnegative, got {r!r}")
    return f.psi(r)


@dataclass(frozen=True)
class AuditResult:
    r: float
    samples: int
    max_observed_ratio: float
    psi: float
    violated: bool


def _random_with_norm(rng, space: SpaceSpec, n: int, target: np.ndarray) -> np.ndarray:
    z = rng.standard_normal((n, space.dim))
    nz = space.norm(z)
    nz = np.where(nz > 0, nz, 1.0)
    return z * (target / nz)[:, None]


def audit_psi(f: Nonlinearity, r: float, samples: int = 1000, seed=0) -> AuditResult:
    """Randomised check that ``Ψ(r)`` dominates observed difference quotients.

    Half the pairs are spread over the ball, half are near-diagonal pairs that
    probe the local derivative.
    """
    if samples < 1:
        raise ContractError("samples must be positive")
    psi = lipschitz_modulus(f, r)
    if r == 0:
        return AuditResult(r, samples, 0.0, psi, False)
    rng = np.random.default_rng(seed)
    n_far = (samples + 1) // 2
    n_near = samples - n_far
    total = r * rng.uniform(0.0, 1.0, n_far)
    share = rng.uniform(0.0, 1.0, n_far)
    v = _random_with_norm(rng, f.V, n_far, total * share)
    w = _random_with_norm(rng, f.V, n_far, total * (1.0 - share))
    if n_near:
        base = _random_with_norm(rng, f.V, n_near, rng.uniform(0.0, 0.5 * r, n_near))
        eps = _random_with_norm(rng, f.V, n_near, 1e-4 * r * rng.uniform(0.1, 1.0, n_near))
        vn, wn = base, base + eps
        s = f.V.norm(vn) + f.V.norm(wn)
        shrink = np.minimum(1.0, r / np.where(s > 0, s, 1.0))
        v = np.vstack([v, vn * shrink[:, None]])
        w = np.vstack([w, wn * shrink[:, None]])
    dx = f.V.norm(v - w)
    keep = dx > 0
    ratios = f.W.norm(f(v[keep]) - f(w[keep])) / dx[keep]
    observed = float(ratios.max()) if ratios.size else 0.0
    return AuditResult(r, samples, observed, psi, bool(observed > psi * (1 + AUDIT_TOL) + 1e-300))
