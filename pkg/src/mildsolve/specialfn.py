"""Gamma, the generalised exponential series and the perturbation bound built from it.

The generalised exponential is

    E_r[x] = sum_{n>=0} (x Gamma(r))^n / Gamma(n r + 1),

which for ``r = 1`` collapses to ``exp(x)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import ContractError, ConvergenceError, DomainError, NumericError


def gamma(x: float) -> float:
    """Euler Gamma on ``(0, inf)`` (libm ``tgamma``, relative error ~1e-15)."""
    if not x > 0:
        raise DomainError(f"gamma is only defined here for x > 0, got {x!r}")
    try:
        return math.gamma(x)
    except OverflowError as exc:
        raise NumericError(f"gamma({x}) overflows double precision") from exc


@dataclass(frozen=True)
class MLParams:
    r: float
    x: float
    series_tol: float = 1e-14
    max_terms: int = 10_000

    def __post_init__(self):
        if not 0 < self.r <= 1:
            raise ContractError(f"r must lie in (0, 1], got {self.r!r}")
        if not (self.x >= 0 and math.isfinite(self.x)):
            raise ContractError(f"x must be finite and nonnegative, got {self.x!r}")
        if not self.series_tol > 0:
            raise ContractError("series_tol must be positive")
        if self.max_terms < 1:
            raise ContractError("max_terms must be positive")


def ml_gronwall(r: float, x: float, series_tol: float = 1e-14, max_terms: int = 10_000) -> float:
    """Partial sum of ``E_r[x]``, stopped once a term past the peak falls below
    ``series_tol`` relative to the running sum.

    Term ratios ``Gamma(nr+1)/Gamma((n+1)r+1)`` go through ``lgamma`` so large
    ``n`` never overflows.
    """
    p = MLParams(r, x, series_tol, max_terms)
    if p.x == 0:
        return 1.0
    log_z = math.log(p.x) + math.lgamma(p.r)
    total = 1.0
    prev = 1.0
    for n in range(1, p.max_terms):
        log_term = n * log_z - math.lgamma(n * p.r + 1.0)
        if log_term > 709.0:
            raise NumericError(f"E_{p.r}[{p.x}] overflows double precision")
        term = math.exp(log_term)
        total += term
        if term <= prev and term <= p.series_tol * total:
            return total
        prev = term
    raise ConvergenceError(
        f"E_{p.r}[{p.x}] did not converge in {p.max_terms} terms", partial_sum=total, last_term=prev
    )


def perturbation_bound(alpha: float, T: float, M_alpha: float, psi_at_sum: float, defect_sup: float) -> float:
    """``E_{1-alpha}[T^(1-alpha) M_alpha psi_at_sum] * defect_sup``.

    Bounds ``sup_t ||x1_t - x2_t||`` for two paths whose combined defect
    ``sup_t ||x1 - conv F(x1) + conv F(x2) - x2||`` is ``defect_sup``.
    """
    if not 0 < alpha < 1:
        raise ContractError(f"alpha must lie in (0,1), got {alpha!r}")
    for name, val in (("T", T), ("M_alpha", M_alpha), ("psi_at_sum", psi_at_sum), ("defect_sup", defect_sup)):
        if not (val >= 0 and math.isfinite(val)):
            raise ContractError(f"{name} must be finite and nonnegative, got {val!r}")
    if T <= 0:
        raise ContractError("T must be positive")
    if defect_sup == 0:
        return 0.0
    return ml_gronwall(1.0 - alpha, T ** (1.0 - alpha) * M_alpha * psi_at_sum) * defect_sup
