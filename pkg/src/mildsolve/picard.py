"""Certified local existence windows and the Picard fixed-point solve on them.

On a window of length ``tau`` the map ``Φ(x)_t = ∫_0^t S_{t-s} F(x_s) ds + o_t``
satisfies, on the ball ``sup ||x|| <= R + 1``,

    ||Φ(x) - Φ(y)|| <= tau^(1-a)/(1-a) M_a Ψ(2R+2) ||x - y||
    ||Φ(x)||        <= R + tau^(1-a)/(1-a) M_a (Ψ(2R+2)(R+1) + ||F(0)||)

so choosing ``tau`` to make the first factor at most ``contraction_target`` and
the second at most ``R + 1`` certifies a unique fixed point in the ball.
"""

from __future__ import annotations

import math
import sys
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import (
    BallViolationError,
    CertificateViolationError,
    ContractError,
    NonContractionError,
    NumericError,
    UnsoundConfigurationError,
)
from .kernels import Kernel
from .nonlinear import Nonlinearity
from .spaces import Trajectory
from .volterra import ConvolutionOperator, QuadratureSpec

_NOISE = 1e3 * np.finfo(float).eps


@dataclass(frozen=True)
class WindowCertificate:
    t_start: float
    tau: float
    R: float
    M_alpha: float
    alpha: float
    psi_2R2: float
    F0_norm: float
    contraction_target: float = 0.5

    @property
    def _growth(self) -> float:
        return self.tau ** (1 - self.alpha) / (1 - self.alpha) * self.M_alpha

    @property
    def contraction_factor_bound(self) -> float:
        return self._growth * self.psi_2R2

    @property
    def ball_invariance_bound(self) -> float:
        """Must stay ``<= 1`` for ``Φ`` to map the ball into itself."""
        return self._growth * (self.psi_2R2 * (self.R + 1) + self.F0_norm)

    def is_valid(self, rel: float = 1e-9) -> bool:
        return (
            self.contraction_factor_bound <= self.contraction_target * (1 + rel)
            and self.ball_invariance_bound <= 1 + rel
        )

    def to_dict(self) -> dict:
        return {
            "t_start": self.t_start,
            "tau": self.tau,
            "R": self.R,
            "M_alpha": self.M_alpha,
            "alpha": self.alpha,
            "psi_2R2": self.psi_2R2,
            "F0_norm": self.F0_norm,
            "contraction_target": self.contraction_target,
            "contraction_factor_bound": self.contraction_factor_bound,
            "ball_invariance_bound": self.ball_invariance_bound,
        }


def certified_window(
    R: float,
    alpha: float,
    M_alpha: float,
    psi_2R2: float,
    F0_norm: float,
    remaining: float,
    contraction_target: float = 0.5,
) -> float:
    """Largest ``tau <= remaining`` meeting both the contraction and the ball-invariance bound."""
    if M_alpha == math.inf:
        raise UnsoundConfigurationError("singularity bound M_alpha is infinite; no window can be certified")
    if not 0 < alpha < 1:
        raise ContractError(f"alpha must lie in (0,1), got {alpha!r}")
    if min(R, M_alpha, psi_2R2, F0_norm) < 0 or not remaining > 0:
        raise ContractError("window inputs must be nonnegative and remaining > 0")
    if not 0 < contraction_target < 1:
        raise ContractError("contraction_target must lie in (0,1)")
    expo = 1.0 / (1.0 - alpha)
    # log space: the power overflows or underflows for alpha near 1
    log_tau = math.log(remaining)
    denom_b = M_alpha * psi_2R2
    if denom_b > 0:
        log_tau = min(log_tau, expo * (math.log((1 - alpha) * contraction_target) - math.log(denom_b)))
    denom_a = M_alpha * (psi_2R2 * (R + 1) + F0_norm)
    if denom_a > 0:
        log_tau = min(log_tau, expo * (math.log(1 - alpha) - math.log(denom_a)))
    if log_tau == math.log(remaining):
        return remaining
    tau = math.exp(log_tau)
    if tau < sys.float_info.min:
        raise NumericError(f"certified window underflows (log tau = {log_tau:.4g})")
    return tau


def certify_window(
    forcing: Callable[[np.ndarray], np.ndarray],
    norm: Callable[[np.ndarray], np.ndarray],
    f: Nonlinearity,
    alpha: float,
    M_alpha: float,
    F0_norm: float,
    remaining: float,
    t_start: float = 0.0,
    contraction_target: float = 0.5,
    probe: int = 256,
    extra_nodes: np.ndarray | None = None,
    max_window: float | None = None,
    bisections: int = 8,
) -> WindowCertificate:
    """Certificate for the longest window we can find whose own forcing sup ``R`` certifies it.

    ``R`` grows with ``tau`` while the admissible window shrinks with ``R``;
    a window is accepted once ``tau <= certified_window(R(tau))``.
    """
    extra = np.asarray(extra_nodes if extra_nodes is not None else [], dtype=float)

    def R_of(tau: float) -> float:
        pts = np.union1d(np.linspace(0.0, tau, probe), extra[(extra >= 0) & (extra <= tau)])
        return float(np.max(norm(forcing(pts))))

    def admissible(tau: float) -> tuple[float, float]:
        R = R_of(tau)
        return certified_window(R, alpha, M_alpha, f.psi(2 * R + 2), F0_norm, remaining, contraction_target), R

    hi = remaining if max_window is None else min(remaining, max_window)
    cand, _ = admissible(hi)
    if cand >= hi:
        lo = hi
    else:
        lo = cand
        for _ in range(bisections):
            mid = math.sqrt(lo * hi)
            if admissible(mid)[0] >= mid:
                lo = mid
            else:
                hi = mid
            if hi / lo < 1.01:
                break
    R = R_of(lo)
    return WindowCertificate(t_start, lo, R, M_alpha, alpha, f.psi(2 * R + 2), F0_norm, contraction_target)


@dataclass
class LocalSolveResult:
    trajectory: Trajectory
    iterations: int
    final_update_norm: float
    defect: float
    certificate: WindowCertificate
    contraction_ratios: list[float] = field(default_factory=list)
    max_iterate_norm: float = 0.0

    @property
    def max_contraction_ratio(self) -> float:
        return max(self.contraction_ratios, default=0.0)


def picard_map(
    x: Trajectory, k: Kernel, f: Nonlinearity, o_local: Trajectory, q: QuadratureSpec | None = None,
    op: ConvolutionOperator | None = None,
) -> Trajectory:
    """``Φ(x)`` sampled on the grid of ``x``."""
    if op is None:
        op = ConvolutionOperator(k, x.grid, q)
    return Trajectory(x.grid, op(f(x.values)) + o_local(x.grid), k.V)


def solve_local(
    k: Kernel,
    f: Nonlinearity,
    o_local: Trajectory,
    cert: WindowCertificate,
    grid_n: int = 64,
    tol: float = 1e-10,
    max_iter: int = 200,
    q: QuadratureSpec | None = None,
    x0=None,
    tol_ball: float = 1e-6,
    contraction_slack: float = 0.1,
    op: ConvolutionOperator | None = None,
) -> LocalSolveResult:
    """Iterate ``x <- Φ(x)`` from ``x0`` (default ``o_local``) on a uniform ``grid_n`` grid.

    Stops when ``sup ||x_{n+1} - x_n|| <= tol * max(1, sup ||x_{n+1}||)``.
    """
    if not tol > 0:
        raise ContractError("tol must be positive")
    if grid_n < 2:
        raise ContractError("grid_n must be at least 2")
    grid = np.linspace(0.0, cert.tau, grid_n)
    if op is None or op.grid.size != grid_n or op.grid[-1] != cert.tau:
        op = ConvolutionOperator(k, grid, q)
    O = o_local(grid)
    nrm = k.V.norm
    radius = (cert.R + 1.0) * (1.0 + tol_ball)
    if x0 is None:
        X = O.copy()
    elif isinstance(x0, Trajectory):
        X = x0(grid)
    else:
        X = np.broadcast_to(np.asarray(x0, dtype=float), O.shape).copy()
    max_norm = float(np.max(nrm(X)))
    if max_norm > radius:
        raise BallViolationError(f"initial iterate has norm {max_norm:.6g} > R + 1 = {cert.R + 1:.6g}")
    ratios: list[float] = []
    prev = None
    for it in range(1, max_iter + 1):
        Xn = op(f(X)) + O
        sup_n = float(np.max(nrm(Xn)))
        max_norm = max(max_norm, sup_n)
        if sup_n > radius:
            raise BallViolationError(
                f"iterate {it} has norm {sup_n:.6g} > (R + 1)(1 + tol_ball) = {radius:.6g}"
            )
        upd = float(np.max(nrm(Xn - X)))
        scale = max(1.0, sup_n)
        if prev is not None and prev > _NOISE * scale:
            ratios.append(upd / prev)
        X = Xn
        prev = upd
        if upd <= tol * scale:
            break
    else:
        raise NonContractionError(
            f"Picard iteration did not reach tol={tol:g} in {max_iter} iterations (last update {prev:.3g})"
        )
    bound = cert.contraction_factor_bound + contraction_slack
    worst = max(ratios, default=0.0)
    if worst > bound:
        raise CertificateViolationError(
            f"measured contraction ratio {worst:.4g} exceeds certified {cert.contraction_factor_bound:.4g} "
            f"+ slack {contraction_slack:g}"
        )
    residual = float(np.max(nrm(X - op(f(X)) - O)))
    return LocalSolveResult(
        trajectory=Trajectory(grid, X, k.V),
        iterations=it,
        final_update_norm=prev,
        defect=residual,
        certificate=cert,
        contraction_ratios=ratios,
        max_iterate_norm=max_norm,
    )
