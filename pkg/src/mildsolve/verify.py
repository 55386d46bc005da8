"""Checkable certificates over computed trajectories: uniqueness, perturbation, continuity."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .continuation import SolveReport, SolverConfig
from .errors import ContractError
from .kernels import Kernel
from .nonlinear import Nonlinearity
from .picard import WindowCertificate, solve_local
from .spaces import Trajectory, sup_distance
from .specialfn import perturbation_bound
from .volterra import ConvolutionOperator, QuadratureSpec, convolution_path, refine


@dataclass(frozen=True)
class UniquenessCheck:
    t_start: float
    distance: float
    tol: float
    passed: bool

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class PerturbationCertificate:
    lhs: float
    defect_sup: float
    bound: float
    slack: float
    margin: float
    passed: bool
    t_start: float = 0.0

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class ResidualCheck:
    """The accepted window's own residual must fit inside the quadrature slack."""

    t_start: float
    residual: float
    slack: float
    passed: bool

    def to_dict(self) -> dict:
        return asdict(self)


def check_uniqueness(
    k: Kernel,
    f: Nonlinearity,
    o_local: Trajectory,
    cert: WindowCertificate,
    grid_n: int = 64,
    tol: float = 1e-10,
    q: QuadratureSpec | None = None,
    **solver_kw,
) -> UniquenessCheck:
    """Solve from ``o_local`` and from ``0``; both must land on the same fixed point."""
    a = solve_local(k, f, o_local, cert, grid_n, tol, q=q, **solver_kw)
    b = solve_local(k, f, o_local, cert, grid_n, tol, q=q, x0=np.zeros(k.dim), **solver_kw)
    dist = sup_distance(a.trajectory, b.trajectory)
    return UniquenessCheck(cert.t_start, dist, tol, bool(dist <= 10 * tol))


def _paired(x1: Trajectory, x2: Trajectory):
    if x1.space != x2.space:
        raise ContractError("trajectories live in different spaces")
    if x1.grid.shape != x2.grid.shape or not np.allclose(x1.grid, x2.grid, rtol=0, atol=1e-14 * max(1.0, x1.t1)):
        raise ContractError("trajectories must share their grid")


def check_perturbation(
    x1: Trajectory,
    x2: Trajectory,
    k: Kernel,
    f: Nonlinearity,
    alpha: float,
    M_alpha: float,
    q: QuadratureSpec | None = None,
    slack: float = 0.0,
    t_start: float = 0.0,
) -> PerturbationCertificate:
    """Compare ``sup ||x1 - x2||`` with the generalised-Gronwall bound driven by the
    combined defect ``x1 - conv F(x1) + conv F(x2) - x2``.  Both paths start at ``t = 0``."""
    _paired(x1, x2)
    if slack < 0:
        raise ContractError("slack must be nonnegative")
    nrm = k.V.norm
    c1 = _conv_on_grid(k, x1.grid, f(x1.values), q)
    c2 = _conv_on_grid(k, x2.grid, f(x2.values), q)
    defect_sup = float(np.max(nrm(x1.values - c1 + c2 - x2.values)))
    lhs = sup_distance(x1, x2)
    psi = f.psi(float(np.max(nrm(x1.values) + nrm(x2.values))))
    T = x1.t1 - x1.t0
    bound = perturbation_bound(alpha, T, M_alpha, psi, defect_sup) if T > 0 else defect_sup
    margin = bound + slack - lhs
    return PerturbationCertificate(lhs, defect_sup, bound, slack, margin, bool(margin >= 0), t_start)


_DENSE_LIMIT = 1024


def _conv_on_grid(k: Kernel, grid: np.ndarray, Y: np.ndarray, q) -> np.ndarray:
    """``t_i -> ∫_0^{t_i} S_{t_i-s} y_s ds``; small grids go through the dense operator."""
    if grid.size <= _DENSE_LIMIT:
        return ConvolutionOperator(k, grid, q)(Y)
    return convolution_path(k, Trajectory(grid, Y, k.W), q=q).values


def refinement_continuity_check(
    k: Kernel, y: Trajectory, levels: int = 4, continuity_tol: float = 0.1, growth: float = 1.5
) -> tuple[np.ndarray, bool]:
    """Largest jump between adjacent nodes of ``t -> ∫_0^t S_{t-s} y_s ds`` on
    dyadically refined copies of ``y.grid``.

    Passes when no level's modulus exceeds ``growth`` times the previous one and
    the finest modulus is at most ``continuity_tol``.
    """
    if levels < 2:
        raise ContractError("levels must be at least 2")
    moduli = []
    for j in range(levels):
        grid = refine(y.grid, 2**j)
        path = convolution_path(k, Trajectory(grid, y(grid), y.space), q=None)
        moduli.append(float(np.max(k.V.norm(np.diff(path.values, axis=0)))) if grid.size > 1 else 0.0)
    m = np.array(moduli)
    ok = bool(np.all(m[1:] <= growth * m[:-1] + 1e-300) and m[-1] <= continuity_tol)
    return m, ok


def quadrature_error_estimate(k: Kernel, f: Nonlinearity, x: Trajectory, q: QuadratureSpec | None = None) -> float:
    """Richardson estimate of the convolution error on ``x.grid``.

    Halving the mesh cuts a second-order error by four, so the fine-grid error is
    about a third of the coarse/fine gap at shared nodes.
    """
    # an odd node count keeps both meshes uniform
    m = len(x) if len(x) % 2 else len(x) - 1
    if m < 3:
        return 0.0
    FX = f(x.values[:m])
    fine = _conv_on_grid(k, x.grid[:m], FX, q)[::2]
    coarse = _conv_on_grid(k, x.grid[:m:2], FX[::2], q)
    return float(np.max(k.V.norm(fine - coarse))) / 3.0


def verify_report(
    report: SolveReport,
    k: Kernel,
    f: Nonlinearity,
    config: SolverConfig | None = None,
    q: QuadratureSpec | None = None,
) -> bool:
    """Attach uniqueness, perturbation and residual certificates for every window.

    The perturbation pair is the accepted window against a tightly converged
    solve started from zero.  Returns whether every certificate passed.
    """
    cfg = config or SolverConfig()
    kw = dict(tol_ball=cfg.tol_ball, contraction_slack=cfg.contraction_slack, max_iter=cfg.max_iter)
    tight = min(cfg.tol, 1e-12)
    uniq, pert, resid = [], [], []
    for w in report.windows:
        scale = max(1.0, w.trajectory.sup_norm())
        if cfg.slack is not None:
            slack = cfg.slack
        else:
            slack = max(2.0 * quadrature_error_estimate(k, f, w.trajectory, q), 10 * cfg.tol * scale)
        uniq.append(check_uniqueness(k, f, w.forcing, w.certificate, cfg.grid_n, cfg.tol, q, **kw))
        ref = solve_local(k, f, w.forcing, w.certificate, cfg.grid_n, tight, q=q, x0=np.zeros(k.dim), **kw)
        local_alpha = w.certificate.alpha
        pert.append(
            check_perturbation(
                w.trajectory, ref.trajectory, k, f, local_alpha, w.certificate.M_alpha, q, slack, w.t_start
            )
        )
        resid.append(ResidualCheck(w.t_start, w.defect, slack, bool(w.defect <= slack)))
    report.uniqueness_checks = uniq
    report.perturbation_certificates = pert
    report.residual_checks = resid
    return report.certificates_passed
