"""Maximal-interval solves: chain certified windows, glue them, classify the stop.

Restarting at time ``tau`` uses the forcing ``𝒮_t(x_tau - o_tau) + o_{tau+t}``,
which equals the exact memory term ``∫_0^tau S_{tau+t-s} F(x_s) ds + o_{tau+t}``
whenever ``S_{a+b} = 𝒮_a S_b``.  Kernels with a power-law factor do not split
that way, so for them the memory term itself is integrated over the glued
history.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ContractError, GluingError, MildSolveError, SolveAborted, UnsoundConfigurationError
from .kernels import Kernel, apply_extended, singularity_bound
from .nonlinear import Nonlinearity
from .picard import LocalSolveResult, WindowCertificate, certify_window, solve_local
from .spaces import StateVector, Trajectory
from .volterra import ConvolutionOperator, QuadratureSpec, defect, history_integral

REACHED_T = "ReachedT"
BLOW_UP = "BlowUp"
STALLED = "Stalled"

_STOP_TEXT = {
    "tau_min": "certified window fell below tau_min",
    "max_windows": "window budget max_windows exhausted",
}


@dataclass
class SolverConfig:
    grid_n: int = 64
    tol: float = 1e-10
    max_iter: int = 200
    contraction_target: float = 0.5
    blowup_threshold: float = 1e8
    tau_min: float | None = None  # default 1e-10 * T
    glue_tol: float = 1e-8
    slack: float | None = None  # perturbation-certificate slack; None = 2x quadrature error estimate
    contraction_slack: float = 0.1
    tol_ball: float = 1e-6
    growth_windows: int = 5
    max_window: float | None = None
    max_windows: int = 2000
    defect_budget: float = 1e-4
    defect_max_nodes: int = 8192
    probe_factor: int = 4
    singularity_mesh: int = 64

    def __post_init__(self):
        checks = {
            "grid_n": self.grid_n >= 2,
            "tol": self.tol > 0,
            "max_iter": self.max_iter >= 1,
            "contraction_target": 0 < self.contraction_target < 1,
            "blowup_threshold": self.blowup_threshold > 0,
            "tau_min": self.tau_min is None or self.tau_min > 0,
            "glue_tol": self.glue_tol > 0,
            "slack": self.slack is None or self.slack >= 0,
            "contraction_slack": self.contraction_slack >= 0,
            "tol_ball": self.tol_ball >= 0,
            "growth_windows": self.growth_windows >= 2,
            "max_window": self.max_window is None or self.max_window > 0,
            "max_windows": self.max_windows >= 1,
            "defect_budget": self.defect_budget >= 0,
            "probe_factor": self.probe_factor >= 1,
            "singularity_mesh": self.singularity_mesh >= 2,
        }
        for name in ("grid_n", "max_iter", "growth_windows", "max_windows", "defect_max_nodes", "probe_factor",
                     "singularity_mesh"):
            if isinstance(getattr(self, name), bool) or not isinstance(getattr(self, name), int):
                raise ContractError(f"{name} must be an integer")
        bad = [k for k, ok in checks.items() if not ok]
        if bad:
            raise ContractError(f"invalid solver settings: {', '.join(bad)}")


@dataclass
class WindowRecord:
    certificate: WindowCertificate
    iterations: int
    final_update_norm: float
    defect: float
    contraction_ratios: list[float]
    max_iterate_norm: float
    junction_jump: float
    forcing: Trajectory = field(repr=False)
    trajectory: Trajectory = field(repr=False)

    @property
    def t_start(self) -> float:
        return self.certificate.t_start

    @property
    def t_stop(self) -> float:
        return self.certificate.t_start + self.certificate.tau

    def to_dict(self) -> dict:
        d = self.certificate.to_dict()
        d.update(
            iterations=self.iterations,
            final_update_norm=self.final_update_norm,
            defect=self.defect,
            max_contraction_ratio=max(self.contraction_ratios, default=0.0),
            contraction_ratios=list(self.contraction_ratios),
            max_iterate_norm=self.max_iterate_norm,
            junction_jump=self.junction_jump,
        )
        return d


@dataclass
class Outcome:
    kind: str
    rationale: str
    t_estimate: float | None = None
    norm_at_stop: float | None = None
    min_window_hit: float | None = None


@dataclass
class SolveReport:
    problem_id: str
    T: float
    alpha: float
    M_alpha: float
    windows: list[WindowRecord]
    global_trajectory: Trajectory | None
    t_end: float
    stop_reason: str
    outcome: Outcome | None = None
    last_tau: float | None = None
    blowup_criterion_trace: list[tuple[float, float]] = field(default_factory=list)
    perturbation_certificates: list | None = None
    uniqueness_checks: list | None = None
    residual_checks: list | None = None
    global_defect: float | None = None
    warnings: list[str] = field(default_factory=list)
    flags: list[str] = field(default_factory=list)
    config: dict = field(default_factory=dict)

    @property
    def certificates_passed(self) -> bool:
        groups = (self.perturbation_certificates, self.uniqueness_checks, self.residual_checks)
        return all(c.passed for g in groups if g for c in g)


def shifted_forcing(k: Kernel, x_tau, o: Trajectory, tau: float, horizon: float, grid=None) -> Trajectory:
    """``t -> 𝒮_t(x_tau - o(tau)) + o(tau + t)`` on ``[0, horizon]``."""
    if tau + horizon > k.T * (1 + 1e-12) or tau < 0 or horizon < 0:
        raise ContractError("restart window must lie inside [0, T]")
    x_tau = x_tau.coords if isinstance(x_tau, StateVector) else np.asarray(x_tau, dtype=float)
    if grid is None:
        inner = o.grid[(o.grid > tau) & (o.grid < tau + horizon)] - tau
        grid = np.union1d(np.linspace(0.0, horizon, 65), inner) if horizon > 0 else np.array([0.0])
    grid = np.asarray(grid, dtype=float)
    vals = _splitting_forcing(k, x_tau, o, tau)(grid)
    return Trajectory(grid, vals, k.V)


def _splitting_forcing(k: Kernel, x_tau: np.ndarray, o: Trajectory, tau: float):
    gap = np.asarray(x_tau, dtype=float) - o(tau)

    def forcing(t):
        t = np.asarray(t, dtype=float).reshape(-1)
        prop = np.empty((t.size, k.dim))
        zero = t == 0
        prop[zero] = gap
        if np.any(~zero):
            prop[~zero] = k.act(t[~zero], np.broadcast_to(gap, (int((~zero).sum()), k.dim)))
        return prop + o(np.minimum(tau + t, o.t1))

    return forcing


def _memory_forcing(k: Kernel, f: Nonlinearity, nodes: np.ndarray, X: np.ndarray, o: Trajectory, q: QuadratureSpec):
    FX = f(X)
    tau = float(nodes[-1])

    def forcing(t):
        t = np.asarray(t, dtype=float).reshape(-1)
        return history_integral(k, nodes, FX, tau + t, q) + o(np.minimum(tau + t, o.t1))

    return forcing


def glue(x: Trajectory, y: Trajectory, tau: float | None = None, glue_tol: float = 1e-8) -> Trajectory:
    """Concatenate ``x`` on ``[0, tau]`` with ``y`` on ``[0, eps]`` shifted by ``tau``.

    ``glue_tol`` is relative to ``max(1, ||x(tau)||)``.
    """
    if x.space != y.space:
        raise ContractError("cannot glue trajectories from different spaces")
    tau = x.t1 if tau is None else tau
    if abs(tau - x.t1) > 1e-12 * max(1.0, abs(tau)):
        raise ContractError("glue point must be the end of the first trajectory")
    jump = _junction_jump(x.values[-1], y.values[0], x.space.norm)
    if jump > glue_tol:
        raise GluingError(f"junction mismatch {jump:.3g} exceeds glue_tol {glue_tol:g}")
    grid = np.concatenate([x.grid, y.grid[1:] + tau])
    vals = np.vstack([x.values, y.values[1:]])
    return Trajectory(grid, vals, x.space)


def _junction_jump(a: np.ndarray, b: np.ndarray, norm) -> float:
    return float(norm(a - b)) / max(1.0, float(norm(a)))


def solve_maximal(
    k: Kernel,
    f: Nonlinearity,
    o: Trajectory,
    config: SolverConfig | None = None,
    q: QuadratureSpec | None = None,
    problem_id: str = "problem",
    M_alpha: float | None = None,
) -> SolveReport:
    """Chain certified windows from 0 until T, a blow-up signal, or a stall."""
    cfg = config or SolverConfig()
    q = q or QuadratureSpec()
    T = k.T
    if o.space != k.V:
        raise ContractError("forcing must lie in the kernel's V space")
    if abs(o.t0) > 1e-14 or o.t1 < T * (1 - 1e-12):
        raise ContractError(f"forcing must cover [0, {T}]")
    if M_alpha is None:
        M_alpha = singularity_bound(k, cfg.singularity_mesh)
    if not math.isfinite(M_alpha):
        raise UnsoundConfigurationError(
            f"sup t^alpha ||S_t|| is infinite for alpha={k.alpha} (kernel singularity {k.alpha0})"
        )
    tau_min = cfg.tau_min if cfg.tau_min is not None else 1e-10 * T
    nrm = k.V.norm
    F0 = float(f.W.norm(f(np.zeros(k.dim))))
    probe = cfg.probe_factor * cfg.grid_n

    report = SolveReport(
        problem_id=problem_id, T=T, alpha=k.alpha, M_alpha=M_alpha, windows=[],
        global_trajectory=None, t_end=0.0, stop_reason="running", config=asdict(cfg),
    )
    grids: list[np.ndarray] = [np.array([0.0])]
    vals: list[np.ndarray] = [o(0.0).reshape(1, -1)]
    t_start = 0.0
    op_cache: dict = {}

    try:
        while True:
            remaining = T - t_start
            if remaining <= 1e-13 * T:
                report.stop_reason = "reached_T"
                break
            if len(report.windows) >= cfg.max_windows:
                report.stop_reason = "max_windows"
                break
            if not report.windows:
                forcing = lambda t: o(np.asarray(t, dtype=float).reshape(-1))  # noqa: E731
            elif k.has_splitting:
                forcing = _splitting_forcing(k, vals[-1][-1], o, t_start)
            else:
                nodes = np.concatenate(grids)
                forcing = _memory_forcing(k, f, nodes, np.vstack(vals), o, q)
            extra = o.grid[(o.grid > t_start) & (o.grid < T)] - t_start
            cert = certify_window(
                forcing, nrm, f, k.alpha, M_alpha, F0, remaining, t_start=t_start,
                contraction_target=cfg.contraction_target, probe=probe, extra_nodes=extra,
                max_window=cfg.max_window,
            )
            report.last_tau = cert.tau
            if cert.tau < tau_min:
                report.stop_reason = "tau_min"
                break
            grid = np.linspace(0.0, cert.tau, cfg.grid_n)
            o_local = Trajectory(grid, forcing(grid), k.V)
            x_prev = vals[-1][-1]
            jump = _junction_jump(x_prev, o_local.values[0], nrm)
            if jump > cfg.glue_tol:
                raise GluingError(f"restart forcing misses x(t_start) by {jump:.3g} at t={t_start:.6g}")
            key = cert.tau
            op = op_cache.get(key)
            if op is None:
                op = ConvolutionOperator(k, grid, q)
                op_cache.clear()
                op_cache[key] = op
            res: LocalSolveResult = solve_local(
                k, f, o_local, cert, cfg.grid_n, cfg.tol, cfg.max_iter, q,
                tol_ball=cfg.tol_ball, contraction_slack=cfg.contraction_slack, op=op,
            )
            t_stop = T if cert.tau == remaining else t_start + cert.tau
            times = t_start + grid[1:]
            times[-1] = t_stop
            grids.append(times)
            vals.append(res.trajectory.values[1:])
            report.windows.append(
                WindowRecord(
                    certificate=cert, iterations=res.iterations, final_update_norm=res.final_update_norm,
                    defect=res.defect, contraction_ratios=res.contraction_ratios,
                    max_iterate_norm=res.max_iterate_norm, junction_jump=jump,
                    forcing=o_local, trajectory=res.trajectory,
                )
            )
            t_start = t_stop
            end_norm = float(nrm(vals[-1][-1]))
            if t_start < T:
                report.blowup_criterion_trace.append((t_start, 1.0 / (T - t_start) + end_norm))
            if float(np.max(nrm(res.trajectory.values))) > cfg.blowup_threshold:
                report.stop_reason = "threshold"
                break
    except MildSolveError as exc:
        report.stop_reason = "error"
        _finish(report, grids, vals, k)
        raise SolveAborted(f"solve aborted at t={t_start:.6g}: {exc}", report, exc) from exc

    _finish(report, grids, vals, k)
    report.outcome = classify_outcome(report, cfg)
    if report.outcome.kind == REACHED_T:
        x = report.global_trajectory
        if x.sup_norm() > 0.5 * cfg.blowup_threshold:
            report.flags.append("terminal_norm_exceeds_half_blowup_threshold")
        if len(x) <= cfg.defect_max_nodes:
            report.global_defect = defect(x, k, f, o, q)
            if report.global_defect > cfg.defect_budget * max(1.0, x.sup_norm()):
                report.flags.append("global_defect_exceeds_budget")
    return report


def _finish(report: SolveReport, grids, vals, k: Kernel):
    report.global_trajectory = Trajectory(np.concatenate(grids), np.vstack(vals), k.V)
    report.t_end = report.global_trajectory.t1


def _window_end_norms(report: SolveReport) -> np.ndarray:
    nrm = report.global_trajectory.space.norm
    return np.array([float(nrm(w.trajectory.values[-1])) for w in report.windows])


def _fit_divergence_time(report: SolveReport, k_last: int) -> float:
    """Root of the least-squares line through ``(t, 1/||x_t||)`` over the last windows."""
    x = report.global_trajectory
    t_from = report.windows[-min(k_last, len(report.windows))].t_start
    mask = x.grid >= t_from
    t = x.grid[mask]
    n = x.space.norm(x.values[mask])
    keep = n > 0
    t, y = t[keep], 1.0 / n[keep]
    if t.size < 2:
        return report.t_end
    tc = t.mean()
    slope, intercept = np.polyfit(t - tc, y, 1)
    if not slope < 0:
        return report.t_end
    return max(report.t_end, tc - intercept / slope)


def classify_outcome(report: SolveReport, config: SolverConfig | None = None) -> Outcome:
    """Map the stopping condition of a finished solve to ``ReachedT``, ``BlowUp`` or ``Stalled``."""
    cfg = config or SolverConfig()
    k_last = cfg.growth_windows
    reason = report.stop_reason
    if reason == "reached_T" or report.t_end >= report.T:
        return Outcome(REACHED_T, f"solution continued to the horizon T={report.T:g}")
    x = report.global_trajectory
    norm_at_stop = float(x.space.norm(x.values[-1])) if x is not None else None
    if not report.windows:
        return Outcome(STALLED, "no window could be certified", min_window_hit=report.last_tau,
                       norm_at_stop=norm_at_stop)
    ends = _window_end_norms(report)[-k_last:]
    growing = ends.size >= 2 and bool(np.all(np.diff(ends) > 0))
    if reason == "threshold" or growing:
        t_star = _fit_divergence_time(report, k_last)
        t_est = 0.5 * (report.windows[-1].t_start + t_star)
        if reason == "threshold":
            why = f"norm exceeded blowup_threshold={cfg.blowup_threshold:g}"
        else:
            why = f"{_STOP_TEXT.get(reason, reason)} while the norm grew over the last {ends.size} windows"

        return Outcome(BLOW_UP, f"{why}; fitted divergence time {t_star:.8g}", t_estimate=float(t_est),
                       norm_at_stop=norm_at_stop, min_window_hit=report.last_tau)
    return Outcome(
        STALLED,
        f"{_STOP_TEXT.get(reason, reason)} without norm growth; forcing or kernel may be pathological",
        norm_at_stop=norm_at_stop, min_window_hit=report.last_tau,
    )


def extended_identity_check(k: Kernel, v) -> bool:
    """``𝒮_0 v == v``; the restart construction depends on it."""
    return bool(np.array_equal(apply_extended(k, 0.0, v).coords, np.asarray(v, dtype=float)))
