"""Product integration of ``∫_0^t S_{t-s} y_s ds`` and the mild-equation defect.

The history ``y`` is interpolated piecewise linearly, the smooth semigroup
factor ``exp((t-s)G)`` is sampled exactly at quadrature nodes, and the declared
singular factor ``(t-s)^(-a0)`` is integrated exactly against the linear hat
functions of each sub-panel.  Nothing singular ever passes through a
polynomial interpolant.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import roots_jacobi

from .errors import ContractError, NumericError
from .kernels import Kernel
from .nonlinear import Nonlinearity
from .spaces import StateVector, Trajectory

SCHEMES = ("product_rectangle", "product_trapezoid")
SINGULAR_PANELS = ("analytic_weight", "gauss_jacobi")



@dataclass(frozen=True)
class QuadratureSpec:
    scheme: str = "product_trapezoid"
    panels_per_step: int = 4
    singular_panel: str = "analytic_weight"
    gauss_jacobi_nodes: int = 4

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ContractError(f"unknown quadrature scheme {self.scheme!r}")
        if self.singular_panel not in SINGULAR_PANELS:
            raise ContractError(f"unknown singular panel rule {self.singular_panel!r}")
        if int(self.panels_per_step) != self.panels_per_step or self.panels_per_step < 1:
            raise ContractError("panels_per_step must be a positive integer")
        if int(self.gauss_jacobi_nodes) != self.gauss_jacobi_nodes or self.gauss_jacobi_nodes < 1:
            raise ContractError("gauss_jacobi nodes must be a positive integer")


def refine(nodes: np.ndarray, m: int) -> np.ndarray:
    """Split every panel of ``nodes`` into ``m`` equal sub-panels (endpoints kept exactly)."""
    nodes = np.asarray(nodes, dtype=float)
    if m == 1 or nodes.size < 2:
        return nodes.copy()
    frac = np.arange(m) / m
    inner = nodes[:-1, None] + np.diff(nodes)[:, None] * frac[None, :]
    return np.append(inner.reshape(-1), nodes[-1])


_SERIES_RATIO = 16.0
_SERIES_TERMS = 12  # truncation error below 16^-12 relative


@lru_cache(maxsize=32)
def _binom_coeffs(a0: float) -> np.ndarray:
    c = np.ones(_SERIES_TERMS)
    for k in range(1, _SERIES_TERMS):
        c[k] = c[k - 1] * (-a0 - k + 1) / k
    return c


def _moment_weights(ub: np.ndarray, h: np.ndarray, a0: float):
    """Hat-function moments of ``u^(-a0)`` over sub-panels ``u in [ub, ub + h]``.

    Returns ``(w_early, w_late)``: weights of the earlier node (``u = ub + h``)
    and the later node (``u = ub``).
    """
    if a0 == 0.0:
        return 0.5 * h, 0.5 * h
    w_early = np.empty_like(h)
    w_late = np.empty_like(h)
    distant = ub >= _SERIES_RATIO * h
    near = ~distant
    if np.any(near):
        # closed form; the difference below loses at most a factor (ub + h) / h <= 17 to cancellation
        b, hh = ub[near], h[near]
        # b = 0 only on the sub-panel holding the singularity; the masked branch is discarded
        with np.errstate(divide="ignore", invalid="ignore"):
            lg = np.log1p(hh / b)
            i0 = np.where(b > 0, b ** (1 - a0) * np.expm1((1 - a0) * lg), hh ** (1 - a0)) / (1 - a0)
            i1 = np.where(b > 0, b ** (2 - a0) * np.expm1((2 - a0) * lg), hh ** (2 - a0)) / (2 - a0)
        early = (i1 - b * i0) / hh
        w_early[near] = early
        w_late[near] = i0 - early
    if np.any(distant):
        # (b + v)^(-a0) = b^(-a0) sum_k binom(-a0, k) (v/b)^k, integrated term by term against v and h - v
        every = bool(distant.all())
        b, hh = (ub, h) if every else (ub[distant], h[distant])
        eps = hh / b
        c = _binom_coeffs(a0)
        m0 = np.full_like(eps, c[-1] / _SERIES_TERMS)
        m1 = np.full_like(eps, c[-1] / (_SERIES_TERMS + 1))
        for k in range(_SERIES_TERMS - 2, -1, -1):
            m0 *= eps
            m0 += c[k] / (k + 1)
            m1 *= eps
            m1 += c[k] / (k + 2)
        scale = np.power(b, -a0, out=eps)
        scale *= hh
        m0 -= m1
        m0 *= scale
        m1 *= scale
        if every:
            return m1, m0
        w_early[distant] = m1
        w_late[distant] = m0
    return w_early, w_late


def quadrature_rule(nodes, t: float, a0: float, q: QuadratureSpec):
    """Points ``s`` and weights ``w`` with ``∫_{nodes[0]}^{nodes[-1]} (t-s)^(-a0) g(s) ds ≈ Σ w g(s)``.

    Requires ``t >= nodes[-1]``.  When ``t`` coincides with the last node and
    ``a0 > 0`` the last sub-panel holds the singularity; ``gauss_jacobi`` then
    samples ``g`` at Gauss-Jacobi nodes for the weight ``(t-s)^(-a0)``.
    """
    nodes = np.asarray(nodes, dtype=float)
    if nodes.size < 2:
        return np.empty(0), np.empty(0)
    fine = refine(nodes, q.panels_per_step)
    h = np.diff(fine)
    ub = np.maximum(t - fine[1:], 0.0)
    w_early, w_late = _moment_weights(ub, h, a0)
    w = np.zeros(fine.size)
    if q.scheme == "product_trapezoid":
        w[:-1] += w_early
        w[1:] += w_late
    else:
        w[:-1] += w_early + w_late
    if q.singular_panel == "gauss_jacobi" and a0 > 0 and ub[-1] == 0.0:
        if q.scheme == "product_trapezoid":
            w[-2] -= w_early[-1]
            w[-1] -= w_late[-1]
        else:
            w[-2] -= w_early[-1] + w_late[-1]
        x, wj = roots_jacobi(q.gauss_jacobi_nodes, 0.0, -a0)
        hl = h[-1]
        u = 0.5 * hl * (1.0 + x)
        return np.append(fine, t - u), np.append(w, wj * (0.5 * hl) ** (1.0 - a0))
    return fine, w


def _locate(grid: np.ndarray, s: np.ndarray):
    j = np.clip(np.searchsorted(grid, s, side="right") - 1, 0, grid.size - 2)
    lam = (s - grid[j]) / (grid[j + 1] - grid[j])
    return j, np.clip(lam, 0.0, 1.0)


def _integrate(k: Kernel, nodes: np.ndarray, Y: np.ndarray, t: float, q: QuadratureSpec) -> np.ndarray:
    """``∫_{nodes[0]}^{nodes[-1]} S_{t-s} y(s) ds`` for piecewise-linear ``y`` with node values ``Y``."""
    if nodes.size < 2:
        return np.zeros(k.dim)
    s, w = quadrature_rule(nodes, t, k.alpha0, q)
    j, lam = _locate(nodes, s)
    Ys = (1.0 - lam)[:, None] * Y[j] + lam[:, None] * Y[j + 1]
    out = (w[:, None] * k.act(t - s, Ys)).sum(axis=0)
    if not np.all(np.isfinite(out)):
        raise NumericError("convolution produced a non-finite value")
    return out


def _check_history(k: Kernel, y: Trajectory):
    if y.space != k.W:
        raise ContractError("integrand values must lie in the kernel's W space")
    if abs(y.t0) > 1e-14 * max(1.0, y.t1):
        raise ContractError("convolution histories start at t = 0")


def convolve(k: Kernel, y: Trajectory, q: QuadratureSpec | None = None, t: float | None = None) -> StateVector:
    """``∫_0^t S_{t-s} y_s ds`` (``t`` defaults to the end of ``y``)."""
    q = q or QuadratureSpec()
    _check_history(k, y)
    t = y.t1 if t is None else float(t)
    if t > k.T * (1 + 1e-14) or t < 0 or t > y.t1 * (1 + 1e-14) + 1e-300:
        raise ContractError(f"t={t} must lie in [0, min(T, y.t1)]")
    nodes = y.grid[y.grid < t]
    nodes = np.append(nodes, t) if t > 0 else np.array([0.0])
    Y = y(nodes)
    return StateVector(_integrate(k, nodes, Y, t, q), k.V)


def convolution_path(k: Kernel, y: Trajectory, grid=None, q: QuadratureSpec | None = None) -> Trajectory:
    """``t -> ∫_0^t S_{t-s} y_s ds`` sampled at ``grid`` (default: ``y.grid``)."""
    q = q or QuadratureSpec()
    _check_history(k, y)
    if grid is None:
        nodes, Y = y.grid, y.values
        out = np.zeros((nodes.size, k.dim))
        for i in range(1, nodes.size):
            out[i] = _integrate(k, nodes[: i + 1], Y[: i + 1], nodes[i], q)
        return Trajectory(nodes, out, k.V)
    grid = np.asarray(grid, dtype=float)
    return Trajectory(grid, np.array([convolve(k, y, q, t).coords for t in grid]), k.V)


def history_integral(k: Kernel, nodes, Y, t_eval, q: QuadratureSpec | None = None) -> np.ndarray:
    """``∫_0^b S_{t-s} y_s ds`` with ``b = nodes[-1] <= t`` for each ``t`` in ``t_eval``."""
    q = q or QuadratureSpec()
    nodes = np.asarray(nodes, dtype=float)
    Y = np.asarray(Y, dtype=float)
    t_eval = np.atleast_1d(np.asarray(t_eval, dtype=float))
    out = np.zeros((t_eval.size, k.dim))
    if nodes.size < 2:
        return out
    # past the last node no sub-panel holds the singularity, so all rows share one fine grid
    past = t_eval > nodes[-1]
    for i in np.flatnonzero(~past):
        out[i] = _integrate(k, nodes, Y, float(t_eval[i]), q)
    if not np.any(past):
        return out
    fine = refine(nodes, q.panels_per_step)
    j, lam = _locate(nodes, fine)
    Yf = (1.0 - lam)[:, None] * Y[j] + lam[:, None] * Y[j + 1]
    h = np.diff(fine)
    idx = np.flatnonzero(past)
    chunk = max(1, _CHUNK_ENTRIES // fine.size)
    for start in range(0, idx.size, chunk):
        rows = idx[start:start + chunk]
        t = t_eval[rows][:, None]
        ub = t - fine[None, 1:]
        w_early, w_late = (w.reshape(ub.shape) for w in _moment_weights(ub.ravel(), np.broadcast_to(h, ub.shape).ravel(), k.alpha0))
        W = np.zeros((rows.size, fine.size))
        if q.scheme == "product_trapezoid":
            W[:, :-1] += w_early
            W[:, 1:] += w_late
        else:
            W[:, :-1] += w_early + w_late
        lags = (t - fine[None, :]).ravel()
        acted = k.act(lags, np.broadcast_to(Yf, (rows.size,) + Yf.shape).reshape(-1, k.dim))
        out[rows] = (W[:, :, None] * acted.reshape(rows.size, fine.size, k.dim)).sum(axis=1)
    if not np.all(np.isfinite(out)):
        raise NumericError("convolution produced a non-finite value")
    return out


_CHUNK_ENTRIES = 1 << 20


@lru_cache(maxsize=64)
def _unit_rows(n: int, a0: float, q: QuadratureSpec):
    """Quadrature data for every row of the operator on ``linspace(0, 1, n)``.

    Returns flat arrays ``(row, j, lam, w, u)``; on a grid scaled by ``tau``
    the weights scale by ``tau^(1-a0)`` and the lags ``u = t_i - s`` by ``tau``.
    """
    unit = np.linspace(0.0, 1.0, n)
    parts = []
    for i in range(1, n):
        sub = unit[: i + 1]
        s, w = quadrature_rule(sub, sub[-1], a0, q)
        j, lam = _locate(sub, s)
        parts.append((np.full(s.size, i), j, lam, w, sub[-1] - s))
    out = tuple(np.concatenate(c) for c in zip(*parts))
    for a in out:
        a.setflags(write=False)
    return out


def _rows(grid: np.ndarray, a0: float, q: QuadratureSpec):
    n = grid.size
    span = grid[-1] - grid[0]
    if span > 0 and np.allclose(np.diff(grid), span / (n - 1), rtol=1e-12, atol=0.0):
        row, j, lam, w, u = _unit_rows(n, a0, q)
        return row, j, lam, w * span ** (1.0 - a0), u * span
    parts = []
    for i in range(1, n):
        sub = grid[: i + 1]
        s, w = quadrature_rule(sub, sub[-1], a0, q)
        j, lam = _locate(sub, s)
        parts.append((np.full(s.size, i), j, lam, w, sub[-1] - s))
    return tuple(np.concatenate(c) for c in zip(*parts))


class ConvolutionOperator:
    """Dense matrix of ``Y -> (∫_0^{t_i} S_{t_i-s} y_s ds)_i`` on a fixed grid.

    Picard iterations apply the same linear map many times, so the quadrature
    weights and kernel samples are assembled once.
    """

    def __init__(self, k: Kernel, grid, q: QuadratureSpec | None = None):
        q = q or QuadratureSpec()
        self.grid = np.asarray(grid, dtype=float)
        self.kernel = k
        n, d = self.grid.size, k.dim
        shape = (n, n, d) if k.is_diagonal else (n, n, d, d)
        A = np.zeros(shape)
        if n >= 2:
            row, j, lam, w, u = _rows(self.grid, k.alpha0, q)
            E = k.semigroup_factors(u)
            c = w.reshape((-1,) + (1,) * (E.ndim - 1)) * E
            lam = lam.reshape((-1,) + (1,) * (E.ndim - 1))
            np.add.at(A, (row, j), c * (1.0 - lam))
            np.add.at(A, (row, j + 1), c * lam)
        self.A = A

    def __call__(self, Y: np.ndarray) -> np.ndarray:
        if self.kernel.is_diagonal:
            return np.einsum("ijd,jd->id", self.A, Y)
        return np.einsum("ijab,jb->ia", self.A, Y)


def defect(x: Trajectory, k: Kernel, f: Nonlinearity, o: Trajectory, q: QuadratureSpec | None = None) -> float:
    """``max_i ||x(t_i) - ∫_0^{t_i} S_{t_i-s} F(x_s) ds - o(t_i)||`` over the nodes of ``x``."""
    if x.space != k.V or o.space != k.V:
        raise ContractError("x and o must lie in the kernel's V space")
    span = max(1.0, abs(x.t1))
    if abs(x.t0 - o.t0) > 1e-12 * span or o.t1 < x.t1 - 1e-12 * span:
        raise ContractError("x and o must share their interval")
    FX = Trajectory(x.grid, f(x.values), k.W)
    conv = convolution_path(k, FX, q=q)
    return float(np.max(k.V.norm(x.values - conv.values - o(x.grid))))
