"""Finite-dimensional normed state spaces, state vectors and sampled paths."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, NumericError

NORM_KINDS = ("euclidean", "sup", "p", "weighted_p")


def _frozen(a) -> np.ndarray:
    arr = np.array(a, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class SpaceSpec:
    """A copy of R^dim with one of a few lattice norms.

    ``norm_kind`` is ``"euclidean"``, ``"sup"``, ``"p"`` (needs ``p >= 1``) or
    ``"weighted_p"`` (needs ``p >= 1`` and ``dim`` positive weights).
    """

    dim: int
    norm_kind: str = "sup"
    p: float | None = None
    weights: tuple[float, ...] | None = None

    def __post_init__(self):
        if int(self.dim) != self.dim or self.dim < 1:
            raise ContractError(f"dim must be a positive integer, got {self.dim!r}")
        if self.norm_kind not in NORM_KINDS:
            raise ContractError(f"unknown norm_kind {self.norm_kind!r}; expected one of {NORM_KINDS}")
        if self.norm_kind in ("p", "weighted_p"):
            if self.p is None or not self.p >= 1:
                raise ContractError(f"norm_kind {self.norm_kind!r} requires p >= 1, got {self.p!r}")
        if self.norm_kind == "weighted_p":
            if self.weights is None or len(self.weights) != self.dim:
                raise ContractError("weighted_p requires one weight per dimension")
            if not all(np.isfinite(w) and w > 0 for w in self.weights):
                raise ContractError("weights must be strictly positive and finite")
            object.__setattr__(self, "weights", tuple(float(w) for w in self.weights))

    @property
    def exponent(self) -> float:
        """The p of the underlying l^p norm (``inf`` for the sup-norm)."""
        if self.norm_kind == "sup":
            return np.inf
        if self.norm_kind == "euclidean":
            return 2.0
        return float(self.p)

    def norm(self, x) -> np.ndarray | float:
        """Norm along the last axis of ``x``."""
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.dim:
            raise ContractError(f"expected trailing dimension {self.dim}, got {x.shape[-1]}")
        a = np.abs(x)
        if self.norm_kind == "sup":
            return a.max(axis=-1)
        p = 2.0 if self.norm_kind == "euclidean" else self.p
        if self.norm_kind == "weighted_p":
            a = a * np.asarray(self.weights) ** (1.0 / p)
        if np.isinf(p):
            return a.max(axis=-1)
        # scale first so large entries do not overflow a**p
        scale = a.max(axis=-1, keepdims=True)
        safe = np.where(scale > 0, scale, 1.0)
        return np.squeeze(safe, -1) * ((a / safe) ** p).sum(axis=-1) ** (1.0 / p)

    def sup_norm_ratio(self) -> float:
        """Smallest c with ``|v|_inf <= c |v|`` for all v."""
        if self.norm_kind == "weighted_p":
            return float(min(self.weights) ** (-1.0 / self.p))
        return 1.0


def norm_ratio(a: SpaceSpec, b: SpaceSpec) -> float:
    """An upper bound for ``sup_z |z|_a / |z|_b`` (exact when ``a == b``)."""
    if a.dim != b.dim:
        raise ContractError("spaces of different dimension are not comparable")
    if a == b:
        return 1.0
    pa, pb = a.exponent, b.exponent
    c = 1.0
    if a.norm_kind == "weighted_p":
        c *= max(a.weights) ** (1.0 / pa)
    inv = lambda p: 0.0 if np.isinf(p) else 1.0 / p  # noqa: E731
    c *= a.dim ** max(0.0, inv(pa) - inv(pb))
    if b.norm_kind == "weighted_p":
        c *= min(b.weights) ** (-1.0 / pb)
    return float(c)


@dataclass(frozen=True, eq=False)
class StateVector:
    coords: np.ndarray
    space: SpaceSpec

    def __post_init__(self):
        c = np.asarray(self.coords, dtype=float).reshape(-1)
        if c.shape[0] != self.space.dim:
            raise ContractError(f"vector of length {c.shape[0]} does not match space dim {self.space.dim}")
        if not np.all(np.isfinite(c)):
            raise NumericError("state vector has non-finite entries")
        object.__setattr__(self, "coords", _frozen(c))

    def __eq__(self, other):
        return (
            isinstance(other, StateVector)
            and self.space == other.space
            and np.array_equal(self.coords, other.coords)
        )

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.coords, dtype=dtype)


def norm(v: StateVector, space: SpaceSpec | None = None) -> float:
    """Norm of ``v`` in its own space (or in ``space``, which must match)."""
    if space is not None and space != v.space:
        raise ContractError("vector does not belong to the requested space")
    return float(v.space.norm(v.coords))


@dataclass(frozen=True, eq=False)
class Trajectory:
    """A continuous path sampled on a strictly increasing grid, piecewise linear in between."""

    grid: np.ndarray
    values: np.ndarray
    space: SpaceSpec
    interpolation: str = field(default="piecewise_linear")

    def __post_init__(self):
        g = np.asarray(self.grid, dtype=float).reshape(-1)
        v = np.asarray(self.values, dtype=float)
        if v.ndim == 1:
            v = v.reshape(-1, 1) if self.space.dim == 1 else v.reshape(1, -1)
        if g.size == 0:
            raise ContractError("trajectory grid is empty")
        if np.any(np.diff(g) <= 0):
            raise ContractError("trajectory grid must be strictly increasing")
        if v.shape != (g.size, self.space.dim):
            raise ContractError(f"values shape {v.shape} does not match grid {g.size} x dim {self.space.dim}")
        if not np.all(np.isfinite(v)) or not np.all(np.isfinite(g)):
            raise NumericError("trajectory contains non-finite entries")
        if self.interpolation != "piecewise_linear":
            raise ContractError("only piecewise_linear interpolation is supported")
        object.__setattr__(self, "grid", _frozen(g))
        object.__setattr__(self, "values", _frozen(v))

    @property
    def t0(self) -> float:
        return float(self.grid[0])

    @property
    def t1(self) -> float:
        return float(self.grid[-1])

    @property
    def dim(self) -> int:
        return self.space.dim

    def __len__(self):
        return self.grid.size

    def __call__(self, t):
        """Evaluate at scalar or array ``t`` inside ``[t0, t1]``; returns shape ``t.shape + (dim,)``."""
        t = np.asarray(t, dtype=float)
        span = max(abs(self.t0), abs(self.t1), 1.0)
        if np.any(t < self.t0 - 1e-12 * span) or np.any(t > self.t1 + 1e-12 * span):
            raise ContractError(f"evaluation time outside [{self.t0}, {self.t1}]")
        if self.grid.size == 1:
            return np.broadcast_to(self.values[0], t.shape + (self.dim,)).copy()
        flat = np.clip(t.reshape(-1), self.t0, self.t1)
        j = np.clip(np.searchsorted(self.grid, flat, side="right") - 1, 0, self.grid.size - 2)
        lam = (flat - self.grid[j]) / (self.grid[j + 1] - self.grid[j])
        out = (1.0 - lam)[:, None] * self.values[j] + lam[:, None] * self.values[j + 1]
        return out.reshape(t.shape + (self.dim,))

    def at(self, t: float) -> StateVector:
        return StateVector(self(t), self.space)

    def sup_norm(self) -> float:
        """Exact sup-norm (attained at nodes for piecewise-linear paths)."""
        return float(np.max(self.space.norm(self.values)))

    def shifted(self, dt: float) -> "Trajectory":
        return Trajectory(self.grid + dt, self.values, self.space)

    @classmethod
    def constant(cls, value, space: SpaceSpec, t0: float, t1: float) -> "Trajectory":
        v = np.asarray(value, dtype=float).reshape(1, -1)
        grid = [t0] if t1 == t0 else [t0, t1]
        return cls(np.array(grid), np.repeat(v, len(grid), axis=0), space)

    @classmethod
    def from_function(cls, fn, space: SpaceSpec, grid) -> "Trajectory":
        grid = np.asarray(grid, dtype=float)
        return cls(grid, np.asarray([np.asarray(fn(t), dtype=float).reshape(-1) for t in grid]), space)


def sup_distance(x: Trajectory, y: Trajectory, probe: int | None = None) -> float:
    """``max ||x(t) - y(t)||`` over both grids plus ``probe`` equispaced points.

    For two piecewise-linear paths the difference is piecewise linear on the
    merged grid, so the merged-grid maximum is already the exact supremum; the
    probe points only matter for callers that pass coarser representations.
    """
    if x.space != y.space:
        raise ContractError("trajectories live in different spaces")
    span = max(abs(x.t0), abs(x.t1), 1.0)
    if abs(x.t0 - y.t0) > 1e-12 * span or abs(x.t1 - y.t1) > 1e-12 * span:
        raise ContractError("trajectories are defined on different intervals")
    n_max = max(len(x), len(y))
    if probe is None:
        probe = 4 * n_max
    if probe < n_max:
        raise ContractError(f"probe ({probe}) must be at least the number of grid nodes ({n_max})")
    pts = np.union1d(np.union1d(x.grid, y.grid), np.linspace(x.t0, x.t1, probe))
    pts = np.clip(pts, max(x.t0, y.t0), min(x.t1, y.t1))
    return float(np.max(x.space.norm(x(pts) - y(pts))))
