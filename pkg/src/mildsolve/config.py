"""Problem files: TOML in, validated :class:`ProblemSpec` out, and the solve/verify driver."""

from __future__ import annotations

import csv
import json
import math
import sys
import warnings
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from . import nonlinear as nl
from .continuation import BLOW_UP, REACHED_T, STALLED, SolveReport, SolverConfig, solve_maximal
from .errors import AuditError, ConfigError, MildSolveError, SolveAborted
from .kernels import Kernel, holder_modulus, singularity_bound
from .nonlinear import Nonlinearity, audit_psi
from .spaces import SpaceSpec, Trajectory
from .verify import verify_report
from .volterra import QuadratureSpec

SCHEMA_VERSION = 1

EXIT_OK = 0
EXIT_STALLED = 1
EXIT_ERROR = 2
EXIT_VERIFY_FAILED = 3

_TOP_KEYS = {
    "schema_version", "id", "T", "alpha", "rho", "seed",
    "space", "space_w", "kernel", "nonlinearity", "forcing", "solver", "quadrature", "audit",
}


@dataclass(frozen=True)
class AuditSettings:
    samples: int = 1000
    holder_mesh: int = 32


@dataclass
class ProblemSpec:
    id: str
    T: float
    alpha: float
    rho: float
    seed: int
    V: SpaceSpec
    W: SpaceSpec
    kernel: Kernel
    nonlinearity: Nonlinearity
    forcing: Trajectory
    solver: SolverConfig
    quadrature: QuadratureSpec
    audit_settings: AuditSettings = field(default_factory=AuditSettings)
    descriptor: dict = field(default_factory=dict)
    audits: dict = field(default_factory=dict)


# -- small validation helpers ---------------------------------------------------


def _table(d: dict, key: str, where: str, required: bool = True) -> dict | None:
    val = d.get(key)
    if val is None:
        if required:
            raise ConfigError(f"missing table [{where}]", where)
        return None
    if not isinstance(val, dict):
        raise ConfigError(f"[{where}] must be a table", where)
    return val


def _reject_unknown(d: dict, allowed, where: str):
    extra = sorted(set(d) - set(allowed))
    if extra:
        prefix = f"{where}." if where else ""
        raise ConfigError(f"unknown key(s) {', '.join(prefix + k for k in extra)}", prefix + extra[0])


def _number(d: dict, key: str, where: str, default=None, *, lo=None, hi=None, open_lo=False, open_hi=False):
    name = f"{where}.{key}" if where else key
    if key not in d:
        if default is None:
            raise ConfigError(f"missing required field {name}", name)
        return default
    v = d[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
        raise ConfigError(f"{name} must be a finite number, got {v!r}", name)
    v = float(v)
    bad_lo = lo is not None and (v <= lo if open_lo else v < lo)
    bad_hi = hi is not None and (v >= hi if open_hi else v > hi)
    if bad_lo or bad_hi:
        lb = "(" if open_lo else "["
        rb = ")" if open_hi else "]"
        lo_s = "-inf" if lo is None else f"{lo:g}"
        hi_s = "inf" if hi is None else f"{hi:g}"
        raise ConfigError(f"{name} = {v:g} violates the constraint {name} in {lb}{lo_s}, {hi_s}{rb}", name)
    return v


def _integer(d: dict, key: str, where: str, default=None, lo=None):
    name = f"{where}.{key}" if where else key
    if key not in d:
        if default is None:
            raise ConfigError(f"missing required field {name}", name)
        return default
    v = d[key]
    if isinstance(v, bool) or not isinstance(v, int):
        raise ConfigError(f"{name} must be an integer, got {v!r}", name)
    if lo is not None and v < lo:
        raise ConfigError(f"{name} = {v} violates the constraint {name} >= {lo}", name)
    return v


def _vector(d: dict, key: str, where: str, n: int | None = None):
    name = f"{where}.{key}"
    v = d.get(key)
    if v is None:
        raise ConfigError(f"missing required field {name}", name)
    if isinstance(v, (int, float)) and not isinstance(v, bool):
        v = [v]
    try:
        arr = np.asarray(v, dtype=float)
    except (TypeError, ValueError):
        raise ConfigError(f"{name} must be an array of numbers", name) from None
    if arr.ndim != 1 or not np.all(np.isfinite(arr)):
        raise ConfigError(f"{name} must be a flat array of finite numbers", name)
    if n is not None and arr.size != n:
        raise ConfigError(f"{name} must have {n} entries, got {arr.size}", name)
    return arr


def _matrix(d: dict, key: str, where: str, n: int):
    name = f"{where}.{key}"
    try:
        arr = np.asarray(d.get(key), dtype=float)
    except (TypeError, ValueError):
        raise ConfigError(f"{name} must be a {n}x{n} array of numbers", name) from None
    if arr.shape != (n, n) or not np.all(np.isfinite(arr)):
        raise ConfigError(f"{name} must be a finite {n}x{n} array", name)
    return arr


# -- section parsers --------------------------------------------------------------


def _parse_space(d: dict, where: str) -> SpaceSpec:
    _reject_unknown(d, {"dim", "norm", "p", "weights"}, where)
    dim = _integer(d, "dim", where, lo=1)
    kind = d.get("norm", "sup")
    if kind not in ("euclidean", "sup", "p", "weighted_p"):
        raise ConfigError(f"{where}.norm must be one of euclidean, sup, p, weighted_p; got {kind!r}", f"{where}.norm")
    p = _number(d, "p", where, lo=1.0) if kind in ("p", "weighted_p") else None
    weights = None
    if kind == "weighted_p":
        weights = _vector(d, "weights", where, dim)
        if np.any(weights <= 0):
            raise ConfigError(f"{where}.weights must be strictly positive", f"{where}.weights")
        weights = tuple(weights)
    return SpaceSpec(dim, kind, p, weights)


_KERNEL_KEYS = {
    "identity": set(),
    "scalar_exp": {"lam"},
    "diagonal_exp": {"lams"},
    "matrix_exp": {"matrix"},
    "singular_scaled": {"alpha0", "base"},
}


def _parse_kernel(d: dict, where: str, V, W, T, alpha, rho) -> Kernel:
    kind = d.get("kind")
    if kind not in _KERNEL_KEYS:
        raise ConfigError(f"{where}.kind must be one of {', '.join(_KERNEL_KEYS)}; got {kind!r}", f"{where}.kind")
    _reject_unknown(d, {"kind"} | _KERNEL_KEYS[kind], where)
    kw = {"alpha": alpha, "rho": rho}
    if kind == "identity":
        return Kernel.identity(V, T, W=W, **kw)
    if kind == "scalar_exp":
        return Kernel.scalar_exp(_number(d, "lam", where), V, T, W=W, **kw)
    if kind == "diagonal_exp":
        return Kernel.diagonal_exp(_vector(d, "lams", where, V.dim), V, T, W=W, **kw)
    if kind == "matrix_exp":
        return Kernel.matrix_exp(_matrix(d, "matrix", where, V.dim), V, T, W=W, **kw)
    a0 = _number(d, "alpha0", where, lo=0.0, hi=1.0, open_lo=True, open_hi=True)
    base_d = _table(d, "base", f"{where}.base")
    if base_d.get("kind") == "singular_scaled":
        raise ConfigError("singular_scaled kernels cannot be nested", f"{where}.base.kind")
    base = _parse_kernel(base_d, f"{where}.base", V, W, T, None, rho)
    return Kernel.singular_scaled(a0, base, alpha=alpha if alpha is not None else a0, rho=rho)


def _parse_nonlinearity(d: dict, V: SpaceSpec, W: SpaceSpec) -> Nonlinearity:
    where = "nonlinearity"
    kind = d.get("kind")
    allowed = {
        "linear": {"matrix"},
        "polynomial_scalar": {"coeffs"},
        "quadratic_riccati": set(),
        "cubic_reaction": set(),
        "custom": {"function", "psi"},
    }
    if kind not in allowed:
        raise ConfigError(f"{where}.kind must be one of {', '.join(allowed)}; got {kind!r}", f"{where}.kind")
    _reject_unknown(d, {"kind"} | allowed[kind], where)
    if kind == "linear":
        return nl.linear(_matrix(d, "matrix", where, V.dim), V, W)
    if kind == "polynomial_scalar":
        return nl.polynomial_scalar(_vector(d, "coeffs", where), V, W)
    if kind == "quadratic_riccati":
        return nl.quadratic_riccati(V, W)
    if kind == "cubic_reaction":
        return nl.cubic_reaction(V, W)
    ref = d.get("function")
    if not isinstance(ref, str):
        raise ConfigError(f"{where}.function must be a 'module:attr' string", f"{where}.function")
    psi = _vector(d, "psi", where)
    if np.any(psi < 0):
        raise ConfigError(f"{where}.psi coefficients must be nonnegative", f"{where}.psi")
    return nl.custom(nl.resolve_callable(ref), psi, V, W)


def _parse_forcing(d: dict, V: SpaceSpec, T: float, base_dir: Path) -> Trajectory:
    where = "forcing"
    kind = d.get("kind")
    if kind == "constant":
        _reject_unknown(d, {"kind", "value"}, where)
        return Trajectory.constant(_vector(d, "value", where, V.dim), V, 0.0, T)
    if kind == "sampled":
        _reject_unknown(d, {"kind", "path"}, where)
        ref = d.get("path")
        if not isinstance(ref, str):
            raise ConfigError("forcing.path must be a string", "forcing.path")
        path = Path(ref) if Path(ref).is_absolute() else base_dir / ref
        data = _read_table(path, V.dim)
        t, vals = data[:, 0], data[:, 1:]
        if abs(t[0]) > 1e-14 or t[-1] < T * (1 - 1e-12):
            raise ConfigError(f"forcing samples must cover [0, T={T:g}], got [{t[0]:g}, {t[-1]:g}]", "forcing.path")
        if np.any(np.diff(t) <= 0):
            raise ConfigError("forcing time column must be strictly increasing", "forcing.path")
        return Trajectory(t, vals, V)
    raise ConfigError(f"forcing.kind must be 'constant' or 'sampled', got {kind!r}", "forcing.kind")


def _read_table(path: Path, dim: int) -> np.ndarray:
    try:
        with open(path, newline="") as fh:
            rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    except OSError as exc:
        raise ConfigError(f"cannot read forcing file {path}: {exc}", "forcing.path") from exc
    if rows:
        try:
            float(rows[0][0])
        except ValueError:
            rows = rows[1:]
    try:
        data = np.array([[float(c) for c in r] for r in rows], dtype=float)
    except ValueError as exc:
        raise ConfigError(f"forcing file {path}: {exc}", "forcing.path") from None
    if data.ndim != 2 or data.shape[0] < 2 or data.shape[1] != dim + 1 or not np.all(np.isfinite(data)):
        raise ConfigError(f"forcing file {path} needs >= 2 finite rows of {dim + 1} columns", "forcing.path")
    return data


def _parse_dataclass(cls, d: dict | None, where: str):
    if d is None:
        return cls()
    names = {f.name for f in fields(cls)}
    _reject_unknown(d, names, where)
    try:
        return cls(**d)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{where}]: {exc}", where) from exc


def parse_problem(doc: dict, base_dir: Path | str = ".") -> ProblemSpec:
    """Validate a decoded problem document; no audits."""
    base_dir = Path(base_dir)
    _reject_unknown(doc, _TOP_KEYS, "")
    version = _integer(doc, "schema_version", "", default=SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema_version {version}; this build reads {SCHEMA_VERSION}", "schema_version")
    pid = doc.get("id")
    if not isinstance(pid, str) or not pid or any(c in pid for c in "/\\"):
        raise ConfigError("id must be a non-empty string without path separators", "id")
    T = _number(doc, "T", "", lo=0.0, open_lo=True)
    alpha = _number(doc, "alpha", "", lo=0.0, hi=1.0, open_lo=True, open_hi=True) if "alpha" in doc else None
    rho = _number(doc, "rho", "", 0.5, lo=0.0, hi=1.0, open_lo=True, open_hi=True)
    seed = _integer(doc, "seed", "", default=0)
    V = _parse_space(_table(doc, "space", "space"), "space")
    w_d = _table(doc, "space_w", "space_w", required=False)
    W = _parse_space(w_d, "space_w") if w_d is not None else V
    if W.dim != V.dim:
        raise ConfigError("space_w.dim must equal space.dim", "space_w.dim")
    kernel = _parse_kernel(_table(doc, "kernel", "kernel"), "kernel", V, W, T, alpha, rho)
    f = _parse_nonlinearity(_table(doc, "nonlinearity", "nonlinearity"), V, W)
    o = _parse_forcing(_table(doc, "forcing", "forcing"), V, T, base_dir)
    solver = _parse_dataclass(SolverConfig, _table(doc, "solver", "solver", required=False), "solver")
    quad = _parse_dataclass(QuadratureSpec, _table(doc, "quadrature", "quadrature", required=False), "quadrature")
    audit = _parse_dataclass(AuditSettings, _table(doc, "audit", "audit", required=False), "audit")
    return ProblemSpec(
        id=pid, T=T, alpha=kernel.alpha, rho=rho, seed=seed, V=V, W=W, kernel=kernel,
        nonlinearity=f, forcing=o, solver=solver, quadrature=quad, audit_settings=audit, descriptor=doc,
    )


def run_audits(spec: ProblemSpec) -> dict:
    """Check the hypotheses the certified windows rely on; raise :class:`AuditError` on failure."""
    k, f = spec.kernel, spec.nonlinearity
    M = singularity_bound(k, spec.solver.singularity_mesh)
    if not math.isfinite(M):
        raise AuditError(
            f"kernel singularity hypothesis failed: sup t^alpha ||S_t|| is infinite "
            f"(alpha={k.alpha:g} < kernel singularity {k.alpha0:g})",
            "alpha",
        )
    R_o = spec.forcing.sup_norm()
    r = 2 * (R_o + 1) + 2
    res = audit_psi(f, r, spec.audit_settings.samples, spec.seed)
    if res.violated:
        raise AuditError(
            f"local Lipschitz hypothesis failed: observed difference quotient {res.max_observed_ratio:.6g} "
            f"exceeds Psi({r:g}) = {res.psi:.6g}",
            "nonlinearity.psi",
        )
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        C_rho = holder_modulus(k, spec.audit_settings.holder_mesh)
    audits = {
        "M_alpha": M,
        "holder_C_rho": C_rho,
        "psi_audit": {
            "r": r, "samples": res.samples, "max_observed_ratio": res.max_observed_ratio,
            "psi": res.psi, "violated": res.violated,
        },
        "warnings": [str(w.message) for w in caught],
    }
    spec.audits = audits
    return audits


def load_problem(path, audit: bool = True) -> ProblemSpec:
    """Read, validate and (by default) audit a problem file."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: parse error: {exc}") from exc
    spec = parse_problem(doc, path.parent)
    if audit:
        run_audits(spec)
    return spec


# -- output ---------------------------------------------------------------------


def _clean(obj):
    """JSON-safe copy: numpy scalars to Python, non-finite floats to strings."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else repr(v)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def report_to_dict(spec: ProblemSpec, report: SolveReport | None, verified: bool | None, error=None) -> dict:
    out = {
        "schema_version": SCHEMA_VERSION,
        "problem_id": spec.id,
        "T": spec.T,
        "alpha": spec.alpha,
        "rho": spec.rho,
        "seed": spec.seed,
        "audits": spec.audits,
    }
    if report is not None:
        oc = report.outcome
        out.update(
            outcome=None if oc is None else asdict(oc),
            t_end=report.t_end,
            stop_reason=report.stop_reason,
            M_alpha=report.M_alpha,
            window_count=len(report.windows),
            windows=[w.to_dict() for w in report.windows],
            blowup_criterion_trace=[list(p) for p in report.blowup_criterion_trace],
            global_defect=report.global_defect,
            flags=report.flags,
            warnings=report.warnings,
            certificates=None
            if report.uniqueness_checks is None
            else {
                "uniqueness": [c.to_dict() for c in report.uniqueness_checks],
                "perturbation": [c.to_dict() for c in report.perturbation_certificates],
                "residual": [c.to_dict() for c in report.residual_checks],
            },
            verified=verified,
            config={"solver": report.config, "quadrature": asdict(spec.quadrature)},
        )
    if error is not None:
        out["error"] = {"type": type(error).__name__, "message": str(error)}
        if isinstance(error, ConfigError):
            out["error"]["field"] = error.field
    return _clean(out)


def write_json(path: Path, obj: dict):
    path.write_text(json.dumps(obj, indent=2, allow_nan=False) + "\n")


def write_trajectory_csv(path: Path, x: Trajectory):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t"] + [f"x_{i + 1}" for i in range(x.dim)])
        for t, row in zip(x.grid, x.values):
            w.writerow([repr(float(t))] + [repr(float(v)) for v in row])


def write_plot_csv(path: Path, trace):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["s", "criterion"])
        for s, c in trace:
            w.writerow([repr(float(s)), repr(float(c))])


def exit_code(report: SolveReport, verify: bool, verified: bool | None) -> int:
    if verify and not verified:
        return EXIT_VERIFY_FAILED
    if report.outcome is not None and report.outcome.kind == STALLED:
        return EXIT_STALLED
    if report.outcome is not None and report.outcome.kind in (REACHED_T, BLOW_UP):
        return EXIT_OK
    return EXIT_ERROR


def run(spec: ProblemSpec, output_dir, verify: bool = False, certify: bool = False, plot: bool = False) -> int:
    """Solve ``spec`` and write ``<id>.trajectory.csv`` and ``<id>.report.json``.

    ``verify`` makes certificate failures fatal (exit 3); ``certify`` only
    records them.
    """
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    report_path = out / f"{spec.id}.report.json"
    if not spec.audits:
        try:
            run_audits(spec)
        except MildSolveError as exc:
            write_json(report_path, report_to_dict(spec, None, None, exc))
            return EXIT_ERROR
    try:
        report = solve_maximal(
            spec.kernel, spec.nonlinearity, spec.forcing, spec.solver, spec.quadrature,
            problem_id=spec.id, M_alpha=spec.audits["M_alpha"],
        )
    except SolveAborted as exc:
        write_trajectory_csv(out / f"{spec.id}.trajectory.csv", exc.report.global_trajectory)
        write_json(report_path, report_to_dict(spec, exc.report, None, exc))
        return EXIT_ERROR
    except MildSolveError as exc:
        write_json(report_path, report_to_dict(spec, None, None, exc))
        return EXIT_ERROR
    report.warnings.extend(spec.audits.get("warnings", []))
    verified = None
    if verify or certify:
        try:
            verified = verify_report(report, spec.kernel, spec.nonlinearity, spec.solver, spec.quadrature)
        except MildSolveError as exc:
            write_trajectory_csv(out / f"{spec.id}.trajectory.csv", report.global_trajectory)
            write_json(report_path, report_to_dict(spec, report, False, exc))
            return EXIT_VERIFY_FAILED if verify else EXIT_ERROR
    write_trajectory_csv(out / f"{spec.id}.trajectory.csv", report.global_trajectory)
    write_json(report_path, report_to_dict(spec, report, verified))
    if plot:
        write_plot_csv(out / f"{spec.id}.plot.csv", report.blowup_criterion_trace)
    return exit_code(report, verify, verified)
