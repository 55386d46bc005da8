"""Command-line entry point: ``mildsolve {solve,verify,bench,ml}``."""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from .config import EXIT_ERROR, load_problem, run
from .errors import MildSolveError
from .specialfn import gamma, ml_gronwall


def _diagnostic(exc: Exception, path) -> dict:
    out = {"path": str(path), "error": {"type": type(exc).__name__, "message": str(exc)}}
    field = getattr(exc, "field", None)
    if field is not None:
        out["error"]["field"] = field
    return out


def _solve_one(path, output_dir, verify: bool, certify: bool, plot: bool) -> int:
    try:
        spec = load_problem(path)
    except MildSolveError as exc:
        print(json.dumps(_diagnostic(exc, path)), file=sys.stderr)
        return EXIT_ERROR
    return run(spec, output_dir, verify=verify, certify=certify, plot=plot)


def _bench_job(args) -> tuple[str, int]:
    path, output_dir, verify = args
    return str(path), _solve_one(path, output_dir, verify, False, False)


def _workers(requested: int | None) -> int:
    n = requested or os.cpu_count() or 1
    cap = os.environ.get("MILDSOLVE_THREADS")
    if cap:
        try:
            n = min(n, max(1, int(cap)))
        except ValueError:
            pass
    return max(1, n)


def _cmd_solve(a) -> int:
    return _solve_one(a.problem, a.output, a.verify, a.certify, a.plot)


def _cmd_verify(a) -> int:
    return _solve_one(a.problem, a.output, True, False, a.plot)


def _cmd_bench(a) -> int:
    specs = sorted(Path(a.directory).glob("*.toml"))
    if not specs:
        print(f"no *.toml problem files in {a.directory}", file=sys.stderr)
        return EXIT_ERROR
    jobs = [(p, a.output, a.verify) for p in specs]
    workers = min(_workers(a.workers), len(jobs))
    if workers == 1:
        results = [_bench_job(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_bench_job, jobs))
    for path, code in results:
        print(json.dumps({"problem": path, "exit": code}))
    return max(code for _, code in results)


def _cmd_ml(a) -> int:
    try:
        if a.gamma is not None:
            print(repr(gamma(a.gamma)))
        if a.x is not None:
            print(repr(ml_gronwall(a.r, a.x, a.series_tol, a.max_terms)))
    except MildSolveError as exc:
        print(json.dumps({"error": {"type": type(exc).__name__, "message": str(exc)}}), file=sys.stderr)
        return EXIT_ERROR
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mildsolve", description="Certified solver for mild evolution equations.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("solve", help="solve one problem file")
    s.add_argument("problem")
    s.add_argument("-o", "--output", default=".", help="output directory (default: .)")
    s.add_argument("--verify", action="store_true", help="compute certificates; failure exits 3")
    s.add_argument("--certify", action="store_true", help="compute certificates without affecting the exit code")
    s.add_argument("--plot", action="store_true", help="also write <id>.plot.csv")
    s.set_defaults(func=_cmd_solve)

    v = sub.add_parser("verify", help="solve with mandatory certificates")
    v.add_argument("problem")
    v.add_argument("-o", "--output", default=".")
    v.add_argument("--plot", action="store_true")
    v.set_defaults(func=_cmd_verify)

    b = sub.add_parser("bench", help="solve every *.toml in a directory in parallel")
    b.add_argument("directory")
    b.add_argument("-o", "--output", default=".")
    b.add_argument("-j", "--workers", type=int, default=None, help="worker processes (capped by MILDSOLVE_THREADS)")
    b.add_argument("--verify", action="store_true")
    b.set_defaults(func=_cmd_bench)

    m = sub.add_parser("ml", help="evaluate Gamma and the generalised exponential")
    m.add_argument("--r", type=float, default=1.0)
    m.add_argument("--x", type=float, default=None)
    m.add_argument("--gamma", type=float, default=None, metavar="X")
    m.add_argument("--series-tol", type=float, default=1e-14)
    m.add_argument("--max-terms", type=int, default=10_000)
    m.set_defaults(func=_cmd_ml)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
