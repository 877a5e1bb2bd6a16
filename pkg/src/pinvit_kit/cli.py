"""Command-line front end: ``solve``, ``verify`` and ``sweep``.

Options may also come from a flat ``key=value`` file given with ``--config``;
flags on the command line take precedence.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .errors import MissingSpectralDataError
from .inexact import (
    SolverConfig,
    _jsonable,
    run_metadata,
    solve,
    write_log_csv,
    write_log_json,
)
from .linop import ScaledOperator
from .problems import parse_h, problem_from_id

OUT_ENV = "PINVIT_KIT_OUT_DIR"
SWEEP_FIELDS = ("param", "lambda1_discrete", "steps_to_tau", "worst_ratio", "q_squared")
_DEFAULTS = {
    "problem": "interval",
    "h": None,
    "n": None,
    "tau": 1e-8,
    "gamma_scale": 1.0,
    "seed": 0,
    "jobs": 1,
    "preconditioner": "multilevel",
    "max_steps": 10_000,
    "trials": None,
    "inject_violation": None,
    "param": "h",
    "values": "",
}
_TYPES = {"n": int, "tau": float, "gamma_scale": float, "seed": int, "jobs": int,
          "max_steps": int, "trials": int, "inject_violation": float}


def read_config(path):
    """Parse a ``key=value`` file (``#`` comments, dashes or underscores in keys)."""
    out = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected key=value")
            key, value = (s.strip() for s in line.split("=", 1))
            out[key.replace("-", "_")] = value
    return out


def _resolve(args):
    """Merge command line, config file and defaults (in that order of precedence)."""
    cfg = read_config(args.config) if getattr(args, "config", None) else {}
    for key, default in _DEFAULTS.items():
        if not hasattr(args, key):
            continue
        if getattr(args, key) is None:
            value = cfg.get(key, default)
            if value is not None and key in _TYPES and isinstance(value, str):
                value = _TYPES[key](value)
            setattr(args, key, value)
    if getattr(args, "out", None) is None:
        args.out = cfg.get("out") or os.environ.get(OUT_ENV) or "pinvit_out"
    return args


def _build_problem(problem, h=None, n=None, preconditioner="multilevel", seed=0):
    if problem.startswith("random:"):
        from .verification import random_pencil

        size = int(problem.split(":", 1)[1])
        rng = np.random.default_rng(seed)
        for _ in range(100):
            pen = random_pencil(rng, n_max=size)
            if pen.n == size:
                break
        return pen.problem()
    return problem_from_id(problem, h=h, n=n, preconditioner=preconditioner, seed=seed)


def _config(args):
    return SolverConfig(tau=args.tau, constant_scale=args.gamma_scale, seed=args.seed,
                        max_outer_steps=args.max_steps)


def _reference_error(problem, mu):
    ref = problem.meta.get("reference")
    if ref is None:
        return None, None
    return ref, abs(mu - ref) / ref


def write_dof_table(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("dof", "h", "mu", "reference", "relative_error"))
        for r in rows:
            w.writerow([_fmt(x) for x in r])


def _fmt(x):
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return ""
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


# ---------------------------------------------------------------- solve


def cmd_solve(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    problem = _build_problem(args.problem, args.h, args.n, args.preconditioner, args.seed)
    result = solve(problem, None, _config(args))
    wall = time.perf_counter() - t0
    meta = run_metadata(problem, result, args.problem)
    write_log_csv(out / "convergence.csv", result.log)
    write_log_json(out / "convergence.json", result.log, meta)
    ref, err = _reference_error(problem, result.mu)
    write_dof_table(out / "dof_vs_error.csv",
                    [(problem.dim, problem.meta.get("h"), result.mu, ref, err)])
    summary = {
        "problem": args.problem,
        "dof": problem.dim,
        "mu": result.mu,
        "rho": result.rho,
        "steps": result.steps,
        "restarts": result.restarts,
        "kappa_min": result.kappa_min,
        "kappa_max": result.kappa_max,
        "reference": ref,
        "relative_error": err,
        "lambda1_closed_form": problem.meta.get("lambda1"),
        "wall_time": wall,
    }
    with open(out / "summary.json", "w") as fh:
        json.dump(_jsonable(summary), fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"problem   {args.problem} ({problem.dim} unknowns)")
    print(f"mu        {result.mu:.12g}")
    print(f"rho       {result.rho:.3e}")
    print(f"steps     {result.steps}")
    if ref is not None:
        print(f"reference {ref:.12g} (relative difference {err:.3e})")
    print(f"kappa     min {result.kappa_min:.3e} max {result.kappa_max:.3e}")
    print(f"wall time {wall:.2f} s")
    print(f"output    {out}")
    bad = sum(r.bound_ok == "false" for r in result.log)
    if bad:
        print(f"warning: {bad} logged steps violate the contraction bound", file=sys.stderr)
    return 0


# ---------------------------------------------------------------- verify


def cmd_verify(args):
    from .verification import check_logs, format_report, run_suites

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.trials == 0:
        warnings.warn("trials=0: no checks are run and the result is vacuous", stacklevel=1)
        print("warning: trials=0, all suites pass vacuously", file=sys.stderr)
    results = run_suites(seed=args.seed, trials=args.trials, suites=args.suite,
                         inject=args.inject_violation)
    if args.check_log:
        results.append(check_logs(args.check_log))
    report = format_report(results, args.seed, header=f"pinvit-kit {__version__} verify")
    sys.stdout.write(report)
    (out / "verify_report.txt").write_text(report)
    failed = [r for r in results if not r.passed]
    cx_path = out / "counterexample.json"
    if failed:
        with open(cx_path, "w") as fh:
            json.dump(_jsonable(failed[0].counterexample), fh, indent=1, sort_keys=True)
            fh.write("\n")
        print(f"first counterexample written to {cx_path}", file=sys.stderr)
        return 1
    if cx_path.exists():
        cx_path.unlink()
    return 0


# ---------------------------------------------------------------- sweep


def _parse_values(param, text):
    items = [s.strip() for s in str(text or "").split(",") if s.strip()]
    if param == "h":
        return [parse_h(s) for s in items]
    return [float(s) for s in items]


def sweep_point(problem_id, param, value, tau, seed, gamma_scale, preconditioner="multilevel",
                base_h=None, n=None):
    """One sweep row: solve and audit the observed per-step contraction."""
    if param == "h":
        problem = _build_problem(problem_id, value, None, preconditioner, seed)
    else:
        problem = _build_problem(problem_id, base_h, n, preconditioner, seed)
        P = ScaledOperator(problem.P, 1.0 / value)
        problem = problem.with_preconditioner(P)
        problem = problem.with_meta(gamma_p=None)
    meta = problem.meta
    lam = (meta.get("lambda1"), meta.get("lambda2"))
    if None in lam:
        if problem.dim > 2000:
            raise MissingSpectralDataError("sweep needs known lambda1/lambda2")
        from .oracle import dense_eigensolve

        rep = dense_eigensolve(problem.A.dense(), problem.E.dense())
        lam = (rep.lambda1, rep.lambda2)
        problem = problem.with_meta(lambda1=lam[0], lambda2=lam[1])
    res = solve(problem, None, SolverConfig(tau=tau, seed=seed, constant_scale=gamma_scale))
    q = 1.0 - (1.0 - res.config.gamma) * (1.0 - lam[0] / lam[1])
    worst = -math.inf
    prev = None
    for rec in res.log:
        if prev is not None and lam[0] < prev < lam[1] and rec.status == "stepped":
            rb = (prev - lam[0]) / (lam[1] - prev)
            ra = max(rec.mu - lam[0], 0.0) / (lam[1] - rec.mu)
            if rb > 1e-10:
                worst = max(worst, ra / rb)
        prev = rec.mu
    return {
        "param": value,
        "lambda1_discrete": res.mu,
        "steps_to_tau": res.steps,
        "worst_ratio": worst if math.isfinite(worst) else math.nan,
        "q_squared": q * q,
        "dof": problem.dim,
        "h": meta.get("h"),
        "reference": meta.get("reference"),
    }


def _sweep_task(kw):
    try:
        return sweep_point(**kw), None
    except Exception as exc:  # reported per point, the sweep continues
        return None, f"{type(exc).__name__}: {exc}"


def cmd_sweep(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    values = sorted(_parse_values(args.param, args.values),
                    reverse=args.param == "h")
    tasks = [dict(problem_id=args.problem, param=args.param, value=v, tau=args.tau,
                  seed=args.seed, gamma_scale=args.gamma_scale,
                  preconditioner=args.preconditioner,
                  base_h=args.h, n=args.n) for v in values]
    if args.jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=min(args.jobs, len(tasks))) as ex:
            results = list(ex.map(_sweep_task, tasks))
    else:
        results = [_sweep_task(t) for t in tasks]
    status = 0
    with open(out / "sweep.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SWEEP_FIELDS)
        for task, (row, err) in zip(tasks, results):
            if row is None:
                status = 1
                print(f"sweep point {task['value']!r} failed: {err}", file=sys.stderr)
                w.writerow([_fmt(task["value"])] + [""] * (len(SWEEP_FIELDS) - 1))
            else:
                w.writerow([_fmt(row[k]) for k in SWEEP_FIELDS])
            fh.flush()
    ok_rows = [r for r, _ in results if r is not None]
    if args.param == "h":
        write_dof_table(out / "dof_vs_error.csv", [
            (r["dof"], r["h"], r["lambda1_discrete"], r["reference"],
             None if r["reference"] is None else abs(r["lambda1_discrete"] - r["reference"]) / r["reference"])
            for r in ok_rows])
    sys.stdout.write((out / "sweep.csv").read_text())
    return status


# ---------------------------------------------------------------- parser


def build_parser():
    p = argparse.ArgumentParser(prog="pinvit-kit", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="key=value file with defaults for these options")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./pinvit_out)")

    def problem_opts(sp):
        sp.add_argument("--problem", help="interval, rectangle, lshape, diag:a,b,..., "
                                          "random:N or mm:DIR (default interval)")
        sp.add_argument("--h", help="mesh width, e.g. 0.25, 1/64 or 2^-6")
        sp.add_argument("--n", type=int, help="interior nodes (interval only)")
        sp.add_argument("--tau", type=float, help="target residual accuracy (default 1e-8)")
        sp.add_argument("--gamma-scale", dest="gamma_scale", type=float,
                        help="relaxation factor in (0, 1] for the step-driver constants")
        sp.add_argument("--preconditioner", choices=("multilevel", "jacobi", "identity"))
        sp.add_argument("--max-steps", dest="max_steps", type=int)

    s = sub.add_parser("solve", help="compute the smallest eigenpair")
    common(s)
    problem_opts(s)
    s.set_defaults(func=cmd_solve)

    v = sub.add_parser("verify", help="run the randomised bound checks")
    common(v)
    v.add_argument("--trials", type=int, help="trials per suite (default: per-suite counts)")
    v.add_argument("--suite", action="append", help="restrict to this suite (repeatable)")
    v.add_argument("--inject-violation", dest="inject_violation", type=float,
                   help="make approximate applies err by this multiple of eps")
    v.add_argument("--check-log", dest="check_log", action="append",
                   help="also fail on bound_ok=false rows of this convergence CSV")
    v.set_defaults(func=cmd_verify)

    w = sub.add_parser("sweep", help="solve over a range of mesh widths or dampings")
    common(w)
    problem_opts(w)
    w.add_argument("--param", choices=("h", "damping"))
    w.add_argument("--values", help="comma-separated parameter values (empty: no rows)")
    w.add_argument("--jobs", type=int, help="concurrent sweep points")
    w.set_defaults(func=cmd_sweep)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    args = _resolve(args)
    try:
        return args.func(args)
    except Exception as exc:  # surfaced as a diagnostic with nonzero exit
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
