"""Randomised checks of the convergence bounds against the dense oracle.

Each suite draws random symmetric positive definite pencils, runs the
solver-side routine and compares with quantities computed by
:mod:`pinvit_kit.oracle`. Results are deterministic for a given seed.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import oracle
from .inexact import (
    Metric,
    SaturatingPolicy,
    SolverConfig,
    TruncationPolicy,
    accuracy_test,
    constants_for,
    evaluate,
    read_log_csv,
    solve,
)
from .errors import NotPositiveError
from .linop import SpectralConstants
from .pinvit import angle_bounds, model_rayleigh, model_step, pinvit_step, temple_kato_gap
from .problems import dense_problem

DEFAULT_TRIALS = {
    "contraction_exact": 1000,
    "contraction_perturbed": 1000,
    "angle_sandwich": 500,
    "temple_kato": 500,
    "model_equivalence": 100,
    "rayleigh_error": 500,
    "residual_error": 500,
    "estimator_sandwich": 500,
    "accuracy_implication": 500,
    "step_driver": 5,
}
SUITES = tuple(DEFAULT_TRIALS)
RTOL = 1e-10


@dataclass
class SuiteResult:
    """Outcome of one suite; ``worst`` is the largest normalised violation margin."""

    name: str
    trials: int
    checks: int = 0
    failures: int = 0
    worst: float = -math.inf
    counterexample: dict | None = None
    notes: list = field(default_factory=list)

    @property
    def passed(self):
        return self.failures == 0

    def record(self, lhs, rhs, scale=1.0, tol=RTOL, info=None, premise=False):
        """Check ``lhs <= rhs`` up to ``tol * scale``; keep the first failure.

        Premise checks (accuracy contracts) count as checks but do not enter
        ``worst``.
        """
        self.checks += 1
        if not premise:
            self.worst = max(self.worst, (lhs - rhs) / max(scale, 1e-300))
        if lhs > rhs + tol * scale or not (math.isfinite(lhs) and math.isfinite(rhs)):
            self.failures += 1
            if self.counterexample is None:
                self.counterexample = dict(info or {}, lhs=lhs, rhs=rhs, suite=self.name)
            return False
        return True


# ---------------------------------------------------------------- random instances


@dataclass
class Pencil:
    A: np.ndarray
    E: np.ndarray
    P: np.ndarray
    spectrum: oracle.SpectrumReport
    gamma_p: float

    @property
    def n(self):
        return self.A.shape[0]

    def problem(self, approx=None):
        pr = dense_problem(self.A, self.E, self.P, name="random",
                           spectrum=(self.spectrum.lambda1, self.spectrum.lambda2))
        pr = pr.with_meta(gamma_p=self.gamma_p)
        return pr.with_approx(approx) if approx is not None else pr

    def payload(self):
        return {"A": self.A.tolist(), "E": self.E.tolist(), "P": self.P.tolist(),
                "lambda1": self.spectrum.lambda1, "lambda2": self.spectrum.lambda2,
                "gamma_p": self.gamma_p}


def _spd(rng, n, shift=1.0):
    G = rng.standard_normal((n, n))
    d = np.exp(rng.uniform(-1.0, 1.0, n))
    return (G.T @ G) * np.outer(d, d) / n + shift * np.diag(d * d)


def random_preconditioner(rng, A, gamma):
    """SPD ``P`` with the spectrum of P^{-1}A spread over [1 - gamma, 1 + gamma]."""
    n = A.shape[0]
    L = np.linalg.cholesky(A)
    theta = rng.uniform(1.0 - gamma, 1.0 + gamma, n)
    theta[0], theta[-1] = 1.0 - gamma, 1.0 + gamma
    Q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    M = (Q / theta) @ Q.T
    P = L @ M @ L.T
    return 0.5 * (P + P.T)


def random_pencil(rng, n_max=50, gamma_max=0.9, kind=None):
    """Random pencil with ``n <= n_max`` and a preconditioner of gamma_P <= gamma_max."""
    n = int(rng.integers(2, n_max + 1))
    A = _spd(rng, n)
    E = _spd(rng, n)
    kind = kind or rng.choice(["exact", "spectral", "spectral", "jacobi"])
    if kind == "exact":
        P = A.copy()
    elif kind == "jacobi":
        d = np.diag(A)
        w = oracle.dense_eigensolve(A, np.diag(d)).eigenvalues
        P = np.diag(d * 0.5 * (w[0] + w[-1]))
    else:
        P = random_preconditioner(rng, A, rng.uniform(0.0, gamma_max * 0.999))
    gp = 0.0 if kind == "exact" else oracle.gamma_p(A, P)
    if gp > gamma_max:
        P = random_preconditioner(rng, A, rng.uniform(0.0, gamma_max * 0.999))
        gp = oracle.gamma_p(A, P)
    spec = oracle.dense_eigensolve(A, E)
    if spec.lambda2 is None or spec.lambda2 <= spec.lambda1 * (1 + 1e-8):
        return random_pencil(rng, n_max, gamma_max, kind)
    return Pencil(A, E, P, spec, gp)


def start_below_lambda2(rng, pencil):
    """Random vector with lambda1 < mu(v) < lambda2 (u1 plus a random tail)."""
    u1 = pencil.spectrum.eigenvectors[:, 0]
    lam1, lam2 = pencil.spectrum.lambda1, pencil.spectrum.lambda2
    z = rng.standard_normal(pencil.n)
    z /= math.sqrt(z @ pencil.E @ z)
    t = 10.0 ** rng.uniform(-3.0, 1.0)
    for _ in range(200):
        v = u1 + t * z
        mu = oracle.rayleigh(pencil.A, pencil.E, v)
        if lam1 < mu < lam2:
            return v / math.sqrt(v @ pencil.E @ v)
        t *= 0.5
    return None


def exact_constants(pencil):
    """Spectral constants measured exactly by the oracle (no safety margin)."""
    ap = oracle.dense_eigensolve(pencil.A, pencil.P).eigenvalues
    ep = oracle.dense_eigensolve(pencil.E, pencil.P).eigenvalues
    return SpectralConstants(
        sigma0=float(ap[0]), sigma1=float(ap[-1]), alpha=math.sqrt(float(ep[-1])),
        gammaP=min(pencil.gamma_p, 1 - 1e-12),
        lambda1=pencil.spectrum.lambda1, lambda2=pencil.spectrum.lambda2)


# ---------------------------------------------------------------- suites


def _contraction(result, rng, trials, perturbed, steps=4):
    for trial in range(trials):
        pen = random_pencil(rng)
        pr = pen.problem()
        lam1, lam2 = pen.spectrum.lambda1, pen.spectrum.lambda2
        v = start_below_lambda2(rng, pen)
        if v is None:
            result.notes.append(f"trial {trial}: no admissible start")
            continue
        gx = (1.0 - pen.gamma_p) / 2.0
        gamma = pen.gamma_p + gx if perturbed else pen.gamma_p
        for k in range(steps):
            mu = oracle.rayleigh(pen.A, pen.E, v)
            if not lam1 < mu < lam2 or mu - lam1 <= 1e-12 * lam1:
                break
            xi = None
            if perturbed:
                xi = _perturbation(rng, pen, v, gx, k)
            step = pinvit_step(pr.A, pr.E, pr.P, v, xi, gamma=gamma, lambda1=lam1, lambda2=lam2,
                               gamma_xi=gx if perturbed else None, compute_rho=False)
            row = oracle.audit_step(pr, v, step.next, gamma, spectrum=pen.spectrum, slack=0.0)
            info = {"trial": trial, "step": k, "v": v.tolist(), "gamma": gamma,
                    "xi": None if xi is None else xi.tolist(), **pen.payload()}
            if row.status != "n/a":
                result.record(row.ratio_after, row.q_squared * row.ratio_before,
                              tol=1e-10, info=info)
            v = step.next


def _perturbation(rng, pen, v, gx, k):
    """``xi`` with ``||xi||_A = gx * rho(v) * ||v||_A`` in a random or structured direction."""
    A = pen.A
    mu = oracle.rayleigh(A, pen.E, v)
    r = A @ v - mu * (pen.E @ v)
    budget = gx * oracle.inverse_norm(A, r)
    choice = k % 4
    if choice == 0:
        d = rng.standard_normal(v.size)
    elif choice == 1:
        d = np.linalg.solve(pen.P, r) * rng.choice([-1.0, 1.0])
    elif choice == 2:
        d = pen.spectrum.eigenvectors[:, 1] * rng.choice([-1.0, 1.0])
    else:
        d = v * rng.choice([-1.0, 1.0])
    nd = oracle.a_norm(A, d)
    return d * (budget / nd) if nd > 0 else np.zeros_like(v)


def suite_contraction_exact(rng, trials):
    res = SuiteResult("contraction_exact", trials)
    _contraction(res, rng, trials, perturbed=False)
    return res


def suite_contraction_perturbed(rng, trials):
    res = SuiteResult("contraction_perturbed", trials)
    _contraction(res, rng, trials, perturbed=True)
    return res


def suite_angle_sandwich(rng, trials):
    res = SuiteResult("angle_sandwich", trials)
    for trial in range(trials):
        pen = random_pencil(rng, n_max=12)
        v = start_below_lambda2(rng, pen)
        if v is None:
            continue
        lam1, lam2 = pen.spectrum.lambda1, pen.spectrum.lambda2
        mu = oracle.rayleigh(pen.A, pen.E, v)
        rho = oracle.rho(pen.A, pen.E, v)
        s = oracle.sin_angle(pen.A, v, pen.spectrum.eigenspace(0))
        b = angle_bounds(mu, lam1, lam2, rho)
        info = {"trial": trial, "v": v.tolist(), **pen.payload()}
        res.record(b.lower, s, tol=1e-12, info=dict(info, side="lower"))
        res.record(s, b.upper, tol=1e-12, info=dict(info, side="upper"))
    return res


def suite_temple_kato(rng, trials):
    """Temple-Kato for B = A^{-1}E in the A-inner product and for random diagonal B."""
    res = SuiteResult("temple_kato", trials)
    for trial in range(trials):
        if trial % 2 == 0:
            pen = random_pencil(rng, n_max=12)
            A = pen.A
            B = np.linalg.solve(A, pen.E)
            mu1, mu2 = 1.0 / pen.spectrum.lambda1, 1.0 / pen.spectrum.lambda2
            x = rng.standard_normal(pen.n)
            lhs, rhs = temple_kato_gap(lambda y: B @ y, x, mu1, mu2, inner=lambda u, w: u @ A @ w)
            info = {"trial": trial, "x": x.tolist(), **pen.payload()}
        else:
            n = int(rng.integers(2, 20))
            d = np.sort(rng.uniform(0.01, 1.0, n))[::-1]
            if d[0] - d[1] <= 1e-12:
                continue
            x = rng.standard_normal(n)
            lhs, rhs = temple_kato_gap(lambda y: d * y, x, d[0], d[1])
            info = {"trial": trial, "x": x.tolist(), "B_diag": d.tolist()}
        res.record(lhs, rhs, scale=max(abs(rhs), 1e-300), tol=1e-10, info=info)
    return res


def suite_model_equivalence(rng, trials):
    res = SuiteResult("model_equivalence", trials)
    for trial in range(trials):
        pen = random_pencil(rng, n_max=30)
        pr = pen.problem()
        A = pen.A
        B = np.linalg.solve(A, pen.E)
        T = np.linalg.solve(pen.P, A)
        x = rng.standard_normal(pen.n)
        inner = lambda u, w: u @ A @ w  # noqa: E731
        y = model_step(lambda z: B @ z, lambda z: T @ z, x, inner=inner)
        raw = pinvit_step(pr.A, pr.E, pr.P, x, compute_rho=False).raw
        info = {"trial": trial, "x": x.tolist(), **pen.payload()}
        diff = oracle.a_norm(A, y - raw)
        res.record(diff, 0.0, scale=oracle.a_norm(A, raw), tol=1e-10, info=info)
        mu = oracle.rayleigh(A, pen.E, x)
        mu_model = model_rayleigh(lambda z: B @ z, x, inner=inner)
        res.record(abs(mu * mu_model - 1.0), 0.0, tol=1e-12, info=dict(info, check="mu"))
    return res


def _perturbed_draw(rng, inject):
    pen = random_pencil(rng, n_max=30)
    consts = exact_constants(pen)
    gx = (1.0 - consts.gammaP) / 2.0
    cfg = SolverConfig(gammaP=consts.gammaP, gammaXi=gx)
    c0, c1, c2, c3 = constants_for(consts, cfg)
    v = start_below_lambda2(rng, pen)
    if v is None:
        return None
    v = v * 10.0 ** rng.uniform(-2, 2)
    kind = int(rng.integers(0, 4))
    if inject is not None:
        policy = SaturatingPolicy(inject, mode="aligned", signs={"stiffness": 1.0, "mass": -1.0})
    elif kind == 0:
        policy = SaturatingPolicy(1.0, mode="aligned", signs={"stiffness": 1.0, "mass": -1.0})
    elif kind == 1:
        policy = SaturatingPolicy(1.0, mode="aligned", signs={"stiffness": -1.0, "mass": 1.0})
    elif kind == 2:
        policy = SaturatingPolicy(1.0, mode="random", seed=int(rng.integers(1 << 31)))
    else:
        policy = TruncationPolicy()
    pr = pen.problem(policy)
    metrics = (Metric(pr.P), Metric(pr.E))
    eps = c0 * 10.0 ** rng.uniform(-6.0, 0.0) if rng.random() < 0.8 else c0
    return pen, pr, consts, (c0, c1, c2, c3), gx, v, eps, metrics


def _contract(res, pr, v, ev, metrics, info):
    """Premise: the realised approximate applies honour their accuracy contract."""
    ma, me = metrics
    res.record(ma.dual(ev.Av - pr.A.apply(v)), ev.eps * ma.norm(v),
               scale=ev.eps * ma.norm(v), tol=1e-9, info=dict(info, check="contract A"), premise=True)
    res.record(me.dual(ev.Ev - pr.E.apply(v)), ev.eps * me.norm(v),
               scale=ev.eps * me.norm(v), tol=1e-9, info=dict(info, check="contract E"), premise=True)


def _bound_suite(name, rng, trials, inject, check):
    res = SuiteResult(name, trials)
    for trial in range(trials):
        draw = _perturbed_draw(rng, inject)
        if draw is None:
            continue
        pen, pr, consts, cs, gx, v, eps, metrics = draw
        info = {"trial": trial, "v": v.tolist(), "eps": eps, "policy": pr.approx.name,
                **pen.payload()}
        try:
            ev = evaluate(pr.A, pr.E, v, eps, metrics, pr.approx)
            _contract(res, pr, v, ev, metrics, info)
            check(res, pen, pr, consts, cs, gx, v, ev, metrics, info)
        except NotPositiveError as exc:
            res.record(math.inf, 0.0, info=dict(info, error=str(exc)), premise=True)
    return res


def _check_rayleigh(res, pen, pr, consts, cs, gx, v, ev, metrics, info):
    mu = oracle.rayleigh(pen.A, pen.E, v)
    res.record(abs(ev.mu_eps - mu), cs[1] * ev.eps, scale=cs[1] * ev.eps, info=info)


def _check_residual(res, pen, pr, consts, cs, gx, v, ev, metrics, info):
    mu = oracle.rayleigh(pen.A, pen.E, v)
    r = pen.A @ v - mu * (pen.E @ v)
    err = oracle.inverse_norm(pen.A, ev.r_eps - r) / oracle.a_norm(pen.A, v)
    res.record(err, cs[2] * ev.eps, scale=cs[2] * ev.eps, info=info)


def _rho_eps(pen, v, r_eps):
    return oracle.inverse_norm(pen.P, r_eps) / oracle.a_norm(pen.P, v)


def _check_estimator(res, pen, pr, consts, cs, gx, v, ev, metrics, info):
    rho = oracle.rho(pen.A, pen.E, v)
    re = _rho_eps(pen, v, ev.r_eps)
    gp, c2, eps = consts.gammaP, cs[2], ev.eps
    scale = max(rho, c2 * eps)
    res.record(re / (1 + gp) - c2 * eps, rho, scale=scale, info=dict(info, side="lower"))
    res.record(rho, re / (1 - gp) + c2 * eps, scale=scale, info=dict(info, side="upper"))


def _check_accuracy(res, pen, pr, consts, cs, gx, v, ev, metrics, info):
    """Whenever the accuracy test passes, the induced perturbation is within budget."""
    c0, c3 = cs[0], cs[3]
    mu = oracle.rayleigh(pen.A, pen.E, v)
    r = pen.A @ v - mu * (pen.E @ v)
    rho = oracle.rho(pen.A, pen.E, v)
    nv = oracle.a_norm(pen.A, v)
    # the drawn eps, then the eps where the halving loop would stop
    candidates = [ev]
    eps = c0
    for _ in range(200):
        e2 = evaluate(pr.A, pr.E, v, eps, metrics, pr.approx)
        if accuracy_test(eps, _rho_eps(pen, v, e2.r_eps), c3):
            candidates.append(e2)
            break
        eps *= 0.5
    for e in candidates:
        if not accuracy_test(e.eps, _rho_eps(pen, v, e.r_eps), c3):
            continue
        if e is not ev:
            _contract(res, pr, v, e, metrics, dict(info, eps=e.eps))
        xi = np.linalg.solve(pen.P, e.r_eps - r)
        res.record(oracle.a_norm(pen.A, xi) / nv, gx * rho, scale=max(gx * rho, 1e-300),
                   info=dict(info, eps=e.eps))


def suite_rayleigh_error(rng, trials, inject=None):
    return _bound_suite("rayleigh_error", rng, trials, inject, _check_rayleigh)


def suite_residual_error(rng, trials, inject=None):
    return _bound_suite("residual_error", rng, trials, inject, _check_residual)


def suite_estimator_sandwich(rng, trials, inject=None):
    return _bound_suite("estimator_sandwich", rng, trials, inject, _check_estimator)


def suite_accuracy_implication(rng, trials, inject=None):
    return _bound_suite("accuracy_implication", rng, trials, inject, _check_accuracy)


def suite_step_driver(rng, trials, tau=1e-8):
    """Full solves on small pencils: every logged step obeys the contraction bound."""
    res = SuiteResult("step_driver", trials)
    for trial in range(trials):
        if trial == 0:
            pr = dense_problem(np.diag([1.0, 2.0, 3.0]), None, None, name="diag123",
                               spectrum=(1.0, 2.0))
            v0 = np.ones(3) / math.sqrt(3.0)
            payload = {"A": np.diag([1.0, 2.0, 3.0]).tolist()}
        else:
            pen = random_pencil(rng, n_max=20)
            pr = pen.problem()
            v0 = start_below_lambda2(rng, pen)
            payload = pen.payload()
        out = solve(pr, v0, SolverConfig(tau=tau, seed=trial))
        info = {"trial": trial, **payload}
        for rec in out.log:
            res.record(1.0 if rec.bound_ok == "false" else 0.0, 0.0, tol=0.0,
                       info=dict(info, step=rec.step))
        res.record(oracle.rho(pr.A.dense(), pr.E.dense(), out.v), tau, scale=tau, tol=0.0,
                   info=dict(info, check="final rho"))
    return res


def check_logs(paths):
    """Every ``bound_ok=false`` row in the given CSV logs is a failure."""
    res = SuiteResult("solve_logs", len(paths))
    for p in paths:
        for row in read_log_csv(p):
            res.record(1.0 if row["bound_ok"] == "false" else 0.0, 0.0, tol=0.0,
                       info={"log": str(p), "step": int(row["step"])})
    return res


_RUNNERS = {
    "contraction_exact": suite_contraction_exact,
    "contraction_perturbed": suite_contraction_perturbed,
    "angle_sandwich": suite_angle_sandwich,
    "temple_kato": suite_temple_kato,
    "model_equivalence": suite_model_equivalence,
    "rayleigh_error": suite_rayleigh_error,
    "residual_error": suite_residual_error,
    "estimator_sandwich": suite_estimator_sandwich,
    "accuracy_implication": suite_accuracy_implication,
    "step_driver": suite_step_driver,
}
_INJECTABLE = {"rayleigh_error", "residual_error", "estimator_sandwich", "accuracy_implication"}


def run_suites(seed=0, trials=None, suites=None, inject=None):
    """Run the named suites (all by default) with per-suite seeded generators.

    ``trials`` overrides every suite's default count; ``inject`` is a factor
    (> 1 violates the contract) for the approximate applies of the
    perturbation-bound suites.
    """
    names = list(suites or SUITES)
    results = []
    for i, name in enumerate(SUITES):
        if name not in names:
            continue
        rng = np.random.default_rng([seed, i])
        n = DEFAULT_TRIALS[name] if trials is None else int(trials)
        if n == 0:
            res = SuiteResult(name, 0)
            res.notes.append("no trials run (vacuous pass)")
        elif name in _INJECTABLE:
            res = _RUNNERS[name](rng, n, inject=inject)
        else:
            res = _RUNNERS[name](rng, n)
        results.append(res)
    unknown = set(names) - set(SUITES)
    if unknown:
        raise ValueError(f"unknown suites: {sorted(unknown)}")
    return results


def format_report(results, seed, header=None):
    """Deterministic plain-text report (no timings)."""
    lines = []
    if header:
        lines.append(header)
    lines.append(f"seed {seed}")
    lines.append(f"{'suite':<24}{'trials':>8}{'checks':>9}{'failures':>10}{'worst':>13}  result")
    for r in results:
        worst = "-" if r.checks == 0 else f"{r.worst:.3e}"
        lines.append(f"{r.name:<24}{r.trials:>8}{r.checks:>9}{r.failures:>10}{worst:>13}  "
                     f"{'PASS' if r.passed else 'FAIL'}")
        for note in r.notes:
            lines.append(f"  note: {note}")
    ok = all(r.passed for r in results)
    lines.append(f"overall: {'PASS' if ok else 'FAIL'}")
    return "\n".join(lines) + "\n"
