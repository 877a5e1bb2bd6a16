"""Acceptance suite: one test per criterion, each printing a single PASS/FAIL line."""
import math
import time

import numpy as np
import pytest

from pinvit_kit import oracle
from pinvit_kit.cli import main
from pinvit_kit.inexact import (
    ExactPolicy,
    SolverConfig,
    TruncationPolicy,
    kappa_floor,
    ppinvit_step,
    random_start,
    resolve_config,
    solve,
)
from pinvit_kit.linop import ScaledOperator
from pinvit_kit.problems import LSHAPE_REFERENCE, problem_from_id
from pinvit_kit.verification import run_suites


@pytest.fixture
def report(capsys):
    def emit(number, ok, detail):
        with capsys.disabled():
            print(f"\n[acceptance {number}] {'PASS' if ok else 'FAIL'}: {detail}")
        return ok
    return emit


def _suites(names, trials, seed=0):
    t0 = time.perf_counter()
    res = run_suites(seed=seed, trials=trials, suites=names)
    return res, time.perf_counter() - t0


def _summary(results):
    return "; ".join(f"{r.name} {r.checks} checks, {r.failures} failures, worst {r.worst:.2e}"
                     for r in results)


def test_exact_contraction_bound(report):
    res, wall = _suites(["contraction_exact"], 1000)
    ok = all(r.passed for r in res) and res[0].checks >= 1000 and wall < 60
    assert report(1, ok, f"{_summary(res)}; {wall:.1f} s")


def test_perturbed_contraction_bound(report):
    res, wall = _suites(["contraction_perturbed"], 1000)
    ok = all(r.passed for r in res) and res[0].checks >= 1000 and wall < 60
    assert report(2, ok, f"{_summary(res)}; {wall:.1f} s")


def test_angle_sandwich_and_temple_kato(report):
    res, wall = _suites(["angle_sandwich", "temple_kato"], 500)
    ok = all(r.passed for r in res) and all(r.trials == 500 for r in res)
    assert report(3, ok, f"{_summary(res)}; {wall:.1f} s")


def test_model_iteration_equivalence(report):
    res, wall = _suites(["model_equivalence"], 100)
    # checks are normalised by 1e-10 relative A-norm differences
    ok = res[0].passed and res[0].worst <= 1e-10
    assert report(4, ok, f"{_summary(res)}; {wall:.1f} s")


def test_perturbation_bounds(report):
    names = ["rayleigh_error", "residual_error", "estimator_sandwich", "accuracy_implication"]
    res, wall = _suites(names, 500)
    ok = all(r.passed for r in res) and all(r.trials == 500 for r in res)
    assert report(5, ok, f"{_summary(res)}; {wall:.1f} s")


def test_step_driver_terminates_with_stable_kappa(report):
    cases = [("diag(1,2,3), Jacobi P", problem_from_id("diag:1,2,3"), np.ones(3) / math.sqrt(3)),
             ("interval n=63, multilevel P",
              problem_from_id("interval", n=63, preconditioner="multilevel"), None)]
    t0 = time.perf_counter()
    details, ok = [], True
    for label, pr, v0 in cases:
        res = solve(pr, v0, SolverConfig(tau=1e-8))
        rho = oracle.rho(pr.A.dense(), pr.E.dense(), res.v)
        floor = kappa_floor(res.config)
        kappas = [r.kappa for r in res.log]
        above = all(k >= floor or r.epsilon == res.config.c0 for k, r in zip(kappas, res.log))
        ok &= res.converged and rho <= 1e-8 and min(kappas) > 0 and above
        details.append(f"{label}: {res.steps} steps, oracle rho {rho:.2e}, "
                       f"kappa in [{min(kappas):.2e}, {max(kappas):.2e}] >= floor {floor:.2e}")
    wall = time.perf_counter() - t0
    ok &= wall < 10
    assert report(6, ok, "; ".join(details) + f"; {wall:.1f} s")


def test_lshape_reference_value(report):
    t0 = time.perf_counter()
    mus = {}
    for h in ("2^-5", "2^-6"):
        pr = problem_from_id("lshape", h=h, preconditioner="multilevel")
        mus[h] = solve(pr, None, SolverConfig(tau=1e-6)).mu
    wall = time.perf_counter() - t0
    ref = LSHAPE_REFERENCE
    rel = abs(mus["2^-6"] - ref) / ref
    improving = abs(mus["2^-6"] - ref) < abs(mus["2^-5"] - ref)
    ok = rel <= 0.05 and improving and wall < 120
    assert report(7, ok, f"lambda1(2^-5) = {mus['2^-5']:.6f}, lambda1(2^-6) = {mus['2^-6']:.6f}, "
                         f"relative difference {rel:.2e} to {ref}; {wall:.1f} s")


def _factors(problem, policy, scale, steps=30):
    p = problem.with_approx(policy)
    cfg, _ = resolve_config(p, SolverConfig(tau=1e-300, constant_scale=scale))
    lam1 = problem.meta["lambda1"]
    v = random_start(p.dim, 0)
    v = v / math.sqrt(float(p.E.apply(v) @ v))
    mu = [float(p.A.apply(v) @ v)]
    perturbed = 0
    for _ in range(steps):
        out = ppinvit_step(p, v, cfg)
        assert out.status == "stepped"
        perturbed += bool(np.any(out.xi))
        v = out.vector
        mu.append(float(p.A.apply(v) @ v) / float(p.E.apply(v) @ v))
    err = np.array(mu) - lam1
    assert np.all(err > 0)
    f = err[1:] / err[:-1]
    return float(np.exp(np.mean(np.log(f)))), perturbed


def test_truncated_apply_keeps_contraction(report):
    base = problem_from_id("interval", n=63, preconditioner="multilevel")
    # damping keeps the iteration above round-off for 30 steps (gamma_P about 0.73)
    pr = base.with_preconditioner(ScaledOperator(base.P, 1 / 0.3)).with_meta(gamma_p=None)
    details, ok = [], True
    for scale in (1.0, 1e-3):
        exact, _ = _factors(pr, ExactPolicy(), scale)
        trunc, perturbed = _factors(pr, TruncationPolicy(), scale)
        diff = abs(trunc / exact - 1)
        ok &= diff <= 0.10 and perturbed > 0
        details.append(f"scale {scale:g}: geometric mean factor {trunc:.4f} truncated vs "
                       f"{exact:.4f} exact (difference {diff:.1e}, {perturbed}/30 steps perturbed)")
    assert report(8, ok, "; ".join(details))


def test_verify_is_deterministic(report, tmp_path, capsys):
    codes = [main(["verify", "--seed", "0", "--out", str(tmp_path / name)]) for name in ("a", "b")]
    capsys.readouterr()
    a = (tmp_path / "a" / "verify_report.txt").read_bytes()
    b = (tmp_path / "b" / "verify_report.txt").read_bytes()
    ok = a == b and codes == [0, 0]
    assert report(9, ok, f"two default-seed verify runs: exit codes {codes}, "
                         f"reports {'byte-identical' if a == b else 'differ'} ({len(a)} bytes)")
