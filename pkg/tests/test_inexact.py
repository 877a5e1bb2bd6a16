import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pinvit_kit import oracle
from pinvit_kit.errors import (
    HalvingLimitError,
    IterationLimitError,
    MissingSpectralDataError,
    NotPositiveError,
)
from pinvit_kit.inexact import (
    LOG_FIELDS,
    ExactPolicy,
    Metric,
    SaturatingPolicy,
    SolverConfig,
    TruncationPolicy,
    accuracy_test,
    apply_approx,
    approx_residual,
    constants_for,
    evaluate,
    kappa_floor,
    log_payload,
    metrics_for,
    perturbed_rayleigh,
    ppinvit_step,
    random_start,
    read_log_csv,
    residual_estimator,
    resolve_config,
    solve,
    write_log_csv,
    write_log_json,
)
from pinvit_kit.linop import DenseOperator, SpectralConstants
from pinvit_kit.pinvit import pinvit_step
from pinvit_kit.problems import dense_problem, fd_eigenvalues, fd_laplacian, GridSpec, problem_from_id

from conftest import random_spd


def _pencil(rng, n=10, P=None):
    A = random_spd(rng, n)
    E = random_spd(rng, n)
    pr = dense_problem(A, E, A if P is None else P)
    rep = oracle.dense_eigensolve(A, E)
    return pr.with_meta(lambda1=rep.lambda1, lambda2=rep.lambda2, gamma_p=0.0 if P is None else None), rep


def _below_lambda2(rng, rep):
    """Start vector with mu(v) <= lambda2, the premise of the error constants."""
    X = rep.eigenvectors
    v = X[:, 0] + rng.uniform(-3, 3) * X[:, 1]
    return v * rng.uniform(0.1, 10)


def _exact_consts(pr, rep):
    A, E, P = pr.A.dense(), pr.E.dense(), pr.P.dense()
    ap = oracle.dense_eigensolve(A, P).eigenvalues
    ep = oracle.dense_eigensolve(E, P).eigenvalues
    gp = max(abs(1 - ap[0]), abs(ap[-1] - 1))
    return SpectralConstants(sigma0=ap[0], sigma1=ap[-1], alpha=math.sqrt(ep[-1]),
                             gammaP=min(gp, 1 - 1e-12), lambda1=rep.lambda1, lambda2=rep.lambda2)


# ---------------------------------------------------------------- apply_approx


def test_apply_approx_zero_eps_is_exact(rng):
    A = DenseOperator(random_spd(rng, 6))
    v = rng.standard_normal(6)
    np.testing.assert_array_equal(apply_approx(A, v, 0.0), A.apply(v))


def test_apply_approx_large_eps_gives_zero(rng):
    A = DenseOperator(random_spd(rng, 6))
    m = Metric(A)
    v = rng.standard_normal(6)
    eps = m.dual(A.apply(v)) / m.norm(v)
    np.testing.assert_array_equal(apply_approx(A, v, eps * 1.0001, m), np.zeros(6))


def test_apply_approx_fd_truncation_within_budget():
    pr = fd_laplacian(GridSpec("interval", 1 / 16), preconditioner="jacobi")
    rng = np.random.default_rng(3)
    v = rng.random(15)
    mA, mE = metrics_for(pr)
    w = apply_approx(pr.A, v, 0.1, mA)
    exact = pr.A.apply(v)
    assert np.count_nonzero(w) < 15  # something was dropped
    kept = w != 0
    np.testing.assert_array_equal(w[kept], exact[kept])
    P = pr.P.dense()
    err = oracle.inverse_norm(P, w - exact)
    assert err <= 0.1 * oracle.a_norm(P, v) * (1 + 1e-12)
    # the dropped entries are those of smallest contribution
    contrib = exact**2 / np.diag(P)
    assert contrib[~kept].max() <= contrib[kept].min()


def test_apply_approx_ties_drop_lowest_index_first():
    M = DenseOperator(np.eye(4))
    v = np.ones(4)
    w = apply_approx(M, v, 0.505, Metric(M))  # budget 1.01 admits one unit entry
    np.testing.assert_array_equal(w, [0.0, 1.0, 1.0, 1.0])


@given(st.integers(0, 10_000), st.floats(0.0, 2.0))
def test_apply_approx_contract_property(seed, eps):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 12))
    A = DenseOperator(random_spd(rng, n))
    G = DenseOperator(random_spd(rng, n))
    m = Metric(G)
    v = rng.standard_normal(n)
    w = apply_approx(A, v, eps, m)
    err = oracle.inverse_norm(G.dense(), w - A.apply(v))
    assert err <= eps * oracle.a_norm(G.dense(), v) * (1 + 1e-9) + 1e-13


def test_saturating_policy_hits_budget(rng):
    A = DenseOperator(random_spd(rng, 5))
    m = Metric(A)
    v = rng.standard_normal(5)
    for mode in ("aligned", "random"):
        w = apply_approx(A, v, 0.3, m, SaturatingPolicy(1.0, mode=mode, seed=1))
        assert m.dual(w - A.apply(v)) == pytest.approx(0.3 * m.norm(v), rel=1e-10)
    with pytest.raises(ValueError):
        SaturatingPolicy(mode="sideways")


# ---------------------------------------------------------------- Rayleigh quotient and residual


def test_perturbed_rayleigh_exact_cases(rng):
    pr, rep = _pencil(rng, 8)
    v = rng.standard_normal(8)
    mu = oracle.rayleigh(pr.A.dense(), pr.E.dense(), v)
    assert perturbed_rayleigh(pr.A, pr.E, v, 0.0) == pytest.approx(mu, rel=1e-13)
    x = rep.eigenvectors[:, 0]
    assert perturbed_rayleigh(pr.A, pr.E, x, 0.0) == pytest.approx(rep.lambda1, rel=1e-10)


def test_perturbed_rayleigh_error_within_c1(rng):
    for _ in range(20):
        pr, rep = _pencil(rng, 10)
        cs = _exact_consts(pr, rep)
        c0, c1, c2, c3 = constants_for(cs, SolverConfig())
        v = _below_lambda2(rng, rep)
        mu = oracle.rayleigh(pr.A.dense(), pr.E.dense(), v)
        assert mu <= rep.lambda2 * (1 + 1e-12)
        for policy in (SaturatingPolicy(1.0), TruncationPolicy()):
            mu_eps = perturbed_rayleigh(pr.A, pr.E, v, 0.01, metrics_for(pr), policy)
            assert abs(mu_eps - mu) <= c1 * 0.01


def test_evaluate_rejects_nonpositive_denominator():
    A = DenseOperator(np.eye(2), kind="stiffness")
    E = DenseOperator(np.eye(2), kind="mass")
    v = np.array([1.0, 0.0])
    with pytest.raises(NotPositiveError):
        evaluate(A, E, v, 2.0, policy=SaturatingPolicy(1.0, signs={"mass": -1.0}))


def test_approx_residual_cases(rng):
    pr, rep = _pencil(rng, 7)
    A, E = pr.A.dense(), pr.E.dense()
    v = rng.standard_normal(7)
    mu = oracle.rayleigh(A, E, v)
    np.testing.assert_allclose(approx_residual(pr.A, pr.E, v, 0.0), A @ v - mu * (E @ v),
                               atol=1e-12 * np.abs(A).max() * np.abs(v).max())
    x = rep.eigenvectors[:, 0]
    assert np.linalg.norm(approx_residual(pr.A, pr.E, x, 0.0)) <= 1e-9 * np.linalg.norm(A @ x)


def test_approx_residual_error_within_c2():
    rng = np.random.default_rng(7)
    for _ in range(100):
        n = int(rng.integers(2, 12))
        pr, rep = _pencil(rng, n)
        cs = _exact_consts(pr, rep)
        c0, c1, c2, c3 = constants_for(cs, SolverConfig())
        v = _below_lambda2(rng, rep)
        eps = c0 * rng.random()
        A, E = pr.A.dense(), pr.E.dense()
        mu = oracle.rayleigh(A, E, v)
        r_exact = A @ v - mu * (E @ v)
        r_eps = approx_residual(pr.A, pr.E, v, eps, metrics_for(pr), SaturatingPolicy(1.0))
        lhs = oracle.inverse_norm(A, r_eps - r_exact) / oracle.a_norm(A, v)
        assert lhs <= c2 * eps * (1 + 1e-10)


def test_residual_estimator_cases(rng):
    pr, rep = _pencil(rng, 6)
    v = rng.standard_normal(6)
    assert residual_estimator(pr.P, v, np.zeros(6)) == 0.0
    r = approx_residual(pr.A, pr.E, v, 0.0)
    # P = A here
    assert residual_estimator(pr.P, v, r) == pytest.approx(
        oracle.rho(pr.A.dense(), pr.E.dense(), v), rel=1e-10)


def test_residual_estimator_sandwich(rng):
    checked = 0
    for _ in range(30):
        A, E = random_spd(rng, 9), random_spd(rng, 9)
        pr = dense_problem(A, E)  # centred Jacobi P
        rep = oracle.dense_eigensolve(A, E)
        pr = pr.with_meta(lambda1=rep.lambda1, lambda2=rep.lambda2)
        cs = _exact_consts(pr, rep)
        if cs.gammaP >= 0.999:
            continue
        c0, c1, c2, c3 = constants_for(cs, SolverConfig())
        v = _below_lambda2(rng, rep)
        r_eps = approx_residual(pr.A, pr.E, v, 1e-3, metrics_for(pr), SaturatingPolicy(1.0))
        rho_eps = residual_estimator(pr.P, v, r_eps)
        rho = oracle.rho(A, E, v)
        assert rho_eps / (1 + cs.gammaP) - c2 * 1e-3 <= rho * (1 + 1e-10)
        assert rho <= (rho_eps / (1 - cs.gammaP) + c2 * 1e-3) * (1 + 1e-10)
        checked += 1
    assert checked >= 20


# ---------------------------------------------------------------- constants and accuracy test


def test_constants_worked_example():
    cs = SpectralConstants(sigma0=1.0, sigma1=1.0, alpha=1.0, gammaP=0.0, lambda1=1.0, lambda2=2.0)
    c0, c1, c2, c3 = constants_for(cs, SolverConfig(gammaP=0.0, gammaXi=0.5))
    assert (c0, c1, c2) == (0.5, 8.0, 15.0)
    assert c3 == pytest.approx(1 / 45, rel=1e-15)


def test_constants_scale_relaxes_tests():
    cs = SpectralConstants(sigma0=1.0, sigma1=1.0, alpha=1.0, gammaP=0.0, lambda1=1.0, lambda2=2.0)
    c = constants_for(cs, SolverConfig(gammaP=0.0, gammaXi=0.5, constant_scale=0.1))
    assert c[0] == 0.5
    assert c[1] == pytest.approx(0.8) and c[2] == pytest.approx(1.5)
    assert c[3] == pytest.approx(10 / 45)


def test_c3_vanishes_as_gamma_p_tends_to_one():
    vals = []
    for gp in (0.5, 0.9, 0.99, 0.999999):
        cs = SpectralConstants(1.0, 1.0, 1.0, gp, 1.0, 2.0)
        vals.append(constants_for(cs, SolverConfig())[3])
    assert all(b < a for a, b in zip(vals, vals[1:]))
    assert vals[-1] < 1e-6


def test_constants_need_lambda2():
    cs = SpectralConstants(1.0, 1.0, 1.0, 0.0, 1.0, None)
    with pytest.raises(MissingSpectralDataError):
        constants_for(cs, SolverConfig())


@given(st.floats(1e-3, 10), st.floats(1, 100), st.floats(1e-2, 10), st.floats(0, 0.999),
       st.floats(1e-2, 1e3))
def test_constants_positive_and_finite(sigma0, spread, alpha, gp, lam2):
    cs = SpectralConstants(sigma0, sigma0 * spread, alpha, gp, lam2 / 2, lam2)
    for c in constants_for(cs, SolverConfig()):
        assert 0 < c < math.inf


def test_accuracy_test_boundaries():
    assert accuracy_test(0.0, 0.0, 0.1)
    assert accuracy_test(0.0, 3.0, 0.1)
    assert not accuracy_test(1e-12, 0.0, 0.1)
    c3, rho_eps = 1 / 45, 0.9
    assert accuracy_test(c3 * rho_eps, rho_eps, c3)


def test_config_validation():
    for bad in (dict(tau=0), dict(constant_scale=0), dict(constant_scale=2), dict(gammaP=1.0),
                dict(gammaP=0.6, gammaXi=0.5), dict(c3=-1), dict(max_outer_steps=0)):
        with pytest.raises(ValueError):
            SolverConfig(**bad)


# ---------------------------------------------------------------- step driver


def test_step_at_eigenvector_converges():
    pr = problem_from_id("diag:1,2,3")
    out = ppinvit_step(pr, np.array([1.0, 0.0, 0.0]), SolverConfig(tau=1e-8))
    assert out.status == "converged"
    assert out.rho_eps_final == 0.0


def test_step_with_exact_apply_matches_pinvit_step(rng):
    pr = dense_problem(random_spd(rng, 8), random_spd(rng, 8))  # centred Jacobi P
    pr = pr.with_approx(ExactPolicy())
    v = rng.standard_normal(8)
    cfg, _ = resolve_config(pr, SolverConfig(tau=1e-300))
    out = ppinvit_step(pr, v, cfg)
    ref = pinvit_step(pr.A, pr.E, pr.P, v)
    assert out.status == "stepped"
    np.testing.assert_allclose(out.vector, ref.next, rtol=1e-12, atol=1e-14)
    assert np.linalg.norm(out.xi) <= 1e-12 * np.linalg.norm(ref.raw)


def test_halving_limit_raises():
    pr = problem_from_id("diag:1,2,3")
    cfg = SolverConfig(tau=1e-300, max_halvings=0, c0=0.5, c1=1.0, c2=1.0, c3=1e-30,
                       gammaP=0.0, gammaXi=0.5)
    with pytest.raises(HalvingLimitError):
        ppinvit_step(pr, np.ones(3), cfg)


# ---------------------------------------------------------------- solve


def test_solve_diag_with_audit():
    pr = problem_from_id("diag:1,2,3")
    res = solve(pr, np.ones(3) / math.sqrt(3), SolverConfig(tau=1e-8))
    assert res.converged
    assert res.mu == pytest.approx(1.0, abs=1e-12)
    assert oracle.rho(np.diag([1.0, 2, 3]), None, res.v) <= 1e-8
    assert all(r.bound_ok in ("true", "n/a") for r in res.log)
    assert any(r.bound_ok == "true" for r in res.log)
    assert res.kappa_min > 0


@settings(max_examples=15)
@given(st.integers(0, 10_000))
def test_exit_eps_respects_kappa_floor(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 9))
    pr = dense_problem(random_spd(rng, n), random_spd(rng, n))
    rep = oracle.dense_eigensolve(pr.A.dense(), pr.E.dense())
    if rep.lambda2 is None or rep.lambda2 < rep.lambda1 * (1 + 1e-6):
        return
    pr = pr.with_meta(lambda1=rep.lambda1, lambda2=rep.lambda2)
    v0 = _below_lambda2(rng, rep) + 1e-3 * rng.standard_normal(n)
    res = solve(pr, v0, SolverConfig(tau=1e-6, max_outer_steps=20_000))
    floor = kappa_floor(res.config)
    assert res.rho <= 1e-6
    for r in res.log:
        assert r.kappa >= floor or r.epsilon == res.config.c0


def test_solve_from_eigenvector_returns_immediately():
    pr = problem_from_id("diag:1,2,3")
    res = solve(pr, np.array([1.0, 0, 0]), SolverConfig())
    assert len(res.log) == 1 and res.log[0].status == "converged"


def test_solve_iteration_cap():
    pr = problem_from_id("interval", n=31, preconditioner="jacobi")
    with pytest.raises(IterationLimitError):
        solve(pr, None, SolverConfig(max_outer_steps=2))


def test_solve_is_deterministic(tmp_path):
    pr = problem_from_id("interval", n=15)
    a = solve(pr, None, SolverConfig(tau=1e-8, seed=4))
    b = solve(pr, None, SolverConfig(tau=1e-8, seed=4))
    write_log_csv(tmp_path / "a.csv", a.log)
    write_log_csv(tmp_path / "b.csv", b.log)
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_log_round_trip(tmp_path):
    pr = problem_from_id("interval", n=15)
    res = solve(pr, None, SolverConfig(tau=1e-8))
    write_log_csv(tmp_path / "log.csv", res.log)
    rows = read_log_csv(tmp_path / "log.csv")
    assert tuple(rows[0].keys()) == LOG_FIELDS
    assert [int(r["step"]) for r in rows] == list(range(1, len(res.log) + 1))
    assert all(float(r["epsilon"]) > 0 for r in rows)
    assert float(rows[-1]["mu"]) == res.log[-1].mu
    write_log_json(tmp_path / "log.json", res.log, {"problem": pr.name})
    data = json.loads((tmp_path / "log.json").read_text())
    assert data == json.loads(json.dumps(log_payload(res.log, {"problem": pr.name})))


def test_random_start_is_seeded():
    np.testing.assert_array_equal(random_start(5, 1), random_start(5, 1))
    assert np.all(random_start(50, 2) > 0)


@pytest.mark.slow
def test_solve_interval_jacobi_reaches_closed_form():
    pr = problem_from_id("interval", n=63, preconditioner="jacobi")
    res = solve(pr, None, SolverConfig(tau=1e-8, track_rho=False))
    lam1 = fd_eigenvalues(GridSpec("interval", 1 / 64), 1)[0]
    assert lam1 == pytest.approx(4 * 64**2 * math.sin(math.pi / 128) ** 2, rel=1e-14)
    assert abs(res.mu - lam1) / lam1 <= 1e-8
    assert res.rho <= 1e-8
