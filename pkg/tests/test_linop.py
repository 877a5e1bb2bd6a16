import math

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, strategies as st

from pinvit_kit.errors import CapabilityError, DimensionError, NotPositiveError
from pinvit_kit.linop import (
    DenseOperator,
    DiagonalOperator,
    IdentityOperator,
    InverseDefinedOperator,
    LinearOperator,
    ScaledOperator,
    SparseOperator,
    SpectralConstants,
    apply,
    apply_inverse,
    estimate_constants,
    inflate_gamma,
    inner,
    norm_in,
    norm_in_inverse,
    operator_inner,
    pcg,
)
from pinvit_kit.problems import GridSpec, dense_problem, fd_laplacian, stiffness_matrix

from conftest import random_spd


def fd3():
    return SparseOperator(stiffness_matrix(GridSpec("interval", 0.25)), kind="stiffness")


def all_operators(rng):
    S = random_spd(rng, 6)
    return [
        IdentityOperator(6),
        DiagonalOperator(rng.uniform(0.5, 2.0, 6)),
        DenseOperator(S),
        SparseOperator(sp.csr_matrix(S)),
        ScaledOperator(DenseOperator(S), 2.5),
        InverseDefinedOperator(lambda r: np.linalg.solve(S, r), 6, forward_hint=lambda x: S @ x),
    ]


def test_apply_examples():
    assert np.array_equal(apply(IdentityOperator(2), [1.0, 2.0]), [1.0, 2.0])
    assert np.array_equal(apply(DiagonalOperator([1.0, 3.0]), [1.0, 1.0]), [1.0, 3.0])
    assert np.allclose(apply(fd3(), [1.0, 0.0, 0.0]), [32.0, -16.0, 0.0], rtol=0, atol=1e-12)


def test_apply_errors():
    with pytest.raises(DimensionError):
        apply(IdentityOperator(2), [1.0, 2.0, 3.0])

    class NoApply(LinearOperator):
        has_exact_apply = False

    with pytest.raises(CapabilityError):
        NoApply(2).apply([1.0, 1.0])
    with pytest.raises(CapabilityError):
        apply_inverse(NoApply(2), [1.0, 1.0])


def test_inner_examples():
    assert inner([1.0, 0.0], [0.0, 1.0]) == 0.0
    assert inner([3.0, 4.0], [3.0, 4.0]) == 25.0
    assert inner([1.0, 2.0], [3.0, -1.0]) == 1.0
    with pytest.raises(DimensionError):
        inner([1.0, 2.0], [1.0])


def test_operator_inner_and_norms():
    D = DiagonalOperator([1.0, 3.0])
    assert operator_inner(D, [1.0, 1.0], [1.0, 1.0]) == 4.0
    assert operator_inner(IdentityOperator(2), [1.0, 2.0], [3.0, -1.0]) == inner([1.0, 2.0], [3.0, -1.0])
    assert norm_in(IdentityOperator(2), [3.0, 4.0]) == 5.0
    assert math.isclose(norm_in(DiagonalOperator([4.0, 9.0]), [1.0, 1.0]), math.sqrt(13.0))
    assert norm_in(DiagonalOperator([4.0, 9.0]), [0.0, 0.0]) == 0.0


def test_apply_inverse_examples():
    assert np.array_equal(apply_inverse(IdentityOperator(2), [1.0, 2.0]), [1.0, 2.0])
    assert np.allclose(apply_inverse(DiagonalOperator([2.0, 4.0]), [2.0, 4.0]), [1.0, 1.0])
    K = fd3()
    col = np.linalg.inv(K.dense())[:, 0]
    assert np.allclose(apply_inverse(K, [1.0, 0.0, 0.0]), col, rtol=1e-11)


def test_norm_in_inverse_examples():
    assert math.isclose(norm_in_inverse(IdentityOperator(2), [3.0, 4.0]), 5.0)
    assert math.isclose(norm_in_inverse(DiagonalOperator([4.0, 1.0]), [2.0, 1.0]), math.sqrt(2.0))
    assert norm_in_inverse(DiagonalOperator([4.0, 1.0]), [0.0, 0.0]) == 0.0


def test_negative_form_fails_loudly():
    M = DenseOperator(np.diag([1.0, -1.0]), check=False)
    with pytest.raises(NotPositiveError):
        norm_in(M, [0.0, 1.0])
    with pytest.raises(NotPositiveError):
        DenseOperator(np.diag([1.0, -1.0]))
    with pytest.raises(ValueError):
        DenseOperator(np.array([[1.0, 2.0], [0.0, 1.0]]))


def test_operator_invariants(rng):
    for M in all_operators(rng):
        for _ in range(100):
            u, v = rng.standard_normal(M.dim), rng.standard_normal(M.dim)
            Mu, Mv = M.apply(u), M.apply(v)
            assert abs(Mu @ v - Mv @ u) <= 1e-12 * np.linalg.norm(Mu) * np.linalg.norm(v) * 10
            assert Mv @ v > 0
        r = rng.standard_normal(M.dim)
        w = M.apply_inverse(r)
        assert np.linalg.norm(M.apply(w) - r) <= 1e-10 * np.linalg.norm(r)
        v = rng.standard_normal(M.dim)
        assert math.isclose(norm_in_inverse(M, M.apply(v)), norm_in(M, v), rel_tol=1e-8)


@given(st.floats(-1e3, 1e3).filter(lambda c: abs(c) > 1e-6), st.integers(0, 2**31))
def test_norm_homogeneity(c, seed):
    rng = np.random.default_rng(seed)
    M = DenseOperator(random_spd(rng, 5))
    v = rng.standard_normal(5)
    assert math.isclose(norm_in(M, c * v), abs(c) * norm_in(M, v), rel_tol=1e-12)


def test_pcg_matches_direct(rng):
    S = random_spd(rng, 30)
    b = rng.standard_normal(30)
    x = pcg(lambda y: S @ y, b)
    assert np.allclose(x, np.linalg.solve(S, b), rtol=1e-9)


def test_spectral_constants_validation():
    with pytest.raises(ValueError):
        SpectralConstants(1.0, 0.5, 1.0, 0.0)
    with pytest.raises(ValueError):
        SpectralConstants(1.0, 1.0, 1.0, 1.0)
    with pytest.raises(ValueError):
        SpectralConstants(1.0, 1.0, 1.0, 0.0, lambda1=2.0, lambda2=1.0)


def test_inflate_gamma():
    assert inflate_gamma(0.0, 1.1) == 0.0
    assert inflate_gamma(0.5, 1.1) == pytest.approx(min(0.55, 1 - 0.5 / 1.1))
    assert inflate_gamma(0.95, 1.1) < 1.0


def test_estimate_constants_examples():
    I3 = np.eye(3)
    c = estimate_constants(dense_problem(I3, I3, I3), margin=1.0)
    assert c.sigma0 == pytest.approx(1.0) and c.sigma1 == pytest.approx(1.0)
    assert c.alpha == pytest.approx(1.0) and c.gammaP <= 1e-12
    A = np.diag(np.arange(1.0, 11.0))
    c = estimate_constants(dense_problem(A, None, A), margin=1.0)
    assert c.gammaP <= 1e-12
    c = estimate_constants(dense_problem(A, None, np.diag(np.diag(A))))
    assert c.gammaP <= 1e-12
    assert c.lambda1 == pytest.approx(1.0)
    with pytest.raises(ValueError):
        estimate_constants(dense_problem(A), trials=0)


def test_estimate_constants_against_dense(rng):
    from pinvit_kit.oracle import dense_eigensolve

    A = random_spd(rng, 20)
    E = random_spd(rng, 20)
    pr = dense_problem(A, E)
    c = estimate_constants(pr, margin=1.1, trials=2)
    ap = dense_eigensolve(A, pr.P.dense()).eigenvalues
    ep = dense_eigensolve(E, pr.P.dense()).eigenvalues
    lam = dense_eigensolve(A, E).eigenvalues
    assert c.sigma0 <= ap[0] and c.sigma1 >= ap[-1]
    assert c.alpha**2 >= ep[-1]
    assert c.gammaP >= max(1 - ap[0], ap[-1] - 1)
    assert c.lambda1 == pytest.approx(lam[0], rel=1e-8)
    assert c.lambda2 >= lam[1]


def test_fd_gamma_measured_close_to_oracle():
    from pinvit_kit.oracle import gamma_p

    pr = fd_laplacian(GridSpec("interval", 1 / 8), preconditioner="jacobi")
    exact = gamma_p(pr.A.dense(), pr.P.dense())
    assert pr.P.meta["gamma_p"] == pytest.approx(exact, rel=1e-6)
