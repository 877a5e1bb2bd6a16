"""Independent dense reference for spectra, norms and per-step audits.

Everything here runs on the package's own Cholesky, triangular solves and
cyclic Jacobi rotations, so it shares no factorisation or eigensolver code
with the solver side (which uses LAPACK through scipy).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import MissingSpectralDataError

MAX_DIM = 2000


@dataclass(frozen=True)
class SpectrumReport:
    """Full spectrum of a dense pencil.

    ``eigenvectors[:, k]`` is E-orthonormal and belongs to ``eigenvalues[k]``.
    """

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    residual_check: float
    a_norm: float

    @property
    def lambda1(self):
        return float(self.eigenvalues[0])

    @property
    def lambda2(self):
        """Second distinct eigenvalue (``None`` for a single-point spectrum)."""
        lam = self.eigenvalues
        gap = np.flatnonzero(lam > lam[0] * (1 + 1e-10) + 1e-300)
        return float(lam[gap[0]]) if gap.size else None

    def eigenspace(self, k=0, rtol=1e-10):
        """Columns spanning the eigenspace of ``eigenvalues[k]``."""
        lam = self.eigenvalues
        sel = np.abs(lam - lam[k]) <= rtol * abs(lam[k])
        return self.eigenvectors[:, sel]


def _dense(m):
    if hasattr(m, "dense"):
        return np.asarray(m.dense(), dtype=np.float64)
    return np.asarray(m, dtype=np.float64)


def dense_eigensolve(a_matrix, e_matrix=None, tol=1e-14):
    """All eigenpairs of ``A x = lambda E x`` (``E`` defaults to I).

    E = L L^T is factorised, C = L^{-1} A L^{-T} is diagonalised by Jacobi
    rotations and the eigenvectors are mapped back with L^{-T}.
    """
    A = _dense(a_matrix)
    n = A.shape[0]
    if A.shape != (n, n) or n < 1:
        raise ValueError("A must be a non-empty square matrix")
    if n > MAX_DIM:
        raise ValueError(f"oracle limited to n <= {MAX_DIM}")
    E = np.eye(n) if e_matrix is None else _dense(e_matrix)
    L = _kernels.cholesky(0.5 * (E + E.T))
    C = _kernels.lower_solve(L, _kernels.lower_solve(L, 0.5 * (A + A.T)).T)
    C = 0.5 * (C + C.T)
    w, W = _kernels.jacobi_eigh(C, tol)
    order = np.argsort(w, kind="stable")
    w, W = w[order], W[:, order]
    X = _kernels.lower_transpose_solve(L, W)
    res = A @ X - (E @ X) * w
    return SpectrumReport(w, X, float(np.max(np.linalg.norm(res, axis=0))),
                          float(np.linalg.norm(A, 2)))


def a_norm(a_matrix, v):
    A = _dense(a_matrix)
    return math.sqrt(max(float(v @ A @ v), 0.0))


def inverse_norm(a_matrix, r):
    """``sqrt(r . A^{-1} r)`` via the oracle's own Cholesky factor."""
    L = _kernels.cholesky(_dense(a_matrix))
    y = _kernels.lower_solve(L, r)
    return float(np.linalg.norm(y))


def rayleigh(a_matrix, e_matrix, v):
    A = _dense(a_matrix)
    E = np.eye(A.shape[0]) if e_matrix is None else _dense(e_matrix)
    return float(v @ A @ v) / float(v @ E @ v)


def rho(a_matrix, e_matrix, v):
    """Eigenvalue residual ``||Av - mu E v||_{A^{-1}} / ||v||_A``."""
    A = _dense(a_matrix)
    E = np.eye(A.shape[0]) if e_matrix is None else _dense(e_matrix)
    mu = float(v @ A @ v) / float(v @ E @ v)
    return inverse_norm(A, A @ v - mu * (E @ v)) / a_norm(A, v)


def sin_angle(a_matrix, v, basis):
    """sin of the A-angle between ``v`` and span(basis), by explicit Gram matrices."""
    A = _dense(a_matrix)
    Q = np.atleast_2d(np.asarray(basis, dtype=np.float64))
    if Q.shape[0] != A.shape[0]:
        Q = Q.T
    G = Q.T @ A @ Q
    b = Q.T @ A @ v
    L = _kernels.cholesky(G)
    c = _kernels.lower_transpose_solve(L, _kernels.lower_solve(L, b))
    vv = float(v @ A @ v)
    proj = float(b @ c)
    return math.sqrt(min(max(1.0 - proj / vv, 0.0), 1.0))


def gamma_p(a_matrix, p_matrix):
    """``max |1 - theta|`` over the spectrum of P^{-1} A."""
    w = dense_eigensolve(a_matrix, p_matrix).eigenvalues
    return float(max(abs(1.0 - w[0]), abs(w[-1] - 1.0)))


@dataclass(frozen=True)
class AuditRow:
    """Check of ``ratio_after <= q**2 ratio_before`` for one step.

    ``status`` is ``pass``, ``fail`` or ``n/a`` (start outside the bracket
    (lambda1, lambda2), where the bound is not claimed).
    """

    ratio_before: float
    ratio_after: float
    q_squared: float
    status: str
    mu_before: float
    mu_after: float

    @property
    def ok(self):
        return self.status != "fail"


def _spectral_pair(problem, spectrum):
    if spectrum is not None:
        if isinstance(spectrum, SpectrumReport):
            return spectrum.lambda1, spectrum.lambda2
        return float(spectrum[0]), float(spectrum[1])
    meta = getattr(problem, "meta", {}) or {}
    if meta.get("lambda1") is not None and meta.get("lambda2") is not None:
        return meta["lambda1"], meta["lambda2"]
    if problem.dim > MAX_DIM:
        raise MissingSpectralDataError("no spectral data and the problem is too large for the oracle")
    rep = dense_eigensolve(problem.A, problem.E)
    return rep.lambda1, rep.lambda2


def audit_step(problem, before, after, gamma, spectrum=None, slack=1e-10):
    """Audit one step against the shifted-ratio contraction bound.

    Parameters
    ----------
    problem : EigenProblem
    before, after : ndarray
        Iterands before and after the step.
    gamma : float
        Contraction constant in ``q = 1 - (1 - gamma)(1 - lambda1/lambda2)``.
    spectrum : SpectrumReport or (lambda1, lambda2), optional
        Reference eigenvalues; taken from ``problem.meta`` or computed.
    slack : float
        Absolute slack added to the right-hand side.
    """
    lam1, lam2 = _spectral_pair(problem, spectrum)
    A, E = problem.A, problem.E

    def mu(x):
        x = np.asarray(x, dtype=np.float64)
        return float(A.apply(x) @ x) / float(E.apply(x) @ x)

    mb, ma = mu(before), mu(after)
    if lam2 is None:
        return AuditRow(math.nan, math.nan, math.nan, "n/a", mb, ma)
    q = 1.0 - (1.0 - gamma) * (1.0 - lam1 / lam2)
    q2 = q * q
    if not lam1 <= mb < lam2:
        return AuditRow(math.nan, math.nan, q2, "n/a", mb, ma)
    rb = max(mb - lam1, 0.0) / (lam2 - mb)
    if ma >= lam2:
        return AuditRow(rb, math.inf, q2, "fail", mb, ma)
    ra = max(ma - lam1, 0.0) / (lam2 - ma)
    status = "pass" if ra <= q2 * rb + slack else "fail"
    return AuditRow(rb, ra, q2, status, mb, ma)
