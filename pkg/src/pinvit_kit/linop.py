"""Symmetric operators, inner products, induced norms and spectral constants.

Vectors are plain 1-D ``float64`` numpy arrays. Operators are immutable
objects exposing ``apply`` and, when available, ``apply_inverse``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import _kernels
from .errors import (
    CapabilityError,
    DimensionError,
    EstimationError,
    InnerSolveError,
    NotPositiveError,
)

INNER_RTOL = 1e-12
KINDS = ("stiffness", "mass", "preconditioner", "generic")


def as_vector(v, dim=None):
    """Return ``v`` as a finite 1-D float64 array, checking its length."""
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1 or v.size < 1:
        raise DimensionError(f"expected a non-empty 1-D vector, got shape {v.shape}")
    if dim is not None and v.size != dim:
        raise DimensionError(f"vector has length {v.size}, operator has dimension {dim}")
    if not np.all(np.isfinite(v)):
        raise ValueError("vector has non-finite entries")
    return v


class LinearOperator:
    """Base class for symmetric operators.

    Subclasses override ``_apply`` and optionally ``_apply_inverse``.
    """

    has_exact_apply = True
    has_inverse_apply = False
    has_approx_apply = True
    is_diagonal = False

    def __init__(self, dim, kind="generic"):
        if dim < 1:
            raise DimensionError("operator dimension must be positive")
        if kind not in KINDS:
            raise ValueError(f"unknown operator kind {kind!r}")
        self.dim = int(dim)
        self.kind = kind

    def apply(self, v):
        if not self.has_exact_apply:
            raise CapabilityError(f"{type(self).__name__} has no exact apply")
        return self._apply(as_vector(v, self.dim))

    def apply_inverse(self, r):
        if not self.has_inverse_apply:
            raise CapabilityError(f"{type(self).__name__} has no inverse apply")
        return self._apply_inverse(as_vector(r, self.dim))

    def diagonal(self):
        """Diagonal entries, or ``None`` when not cheaply available."""
        return None

    def dense(self):
        """Dense matrix by applying to unit vectors (small problems only)."""
        eye = np.eye(self.dim)
        return np.column_stack([self.apply(eye[:, j]) for j in range(self.dim)])

    def _apply(self, v):
        raise NotImplementedError

    def _apply_inverse(self, r):
        raise NotImplementedError

    def __repr__(self):
        return f"{type(self).__name__}(dim={self.dim}, kind={self.kind!r})"


class DenseOperator(LinearOperator):
    """Explicit symmetric positive definite matrix, inverted by Cholesky."""

    has_inverse_apply = True

    def __init__(self, matrix, kind="generic", check=True):
        matrix = np.array(matrix, dtype=np.float64)
        if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
            raise DimensionError(f"expected a square matrix, got shape {matrix.shape}")
        super().__init__(matrix.shape[0], kind)
        if check:
            scale = max(np.abs(matrix).max(), 1.0)
            if np.abs(matrix - matrix.T).max() > 1e-12 * scale:
                raise ValueError("matrix is not symmetric")
        self.matrix = 0.5 * (matrix + matrix.T)
        self.matrix.setflags(write=False)
        try:
            self._factor = sla.cho_factor(self.matrix, lower=True)
        except np.linalg.LinAlgError as exc:
            if check:
                raise NotPositiveError("matrix is not positive definite") from exc
            self._factor = None

    def _apply(self, v):
        return self.matrix @ v

    def _apply_inverse(self, r):
        if self._factor is None:
            raise NotPositiveError("matrix is not positive definite")
        return sla.cho_solve(self._factor, r)

    def diagonal(self):
        return np.diag(self.matrix).copy()

    def dense(self):
        return self.matrix.copy()


class DiagonalOperator(LinearOperator):
    has_inverse_apply = True
    is_diagonal = True

    def __init__(self, diag, kind="generic"):
        diag = np.array(diag, dtype=np.float64).ravel()
        super().__init__(diag.size, kind)
        if np.any(diag <= 0):
            raise NotPositiveError("diagonal operator needs positive entries")
        self.diag = diag
        self.diag.setflags(write=False)

    def _apply(self, v):
        return self.diag * v

    def _apply_inverse(self, r):
        return r / self.diag

    def diagonal(self):
        return self.diag.copy()

    def dense(self):
        return np.diag(self.diag)


class IdentityOperator(DiagonalOperator):
    def __init__(self, dim, kind="mass"):
        super().__init__(np.ones(dim), kind)

    def _apply(self, v):
        return v.copy()

    def _apply_inverse(self, r):
        return r.copy()


class SparseOperator(LinearOperator):
    """Compressed-row symmetric matrix.

    The inverse is applied by preconditioned conjugate gradients to relative
    residual ``INNER_RTOL``; ``solve_preconditioner`` (a callable applying an
    approximate inverse) defaults to Jacobi.
    """

    has_inverse_apply = True

    def __init__(self, matrix, kind="generic", solve_preconditioner=None):
        csr = sp.csr_matrix(matrix, dtype=np.float64)
        if csr.shape[0] != csr.shape[1]:
            raise DimensionError(f"expected a square matrix, got shape {csr.shape}")
        super().__init__(csr.shape[0], kind)
        csr.sum_duplicates()
        csr.sort_indices()
        self.csr = csr
        self.indptr = np.ascontiguousarray(csr.indptr)
        self.indices = np.ascontiguousarray(csr.indices)
        self.data = np.ascontiguousarray(csr.data)
        self._diag = csr.diagonal()
        self.solve_preconditioner = solve_preconditioner

    def with_solve_preconditioner(self, precond):
        return SparseOperator(self.csr, self.kind, solve_preconditioner=precond)

    def _apply(self, v):
        return _kernels.csr_matvec(self.indptr, self.indices, self.data, v)

    def _apply_inverse(self, r):
        precond = self.solve_preconditioner
        if precond is None:
            if np.any(self._diag <= 0):
                raise NotPositiveError("sparse operator has a non-positive diagonal entry")
            precond = lambda x, d=self._diag: x / d
        return pcg(self._apply, r, precond=precond, rtol=INNER_RTOL)

    def diagonal(self):
        return self._diag.copy()

    def dense(self):
        return self.csr.toarray()


class InverseDefinedOperator(LinearOperator):
    """Operator known through its inverse (e.g. a multigrid cycle).

    ``apply`` runs conjugate gradients on the inverse map, preconditioned by
    ``forward_hint``, a cheap operator spectrally close to this one.
    """

    has_inverse_apply = True

    def __init__(self, inverse_apply, dim, kind="preconditioner", forward_hint=None, meta=None):
        super().__init__(dim, kind)
        self._inverse = inverse_apply
        self._hint = forward_hint
        self.meta = dict(meta or {})

    def _apply(self, v):
        return pcg(self._inverse, v, precond=self._hint, rtol=INNER_RTOL)

    def _apply_inverse(self, r):
        return self._inverse(r)


class ScaledOperator(LinearOperator):
    """``c * M`` for a positive scalar ``c``."""

    def __init__(self, base, factor, meta=None):
        if not factor > 0:
            raise NotPositiveError("scaling factor must be positive")
        super().__init__(base.dim, base.kind)
        self.base = base
        self.factor = float(factor)
        self.has_exact_apply = base.has_exact_apply
        self.has_inverse_apply = base.has_inverse_apply
        self.is_diagonal = base.is_diagonal
        self.meta = dict(meta or {})

    def _apply(self, v):
        return self.factor * self.base.apply(v)

    def _apply_inverse(self, r):
        return self.base.apply_inverse(r) / self.factor

    def diagonal(self):
        d = self.base.diagonal()
        return None if d is None else self.factor * d


def pcg(apply_op, b, precond=None, rtol=INNER_RTOL, maxiter=None, x0=None):
    """Preconditioned conjugate gradients (scipy) for a symmetric positive operator.

    Stops when ``|b - A x| <= rtol |b|``; the true residual is re-checked.
    """
    b = np.asarray(b, dtype=np.float64)
    n = b.size
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return np.zeros(n)
    if maxiter is None:
        maxiter = 20 * n + 200
    op = spla.LinearOperator((n, n), matvec=apply_op, dtype=np.float64)
    M = None if precond is None else spla.LinearOperator((n, n), matvec=precond, dtype=np.float64)
    x, info = spla.cg(op, b, x0=x0, rtol=0.5 * rtol, atol=0.0, maxiter=maxiter, M=M)
    if info < 0 or not np.all(np.isfinite(x)):
        raise NotPositiveError("conjugate gradients broke down (operator not positive definite?)")
    if np.linalg.norm(b - apply_op(x)) > rtol * bnorm:
        raise InnerSolveError(f"conjugate gradients did not reach rtol={rtol:g} in {maxiter} iterations")
    return x


def apply(M, v):
    """``M v`` with dimension and capability checks."""
    return M.apply(v)


def apply_inverse(P, r):
    """``P^{-1} r``; exact for dense/diagonal operators, CG otherwise."""
    return P.apply_inverse(r)


def inner(u, v):
    u = as_vector(u)
    v = as_vector(v, u.size)
    return float(u @ v)


def operator_inner(M, u, v):
    """``<M u, v>``."""
    v = as_vector(v, M.dim)
    return float(M.apply(u) @ v)


def _checked_sqrt(q, scale, what):
    if q < 0:
        if q < -1e-13 * scale:
            raise NotPositiveError(f"negative quadratic form in {what}: {q!r}")
        q = 0.0
    return math.sqrt(q)


def norm_in(M, v):
    """Induced norm ``sqrt(<M v, v>)``."""
    v = as_vector(v, M.dim)
    Mv = M.apply(v)
    q = float(Mv @ v)
    return _checked_sqrt(q, np.linalg.norm(Mv) * np.linalg.norm(v), "norm_in")


def norm_in_inverse(M, r):
    """Dual norm ``sqrt(<M^{-1} r, r>)``."""
    r = as_vector(r, M.dim)
    w = M.apply_inverse(r)
    q = float(w @ r)
    return _checked_sqrt(q, np.linalg.norm(w) * np.linalg.norm(r), "norm_in_inverse")


def lanczos_ritz(op, gram, dim, rng, max_iter=500, tol=1e-8, start=None, ends=(0, -1)):
    """Ritz values of ``op``, self-adjoint in the inner product ``x . gram(y)``.

    Lanczos with full reorthogonalization; iterates until the Ritz values at
    positions ``ends`` settle to relative ``tol`` or the Krylov space is
    exhausted.
    """
    k_max = min(dim, max_iter)
    q = rng.standard_normal(dim) if start is None else np.array(start, dtype=np.float64)
    Gq = gram(q)
    nq = math.sqrt(max(q @ Gq, 0.0))
    if nq == 0.0:
        raise EstimationError("zero Lanczos start vector")
    q, Gq = q / nq, Gq / nq
    Q, GQ, alphas, betas = [], [], [], []
    prev = None
    for j in range(k_max):
        Q.append(q)
        GQ.append(Gq)
        w = op(q)
        alpha = float(Gq @ w)
        alphas.append(alpha)
        for _ in range(2):
            for qi, gqi in zip(Q, GQ):
                w = w - (gqi @ w) * qi
        Gw = gram(w)
        beta = math.sqrt(max(float(w @ Gw), 0.0))
        ritz = sla.eigvalsh_tridiagonal(np.array(alphas), np.array(betas)) if betas else np.array(alphas)
        scale = max(abs(ritz[0]), abs(ritz[-1]))
        if beta <= 1e-13 * max(scale, 1e-300):
            return ritz
        if prev is not None and j >= 4:
            idx = [i for i in ends if -len(prev) <= i < len(prev)]
            if all(abs(ritz[i] - prev[i]) <= tol * scale for i in idx):
                return ritz
        prev = ritz
        betas.append(beta)
        q, Gq = w / beta, Gw / beta
    if k_max < dim:
        raise EstimationError(f"Lanczos extremal values not settled after {k_max} iterations")
    return sla.eigvalsh_tridiagonal(np.array(alphas), np.array(betas[: len(alphas) - 1]))


@dataclass(frozen=True)
class SpectralConstants:
    """Norm-equivalence and spectral constants of an eigenproblem.

    The V-norm is realised as the P-norm, so ``sigma0``/``sigma1`` bound the
    spectrum of the pencil (A, P) and ``alpha**2`` bounds (E, P).
    """

    sigma0: float
    sigma1: float
    alpha: float
    gammaP: float
    lambda1: float | None = None
    lambda2: float | None = None

    def __post_init__(self):
        if not (self.sigma0 > 0 and self.alpha > 0):
            raise ValueError("sigma0 and alpha must be positive")
        if self.sigma1 < self.sigma0:
            raise ValueError("sigma1 must not be smaller than sigma0")
        if not 0 <= self.gammaP < 1:
            raise ValueError("gammaP must lie in [0, 1)")
        if self.lambda1 is not None and self.lambda2 is not None and not self.lambda1 < self.lambda2:
            raise ValueError("lambda1 must be smaller than lambda2")


def inflate_gamma(gamma, margin):
    """Safety-inflated contraction constant, kept below one."""
    if gamma <= 0:
        return 0.0
    return min(margin * gamma, 1.0 - (1.0 - gamma) / margin)


def estimate_constants(problem, trials=1, margin=1.1, seed=0, max_iter=500):
    """Estimate sigma0, sigma1, alpha, gammaP and lambda1/lambda2.

    Uses Lanczos on P^{-1}A (A-inner product), P^{-1}E (E-inner product) and
    A^{-1}E (A-inner product), taking extremes over ``trials`` random starts.
    Estimates are moved outward by ``margin``. Known eigenvalues in
    ``problem.meta`` take precedence over the Lanczos values.
    """
    if trials < 1:
        raise ValueError("trials must be at least 1")
    A, E, P = problem.A, problem.E, problem.P
    n = problem.dim
    rng = np.random.default_rng(seed)
    lo_ap, hi_ap, hi_ep, top = np.inf, 0.0, 0.0, []
    for _ in range(trials):
        r = lanczos_ritz(lambda x: P.apply_inverse(A.apply(x)), A.apply, n, rng, max_iter)
        lo_ap, hi_ap = min(lo_ap, r[0]), max(hi_ap, r[-1])
        r = lanczos_ritz(lambda x: P.apply_inverse(E.apply(x)), E.apply, n, rng, max_iter)
        hi_ep = max(hi_ep, r[-1])
        meta = getattr(problem, "meta", {}) or {}
        if meta.get("lambda1") is None or meta.get("lambda2") is None:
            r = lanczos_ritz(lambda x: A.apply_inverse(E.apply(x)), A.apply, n, rng, max_iter,
                             ends=(-2, -1))
            top.append(r[::-1])
    raw_gamma = max(abs(1.0 - lo_ap), abs(hi_ap - 1.0))
    meta = getattr(problem, "meta", {}) or {}
    lam1, lam2 = meta.get("lambda1"), meta.get("lambda2")
    if lam1 is None or lam2 is None:
        mu1 = max(t[0] for t in top)
        est1 = 1.0 / mu1
        second = [t[1] for t in top if len(t) > 1]
        # a one-dimensional Krylov space means a single-point spectrum
        est2 = margin / max(second) if second else max(margin, 1.1) * est1
        lam1 = est1 if lam1 is None else lam1
        if lam2 is None:
            lam2 = est2
            if meta.get("lambda2_upper") is not None:
                lam2 = min(lam2, meta["lambda2_upper"])
    elif n == 1:
        lam2 = max(margin, 1.1) * lam1
    return SpectralConstants(
        sigma0=float(lo_ap / margin),
        sigma1=float(hi_ap * margin),
        alpha=float(math.sqrt(hi_ep) * margin),
        gammaP=float(inflate_gamma(raw_gamma, margin)),
        lambda1=float(lam1),
        lambda2=float(lam2),
    )
