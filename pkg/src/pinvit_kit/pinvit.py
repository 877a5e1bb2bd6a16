"""Preconditioned inverse iteration: single steps, bounds and model-case ops.

The step is ``v' = v - P^{-1}(A v - mu(v) E v) + xi`` followed by
normalisation in the E-norm. The model-case iteration works with
``B = A^{-1} E`` and ``T = P^{-1} A`` in the A-inner product, where the
largest eigenvalue of ``B`` is the reciprocal of the smallest of the pencil.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    BreakdownError,
    MissingSpectralDataError,
    PerturbationBudgetError,
    SpectralInconsistencyError,
)
from .linop import as_vector, norm_in, norm_in_inverse

BREAKDOWN_RTOL = 1e-14


@dataclass(frozen=True)
class StepResult:
    """Outcome of one PINVIT step.

    ``bound_factor`` is q**2 when the contraction bound applies to this step
    and ``nan`` otherwise (unknown spectrum or mu(v) >= lambda2).
    """

    next: np.ndarray
    mu_next: float
    rho_next: float
    bound_factor: float
    mu: float
    raw: np.ndarray

    @property
    def bound_valid(self):
        return not math.isnan(self.bound_factor)


@dataclass(frozen=True)
class AngleBounds:
    lower: float
    upper: float


def _nonzero(v, dim):
    v = as_vector(v, dim)
    if not np.any(v):
        raise ValueError("zero vector")
    return v


def rayleigh_quotient(A, E, v):
    """``<Av, v> / <Ev, v>``."""
    v = _nonzero(v, A.dim)
    return float(A.apply(v) @ v) / float(E.apply(v) @ v)


def residual(A, E, v):
    """``A v - mu(v) E v``."""
    v = _nonzero(v, A.dim)
    Av, Ev = A.apply(v), E.apply(v)
    return Av - (float(Av @ v) / float(Ev @ v)) * Ev


def residual_measure(A, E, v):
    """``||r(v)||_{A^{-1}} / ||v||_A``."""
    v = _nonzero(v, A.dim)
    return norm_in_inverse(A, residual(A, E, v)) / norm_in(A, v)


def convergence_factor(gamma, lambda_k, lambda_k1):
    """``1 - (1 - gamma)(1 - lambda_k / lambda_k1)``."""
    if not 0 <= gamma < 1:
        raise ValueError(f"gamma must lie in [0, 1), got {gamma}")
    if not 0 < lambda_k < lambda_k1:
        raise ValueError("need 0 < lambda_k < lambda_k1")
    return 1.0 - (1.0 - gamma) * (1.0 - lambda_k / lambda_k1)


def model_rate(gamma, mu_k, mu_k1):
    """Model-case factor ``1 - (1 - gamma)(mu_k - mu_k1) / mu_k``."""
    if not 0 <= gamma < 1:
        raise ValueError(f"gamma must lie in [0, 1), got {gamma}")
    if not 0 < mu_k1 < mu_k:
        raise ValueError("need 0 < mu_k1 < mu_k")
    return 1.0 - (1.0 - gamma) * (mu_k - mu_k1) / mu_k


def pinvit_step(A, E, P, v, xi=None, *, gamma=None, lambda1=None, lambda2=None,
                gamma_xi=None, compute_rho=True):
    """One (possibly perturbed) PINVIT step from ``v``.

    Parameters
    ----------
    A, E, P : LinearOperator
        Stiffness, mass and preconditioner; ``P`` needs an inverse apply.
    v : array_like
        Current iterand (any nonzero scaling).
    xi : array_like, optional
        Perturbation added before normalisation. If ``gamma_xi`` is given,
        ``||xi||_A / ||v||_A <= gamma_xi * rho(v)`` is enforced.
    gamma : float, optional
        Contraction constant used for ``bound_factor``; defaults to the
        preconditioner's recorded ``gamma_p`` (plus ``gamma_xi`` when
        perturbed).
    lambda1, lambda2 : float, optional
        Smallest two eigenvalues, used for ``bound_factor`` and the sanity
        check ``mu' >= lambda1``.
    compute_rho : bool
        Evaluate ``rho`` of the new iterand (costs one solve with A).

    Returns
    -------
    StepResult
    """
    v = _nonzero(v, A.dim)
    Av, Ev = A.apply(v), E.apply(v)
    mu = float(Av @ v) / float(Ev @ v)
    r = Av - mu * Ev
    raw = v - P.apply_inverse(r)
    if xi is not None:
        xi = as_vector(xi, A.dim)
        if gamma_xi is not None:
            budget = gamma_xi * norm_in_inverse(A, r)  # = gamma_xi rho(v) ||v||_A
            size = norm_in(A, xi)
            if size > budget * (1 + 1e-10) + 1e-300:
                raise PerturbationBudgetError(
                    f"||xi||_A = {size:.6g} exceeds gamma_xi*rho(v)*||v||_A = {budget:.6g}")
        raw = raw + xi
    vnorm = math.sqrt(float(E.apply(v) @ v))
    size = math.sqrt(max(float(E.apply(raw) @ raw), 0.0))
    if not size >= BREAKDOWN_RTOL * vnorm:
        raise BreakdownError("the updated iterand vanished")
    nxt = raw / size
    if float(nxt @ v) < 0:
        nxt = -nxt
    mu_next = rayleigh_quotient(A, E, nxt)
    if lambda1 is not None and mu_next < lambda1 * (1 - 1e-8):
        raise SpectralInconsistencyError(
            f"Rayleigh quotient {mu_next!r} fell below the supplied lambda1 {lambda1!r}")
    if gamma is None:
        gp = getattr(P, "meta", {}).get("gamma_p")
        if gp is not None:
            gamma = gp + (gamma_xi if (xi is not None and gamma_xi is not None) else 0.0)
    factor = math.nan
    if gamma is not None and lambda1 is not None and lambda2 is not None and gamma < 1:
        if mu < lambda2:
            factor = convergence_factor(gamma, lambda1, lambda2) ** 2
    rho_next = residual_measure(A, E, nxt) if compute_rho else math.nan
    return StepResult(nxt, mu_next, rho_next, factor, mu, raw)


def _euclid(u, w):
    return float(np.dot(u, w))


def model_rayleigh(B_apply, x, inner=None):
    """``(Bx, x) / (x, x)`` in the inner product ``inner`` (Euclidean default)."""
    ip = inner or _euclid
    x = as_vector(x)
    den = ip(x, x)
    if not den > 0:
        raise ValueError("zero vector")
    return ip(B_apply(x), x) / den


def model_step(B_apply, T_apply, x, eta=None, inner=None):
    """``x + (1/mu(x)) T(Bx - mu(x) x) + eta``; no normalisation."""
    x = as_vector(x)
    ip = inner or _euclid
    Bx = B_apply(x)
    mu = ip(Bx, x) / ip(x, x)
    if not mu > 0:
        raise ValueError(f"model Rayleigh quotient must be positive, got {mu}")
    out = x + T_apply(Bx - mu * x) / mu
    if eta is not None:
        out = out + as_vector(eta, x.size)
    return out


def angle_bounds(mu, lambda1, lambda2, rho):
    """Lower/upper bounds for sin of the A-angle to the first eigenspace."""
    if not lambda1 <= mu < lambda2:
        raise ValueError(f"mu={mu} outside [lambda1, lambda2) = [{lambda1}, {lambda2})")
    if rho < 0:
        raise ValueError("rho must be nonnegative")
    lower = lambda1 / (3.0 * mu) * rho
    upper = min(lambda2 / (lambda2 - mu) * rho,
                math.sqrt(lambda2 / lambda1 * (mu - lambda1) / (lambda2 - mu)), 1.0)
    return AngleBounds(min(max(lower, 0.0), 1.0), max(upper, 0.0))


def temple_kato_gap(B_apply, x, mu1=None, mu2=None, inner=None):
    """Both sides of ``(mu1 - mu(x))(mu(x) - mu2) <= ||Bx - mu(x) x||^2 / ||x||^2``.

    ``mu1 > mu2`` are the two largest eigenvalues of ``B``.
    """
    if mu1 is None or mu2 is None:
        raise MissingSpectralDataError("temple_kato_gap needs mu1 and mu2")
    ip = inner or _euclid
    x = as_vector(x)
    Bx = B_apply(x)
    xx = ip(x, x)
    mu = ip(Bx, x) / xx
    d = Bx - mu * x
    return (mu1 - mu) * (mu - mu2), ip(d, d) / xx


def sin_angle_to_eigenspace(A, v, basis):
    """``||v - Pi v||_A / ||v||_A`` with Pi the A-orthogonal projector on span(basis)."""
    v = _nonzero(v, A.dim)
    basis = [as_vector(b, A.dim) for b in basis]
    if not basis:
        raise ValueError("empty basis")
    Q = np.column_stack(basis)
    AQ = np.column_stack([A.apply(b) for b in basis])
    coef = np.linalg.solve(Q.T @ AQ, AQ.T @ v)
    d = v - Q @ coef
    nv = norm_in(A, v)
    s = norm_in(A, d) / nv
    return min(max(s, 0.0), 1.0)
