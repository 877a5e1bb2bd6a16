"""Pure numpy versions of the hot kernels.

Same signatures and results as :mod:`numba_impl`; used when numba is
disabled through ``PINVIT_KIT_NO_NUMBA`` or is not importable.
"""
import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import spsolve_triangular


def csr_matvec(indptr, indices, data, x):
    n = indptr.shape[0] - 1
    rows = np.repeat(np.arange(n), np.diff(indptr))
    return np.bincount(rows, weights=data * x[indices], minlength=n).astype(np.float64)


def gauss_seidel(indptr, indices, data, diag, x, b, forward):
    """One Gauss-Seidel sweep in place (forward or backward row order)."""
    n = indptr.shape[0] - 1
    mat = sp.csr_matrix((data, indices, indptr), shape=(n, n))
    r = b - mat @ x
    tri = sp.tril(mat, format="csr") if forward else sp.triu(mat, format="csr")
    x += spsolve_triangular(tri, r, lower=forward)


def cholesky(a):
    n = a.shape[0]
    L = np.zeros((n, n))
    for j in range(n):
        d = a[j, j] - L[j, :j] @ L[j, :j]
        if not d > 0.0:
            return L, False
        L[j, j] = np.sqrt(d)
        L[j + 1:, j] = (a[j + 1:, j] - L[j + 1:, :j] @ L[j, :j]) / L[j, j]
    return L, True


def lower_solve(L, B):
    """Solve ``L X = B`` by forward substitution (B is 2-D)."""
    n = L.shape[0]
    X = np.zeros(B.shape)
    for i in range(n):
        X[i] = (B[i] - L[i, :i] @ X[:i]) / L[i, i]
    return X


def lower_transpose_solve(L, B):
    """Solve ``L^T X = B`` by back substitution (B is 2-D)."""
    n = L.shape[0]
    X = np.zeros(B.shape)
    for i in range(n - 1, -1, -1):
        X[i] = (B[i] - L[i + 1:, i] @ X[i + 1:]) / L[i, i]
    return X


def jacobi_eigh(a, tol, max_sweeps):
    """Cyclic Jacobi rotations for a symmetric matrix.

    Returns ``(w, V, sweeps, converged)`` with unsorted eigenvalues ``w``
    and orthonormal eigenvectors in the columns of ``V``.
    """
    a = np.array(a, dtype=np.float64)
    n = a.shape[0]
    V = np.eye(n)
    scale = np.sqrt(np.sum(a * a))
    sweeps = 0
    for sweeps in range(1, max_sweeps + 1):
        off = np.sqrt(2.0 * np.sum(np.triu(a, 1) ** 2))
        if off <= tol * scale:
            return np.diag(a).copy(), V, sweeps - 1, True
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = np.copysign(1.0, theta) / (abs(theta) + np.sqrt(theta * theta + 1.0))
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                colp = a[:, p].copy()
                a[:, p] = c * colp - s * a[:, q]
                a[:, q] = s * colp + c * a[:, q]
                rowp = a[p, :].copy()
                a[p, :] = c * rowp - s * a[q, :]
                a[q, :] = s * rowp + c * a[q, :]
                a[p, q] = 0.0
                a[q, p] = 0.0
                vp = V[:, p].copy()
                V[:, p] = c * vp - s * V[:, q]
                V[:, q] = s * vp + c * V[:, q]
    off = np.sqrt(2.0 * np.sum(np.triu(a, 1) ** 2))
    return np.diag(a).copy(), V, sweeps, off <= tol * scale
