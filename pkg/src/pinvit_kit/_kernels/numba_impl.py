"""numba-compiled versions of the hot kernels (see :mod:`numpy_impl`)."""
import numpy as np
from numba import njit


@njit(cache=True)
def csr_matvec(indptr, indices, data, x):
    n = indptr.shape[0] - 1
    y = np.zeros(n)
    for i in range(n):
        acc = 0.0
        for k in range(indptr[i], indptr[i + 1]):
            acc += data[k] * x[indices[k]]
        y[i] = acc
    return y


@njit(cache=True)
def _gs_row(indptr, indices, data, diag, x, b, i):
    acc = b[i]
    for k in range(indptr[i], indptr[i + 1]):
        j = indices[k]
        if j != i:
            acc -= data[k] * x[j]
    x[i] = acc / diag[i]


@njit(cache=True)
def gauss_seidel(indptr, indices, data, diag, x, b, forward):
    n = indptr.shape[0] - 1
    if forward:
        for i in range(n):
            _gs_row(indptr, indices, data, diag, x, b, i)
    else:
        for i in range(n - 1, -1, -1):
            _gs_row(indptr, indices, data, diag, x, b, i)


@njit(cache=True)
def cholesky(a):
    n = a.shape[0]
    L = np.zeros((n, n))
    for j in range(n):
        d = a[j, j]
        for k in range(j):
            d -= L[j, k] * L[j, k]
        if not d > 0.0:
            return L, False
        ljj = np.sqrt(d)
        L[j, j] = ljj
        for i in range(j + 1, n):
            s = a[i, j]
            for k in range(j):
                s -= L[i, k] * L[j, k]
            L[i, j] = s / ljj
    return L, True


@njit(cache=True)
def lower_solve(L, B):
    n, m = B.shape
    X = np.zeros((n, m))
    for i in range(n):
        for c in range(m):
            s = B[i, c]
            for k in range(i):
                s -= L[i, k] * X[k, c]
            X[i, c] = s / L[i, i]
    return X


@njit(cache=True)
def lower_transpose_solve(L, B):
    n, m = B.shape
    X = np.zeros((n, m))
    for i in range(n - 1, -1, -1):
        for c in range(m):
            s = B[i, c]
            for k in range(i + 1, n):
                s -= L[k, i] * X[k, c]
            X[i, c] = s / L[i, i]
    return X


@njit(cache=True)
def _off_norm(a):
    n = a.shape[0]
    s = 0.0
    for i in range(n):
        for j in range(i + 1, n):
            s += a[i, j] * a[i, j]
    return np.sqrt(2.0 * s)


@njit(cache=True)
def jacobi_eigh(a_in, tol, max_sweeps):
    a = a_in.copy()
    n = a.shape[0]
    V = np.eye(n)
    scale = np.sqrt(np.sum(a * a))
    sweeps = 0
    for sweeps in range(1, max_sweeps + 1):
        if _off_norm(a) <= tol * scale:
            return np.diag(a).copy(), V, sweeps - 1, True
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                sign = 1.0 if theta >= 0.0 else -1.0
                t = sign / (abs(theta) + np.sqrt(theta * theta + 1.0))
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                for k in range(n):
                    akp = a[k, p]
                    akq = a[k, q]
                    a[k, p] = c * akp - s * akq
                    a[k, q] = s * akp + c * akq
                for k in range(n):
                    apk = a[p, k]
                    aqk = a[q, k]
                    a[p, k] = c * apk - s * aqk
                    a[q, k] = s * apk + c * aqk
                a[p, q] = 0.0
                a[q, p] = 0.0
                for k in range(n):
                    vkp = V[k, p]
                    vkq = V[k, q]
                    V[k, p] = c * vkp - s * vkq
                    V[k, q] = s * vkp + c * vkq
    return np.diag(a).copy(), V, sweeps, _off_norm(a) <= tol * scale
