"""Hot inner loops with a numba path and a pure numpy fallback.

The numba path is used unless the environment variable
``PINVIT_KIT_NO_NUMBA`` is set to a non-empty value other than ``0``, or
numba cannot be imported. Both implementations stay importable so the
benchmark can compare them side by side.
"""
import importlib
import os

import numpy as np

from . import numpy_impl


def _numba_requested():
    flag = os.environ.get("PINVIT_KIT_NO_NUMBA", "")
    return flag in ("", "0")


numba_impl = None
if _numba_requested():
    try:
        numba_impl = importlib.import_module(__name__ + ".numba_impl")
    except ImportError:  # pragma: no cover - numba is a declared dependency
        numba_impl = None

_impl = numba_impl if numba_impl is not None else numpy_impl
BACKEND = "numba" if _impl is numba_impl else "numpy"


def _f64(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def csr_matvec(indptr, indices, data, x):
    return _impl.csr_matvec(indptr, indices, data, _f64(x))


def gauss_seidel(indptr, indices, data, diag, x, b, forward=True):
    """In-place Gauss-Seidel sweep on ``x`` for the system with rhs ``b``."""
    _impl.gauss_seidel(indptr, indices, data, diag, x, _f64(b), forward)


def cholesky(a):
    L, ok = _impl.cholesky(_f64(a))
    if not ok:
        raise np.linalg.LinAlgError("matrix is not positive definite")
    return L


def lower_solve(L, B):
    B = _f64(B)
    if B.ndim == 1:
        return _impl.lower_solve(L, B[:, None])[:, 0]
    return _impl.lower_solve(L, B)


def lower_transpose_solve(L, B):
    B = _f64(B)
    if B.ndim == 1:
        return _impl.lower_transpose_solve(L, B[:, None])[:, 0]
    return _impl.lower_transpose_solve(L, B)


def jacobi_eigh(a, tol=1e-14, max_sweeps=100):
    w, V, sweeps, ok = _impl.jacobi_eigh(_f64(a), tol, max_sweeps)
    if not ok:
        raise np.linalg.LinAlgError(f"Jacobi rotations did not converge in {sweeps} sweeps")
    return w, V
