"""Concrete eigenproblems: dense pencils and finite-difference Laplacians.

Grid problems use the 3-point (1-D) or 5-point (2-D) Dirichlet Laplacian
with a lumped (identity) mass matrix, so closed-form spectra are available
on intervals and rectangles.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from fractions import Fraction
from pathlib import Path

import numpy as np
import scipy.io
import scipy.linalg as sla
import scipy.sparse as sp

from . import _kernels
from .linop import (
    DenseOperator,
    DiagonalOperator,
    IdentityOperator,
    InverseDefinedOperator,
    LinearOperator,
    ScaledOperator,
    SparseOperator,
    lanczos_ritz,
)
from .errors import DimensionError, NotPositiveError

LSHAPE_REFERENCE = 9.639723844
DOMAINS = ("interval", "rectangle", "lshape")
_DEFAULT_EXTENTS = {
    "interval": ((0.0, 1.0),),
    "rectangle": ((0.0, 1.0), (0.0, 1.0)),
    "lshape": ((-1.0, 1.0), (-1.0, 1.0)),
}


@dataclass(frozen=True)
class EigenProblem:
    """Generalized problem ``A u = lambda E u`` with preconditioner ``P``.

    ``meta`` may hold ``lambda1``/``lambda2`` (exact), ``lambda2_upper``,
    ``gamma_p`` (measured), ``domain``, ``h`` and ``name``. ``approx`` is the
    approximate-application policy used by the inexact iteration; ``None``
    means truncation.
    """

    A: LinearOperator
    E: LinearOperator
    P: LinearOperator
    meta: dict = field(default_factory=dict)
    approx: object = None

    def __post_init__(self):
        if not (self.A.dim == self.E.dim == self.P.dim):
            raise DimensionError("A, E and P must have the same dimension")

    @property
    def dim(self):
        return self.A.dim

    @property
    def name(self):
        return self.meta.get("name", "problem")

    def with_preconditioner(self, P, **meta):
        return replace(self, P=P, meta={**self.meta, **meta})

    def with_approx(self, policy):
        return replace(self, approx=policy)

    def with_meta(self, **meta):
        return replace(self, meta={**self.meta, **meta})


# ---------------------------------------------------------------- grids


@dataclass(frozen=True)
class GridSpec:
    """Uniform grid of mesh width ``h`` on an interval, rectangle or L-shape.

    The L-shape is (-1, 1)^2 with the closed quadrant [0, 1]^2 removed.
    """

    domain: str
    h: float
    extents: tuple = None

    def __post_init__(self):
        if self.domain not in DOMAINS:
            raise ValueError(f"unknown domain {self.domain!r}; expected one of {DOMAINS}")
        if self.extents is None:
            object.__setattr__(self, "extents", _DEFAULT_EXTENTS[self.domain])
        elif self.domain == "lshape" and tuple(map(tuple, self.extents)) != _DEFAULT_EXTENTS["lshape"]:
            raise ValueError("the L-shape has fixed extents (-1, 1)^2")
        ext = tuple((float(a), float(b)) for a, b in self.extents)
        if len(ext) != (1 if self.domain == "interval" else 2):
            raise ValueError("extents do not match the domain dimension")
        object.__setattr__(self, "extents", ext)
        if not self.h > 0:
            raise ValueError("mesh width must be positive")
        for a, b in ext:
            cells = (b - a) / self.h
            if b <= a or abs(cells - round(cells)) > 1e-9 * max(cells, 1.0):
                raise ValueError(f"h={self.h} does not divide the extent ({a}, {b})")
        if self.num_nodes < 1:
            raise ValueError("grid has no interior nodes")

    @property
    def cells(self):
        return tuple(int(round((b - a) / self.h)) for a, b in self.extents)

    @property
    def axes(self):
        """Interior node coordinates per axis (x first)."""
        return [a + self.h * np.arange(1, n) for (a, _), n in zip(self.extents, self.cells)]

    @property
    def active(self):
        """Mask over the full interior grid (y outer, x inner), flattened."""
        axes = self.axes
        if self.domain == "interval":
            return np.ones(axes[0].size, dtype=bool)
        X, Y = np.meshgrid(axes[0], axes[1])
        mask = np.ones(X.shape, dtype=bool)
        if self.domain == "lshape":
            tol = 1e-12
            mask &= ~((X >= -tol) & (Y >= -tol))
        return mask.ravel()

    @property
    def num_nodes(self):
        return int(np.count_nonzero(self.active))

    def coordinates(self):
        axes = self.axes
        if self.domain == "interval":
            return axes[0][:, None]
        X, Y = np.meshgrid(axes[0], axes[1])
        return np.column_stack([X.ravel(), Y.ravel()])[self.active]

    def coarsen(self):
        """Grid with twice the mesh width, or ``None`` if not nested."""
        if any(n % 2 for n in self.cells) or min(self.cells) <= 2:
            return None
        coarse = GridSpec(self.domain, 2 * self.h, self.extents) if self._coarse_ok() else None
        return coarse

    def _coarse_ok(self):
        try:
            GridSpec(self.domain, 2 * self.h, self.extents)
        except ValueError:
            return False
        return True

    def label(self):
        return f"{self.domain},h={format_h(self.h)}"


def format_h(h):
    """``2^-k`` for powers of two, plain repr otherwise."""
    k = -math.log2(h)
    if abs(k - round(k)) < 1e-12:
        return f"2^-{int(round(k))}"
    return repr(float(h))


def parse_h(text):
    """Parse ``0.25``, ``1/64`` or ``2^-6`` into a float."""
    text = str(text).strip()
    if "^" in text:
        base, exp = text.split("^", 1)
        return float(base) ** float(exp)
    return float(Fraction(text))


def _second_difference(n_cells, h):
    m = n_cells - 1
    return sp.diags([-np.ones(m - 1), 2 * np.ones(m), -np.ones(m - 1)], [-1, 0, 1], format="csr") / h**2


def stiffness_matrix(grid):
    """Assembled Dirichlet Laplacian on the active interior nodes (CSR)."""
    if grid.domain == "interval":
        return _second_difference(grid.cells[0], grid.h).tocsr()
    nx, ny = grid.cells
    Tx = _second_difference(nx, grid.h)
    Ty = _second_difference(ny, grid.h)
    full = sp.kron(sp.identity(ny - 1), Tx) + sp.kron(Ty, sp.identity(nx - 1))
    idx = np.flatnonzero(grid.active)
    return full.tocsr()[idx][:, idx].tocsr()


def _interp_1d(n_fine_cells):
    nc = n_fine_cells // 2
    rows, cols, vals = [], [], []
    for j in range(1, nc):
        i = 2 * j
        for di, w in ((-1, 0.5), (0, 1.0), (1, 0.5)):
            rows.append(i + di - 1)
            cols.append(j - 1)
            vals.append(w)
    return sp.csr_matrix((vals, (rows, cols)), shape=(n_fine_cells - 1, nc - 1))


def prolongation(fine, coarse):
    """Linear (1-D) or bilinear (2-D) interpolation between active nodes."""
    if coarse.h != 2 * fine.h or coarse.domain != fine.domain:
        raise ValueError("grids are not nested")
    if fine.domain == "interval":
        return _interp_1d(fine.cells[0])
    nx, ny = fine.cells
    full = sp.kron(_interp_1d(ny), _interp_1d(nx)).tocsr()
    rows = np.flatnonzero(fine.active)
    cols = np.flatnonzero(coarse.active)
    return full[rows][:, cols].tocsr()


def fd_eigenvalues(grid, count=2):
    """Closed-form smallest eigenvalues for intervals and rectangles."""
    if grid.domain == "lshape":
        raise ValueError("no closed form on the L-shape")
    per_axis = []
    for (a, b), n in zip(grid.extents, grid.cells):
        k = np.arange(1, n)
        per_axis.append(4.0 / grid.h**2 * np.sin(k * np.pi / (2 * n)) ** 2)
    if len(per_axis) == 1:
        vals = per_axis[0]
    else:
        vals = np.add.outer(per_axis[1], per_axis[0]).ravel()
    return np.sort(vals)[:count]


# ---------------------------------------------------------------- preconditioners


def centered(A, P, seed=0, max_iter=500):
    """Rescale ``P`` so the spectrum of P^{-1}A is centred around one.

    The factor is (s0 + s1)/2 for the extremal Ritz values s0, s1 of P^{-1}A,
    which minimises ||Id - P^{-1}A||_A over scalings; the achieved value is
    stored as ``meta['gamma_p']``.
    """
    rng = np.random.default_rng(seed)
    ritz = lanczos_ritz(lambda x: P.apply_inverse(A.apply(x)), A.apply, A.dim, rng, max_iter)
    s0, s1 = float(ritz[0]), float(ritz[-1])
    if not s0 > 0:
        raise NotPositiveError("P^{-1}A has a non-positive eigenvalue estimate")
    c = 0.5 * (s0 + s1)
    meta = dict(getattr(P, "meta", {}))
    meta.update(scale=c, gamma_p=(s1 - s0) / (s1 + s0), ritz_range=(s0, s1))
    return ScaledOperator(P, c, meta=meta)


def jacobi_preconditioner(A, scale=True, seed=0):
    """Diagonal of ``A``, optimally rescaled unless ``scale`` is false."""
    d = A.diagonal()
    if d is None:
        raise ValueError("operator has no accessible diagonal")
    if np.any(d == 0):
        raise ValueError("zero diagonal entry")
    P = DiagonalOperator(d, kind="preconditioner")
    return centered(A, P, seed) if scale else P


def scaled_identity_preconditioner(A, seed=0):
    """``c I`` with ``c`` chosen from the extremal eigenvalues of A."""
    return centered(A, IdentityOperator(A.dim, kind="preconditioner"), seed)


class _Level:
    def __init__(self, A, prolong=None):
        self.A = sp.csr_matrix(A)
        self.A.sort_indices()
        self.indptr = np.ascontiguousarray(self.A.indptr)
        self.indices = np.ascontiguousarray(self.A.indices)
        self.data = np.ascontiguousarray(self.A.data)
        self.diag = self.A.diagonal()
        self.prolong = prolong
        self.restrict = None if prolong is None else prolong.T.tocsr()
        self.factor = None


class MultilevelCycle:
    """Symmetric V-cycle with Gauss-Seidel smoothing on nested grids.

    Forward sweeps before coarse correction, backward sweeps after, and a
    Galerkin hierarchy, so the cycle is a symmetric positive definite
    approximate inverse of the finest operator.
    """

    def __init__(self, grid, levels=None, smoothing_steps=1):
        grids = [grid]
        while levels is None or len(grids) < levels:
            coarse = grids[-1].coarsen()
            if coarse is None or coarse.num_nodes < 1:
                break
            grids.append(coarse)
        if levels is not None and len(grids) < levels:
            raise ValueError(f"grid {grid.label()} supports only {len(grids)} nested levels")
        self.grids = grids
        self.smoothing_steps = int(smoothing_steps)
        A = stiffness_matrix(grid)
        self.levels = []
        for fine, coarse in zip(grids[:-1], grids[1:]):
            Pm = prolongation(fine, coarse)
            self.levels.append(_Level(A, Pm))
            A = (Pm.T @ A @ Pm).tocsr()
        last = _Level(A)
        last.factor = sla.cho_factor(A.toarray(), lower=True)
        self.levels.append(last)

    @property
    def dim(self):
        return self.levels[0].A.shape[0]

    def __call__(self, r):
        return self._cycle(0, np.asarray(r, dtype=np.float64))

    def _cycle(self, i, r):
        lev = self.levels[i]
        if lev.factor is not None:
            return sla.cho_solve(lev.factor, r)
        x = np.zeros_like(r)
        for _ in range(self.smoothing_steps):
            _kernels.gauss_seidel(lev.indptr, lev.indices, lev.data, lev.diag, x, r, True)
        res = r - _kernels.csr_matvec(lev.indptr, lev.indices, lev.data, x)
        x += lev.prolong @ self._cycle(i + 1, lev.restrict @ res)
        for _ in range(self.smoothing_steps):
            _kernels.gauss_seidel(lev.indptr, lev.indices, lev.data, lev.diag, x, r, False)
        return x


def multilevel_preconditioner(grid, levels=None, smoothing_steps=1, scale=True, seed=0):
    """Multigrid V-cycle preconditioner for the grid Laplacian.

    Returns an operator whose inverse apply is one V-cycle (rescaled to
    centre the spectrum of P^{-1}A); the measured contraction is stored in
    ``meta['gamma_p']``.
    """
    cycle = MultilevelCycle(grid, levels, smoothing_steps)
    A = SparseOperator(stiffness_matrix(grid), kind="stiffness")
    P = InverseDefinedOperator(cycle, cycle.dim, forward_hint=A.apply,
                               meta={"levels": len(cycle.levels)})
    return centered(A, P, seed) if scale else P


# ---------------------------------------------------------------- problems


def fd_laplacian(grid, preconditioner="multilevel", seed=0, **precond_kw):
    """Finite-difference Laplacian eigenproblem on ``grid``."""
    if isinstance(grid, str):
        raise TypeError("pass a GridSpec")
    K = stiffness_matrix(grid)
    A0 = SparseOperator(K, kind="stiffness")
    n = A0.dim
    if preconditioner == "multilevel":
        P = multilevel_preconditioner(grid, seed=seed, **precond_kw)
    elif preconditioner == "jacobi":
        P = jacobi_preconditioner(A0, seed=seed)
    elif preconditioner == "identity":
        P = scaled_identity_preconditioner(A0, seed=seed)
    elif isinstance(preconditioner, LinearOperator):
        P = preconditioner
    else:
        raise ValueError(f"unknown preconditioner {preconditioner!r}")
    A = A0.with_solve_preconditioner(P.apply_inverse)
    meta = {"name": grid.label(), "domain": grid.domain, "h": grid.h, "dof": n,
            "gamma_p": getattr(P, "meta", {}).get("gamma_p")}
    if grid.domain == "lshape":
        sub = GridSpec("rectangle", grid.h, ((-1.0, 1.0), (-1.0, 0.0)))
        meta["lambda2_upper"] = float(fd_eigenvalues(sub, 2)[1])
        meta["reference"] = LSHAPE_REFERENCE
    else:
        lam = fd_eigenvalues(grid, 2)
        meta["lambda1"] = float(lam[0])
        if lam.size > 1 and lam[1] > lam[0] * (1 + 1e-12):
            meta["lambda2"] = float(lam[1])
        meta["reference"] = math.pi**2 * len(grid.extents) if grid.extents == _DEFAULT_EXTENTS[grid.domain] else None
    return EigenProblem(A, IdentityOperator(n), P, meta)


def dense_problem(a_matrix, e_matrix=None, p_matrix=None, name="dense", spectrum=None):
    """Wrap explicit matrices; ``E`` defaults to I and ``P`` to scaled Jacobi.

    ``spectrum`` may supply (lambda1, lambda2) from an independent source.
    """
    A = DenseOperator(a_matrix, kind="stiffness")
    n = A.dim
    E = IdentityOperator(n) if e_matrix is None else DenseOperator(e_matrix, kind="mass")
    if p_matrix is None:
        P = jacobi_preconditioner(A)
    elif isinstance(p_matrix, LinearOperator):
        P = p_matrix
    else:
        P = DenseOperator(p_matrix, kind="preconditioner")
    meta = {"name": name, "dof": n, "gamma_p": getattr(P, "meta", {}).get("gamma_p")}
    if spectrum is not None:
        meta["lambda1"] = float(spectrum[0])
        if len(spectrum) > 1 and spectrum[1] is not None:
            meta["lambda2"] = float(spectrum[1])
    return EigenProblem(A, E, P, meta)


def save_pencil(directory, problem):
    """Write A, E, P as Matrix Market files into ``directory``."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for name, op in (("A", problem.A), ("E", problem.E), ("P", problem.P)):
        mat = op.csr if isinstance(op, SparseOperator) else op.dense()
        scipy.io.mmwrite(str(d / f"{name}.mtx"), sp.coo_matrix(mat) if sp.issparse(mat) else mat,
                         symmetry="symmetric")


def load_pencil(directory, dense_limit=2000):
    """Read A (required), E and P (optional) Matrix Market files."""
    d = Path(directory)
    mats = {}
    for name in ("A", "E", "P"):
        f = d / f"{name}.mtx"
        if f.exists():
            mats[name] = scipy.io.mmread(str(f))
    if "A" not in mats:
        raise FileNotFoundError(f"{d / 'A.mtx'} not found")
    a = mats["A"]
    n = a.shape[0]
    if n <= dense_limit:
        dense = lambda m: m.toarray() if sp.issparse(m) else np.asarray(m)
        return dense_problem(dense(a), None if "E" not in mats else dense(mats["E"]),
                             None if "P" not in mats else dense(mats["P"]), name=f"mm:{d.name}")
    A = SparseOperator(a, kind="stiffness")
    E = IdentityOperator(n) if "E" not in mats else SparseOperator(mats["E"], kind="mass")
    P = jacobi_preconditioner(A) if "P" not in mats else SparseOperator(mats["P"], kind="preconditioner")
    return EigenProblem(A.with_solve_preconditioner(P.apply_inverse), E, P,
                        {"name": f"mm:{d.name}", "dof": n})


def problem_from_id(problem, h=None, n=None, preconditioner="multilevel", seed=0):
    """Build a problem from CLI-style identifiers.

    ``problem`` is ``interval``, ``rectangle``, ``lshape``, ``diag:1,2,3`` or
    ``mm:<directory>``; grids take ``h`` (float or ``2^-k``) or, for the
    interval, ``n`` interior nodes.
    """
    if problem.startswith("mm:"):
        return load_pencil(problem[3:])
    if problem.startswith("diag:"):
        d = np.array([float(x) for x in problem[5:].split(",")])
        s = np.sort(d)
        spec = (s[0], s[1] if s.size > 1 and s[1] > s[0] else None)
        P = jacobi_preconditioner(DiagonalOperator(d)) if preconditioner == "jacobi" else None
        return dense_problem(np.diag(d), None, P, name=problem, spectrum=spec)
    if problem not in DOMAINS:
        raise ValueError(f"unknown problem {problem!r}")
    if h is None:
        if n is None:
            raise ValueError("grid problems need --h or --n")
        if problem != "interval":
            raise ValueError("--n is only meaningful for the interval")
        h = 1.0 / (int(n) + 1)
    elif isinstance(h, str):
        h = parse_h(h)
    grid = GridSpec(problem, float(h))
    if preconditioner == "multilevel" and grid.coarsen() is None and grid.num_nodes > 2000:
        preconditioner = "jacobi"
    return fd_laplacian(grid, preconditioner=preconditioner, seed=seed)
