"""Preconditioned inverse iteration with inexact operator applications."""
from . import inexact, linop, oracle, pinvit, problems
from ._kernels import BACKEND
from .inexact import SolverConfig, ppinvit_step, solve
from .linop import SpectralConstants, estimate_constants
from .pinvit import pinvit_step, rayleigh_quotient, residual_measure
from .problems import EigenProblem, GridSpec, dense_problem, fd_laplacian

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "EigenProblem",
    "GridSpec",
    "SolverConfig",
    "SpectralConstants",
    "dense_problem",
    "estimate_constants",
    "fd_laplacian",
    "inexact",
    "linop",
    "oracle",
    "pinvit",
    "pinvit_step",
    "ppinvit_step",
    "problems",
    "rayleigh_quotient",
    "residual_measure",
    "solve",
]
