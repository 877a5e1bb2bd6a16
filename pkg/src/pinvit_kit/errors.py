"""Exception types raised across the package."""


class DimensionError(ValueError):
    """Vector or operator dimensions do not match."""


class CapabilityError(TypeError):
    """The operator does not provide the requested kind of application."""


class NotPositiveError(ArithmeticError):
    """A quadratic form that must be positive was not."""


class InnerSolveError(RuntimeError):
    """An inner conjugate gradient solve failed to converge."""


class EstimationError(RuntimeError):
    """Extremal eigenvalue estimation did not converge."""


class BreakdownError(ArithmeticError):
    """The iteration produced a (numerically) zero iterand."""


class PerturbationBudgetError(ValueError):
    """A supplied perturbation exceeds the admissible budget."""


class HalvingLimitError(RuntimeError):
    """The tolerance halving loop exceeded its cap."""


class IterationLimitError(RuntimeError):
    """The outer solve exceeded its step cap."""


class BadStartError(RuntimeError):
    """No admissible starting vector was found."""


class MissingSpectralDataError(ValueError):
    """A spectral quantity needed by the computation is not available."""


class SpectralInconsistencyError(ArithmeticError):
    """Computed quantities contradict the supplied spectral data."""
