"""Exception types shared across the package."""


class KohbedError(Exception):
    """Base class for all package-specific failures."""


class DimensionMismatch(KohbedError):
    """Input arrays do not have the shapes an operation requires."""


class NotPositiveDefinite(KohbedError):
    """A matrix failed Cholesky factorization even at the jitter cap."""


class Singular(KohbedError):
    """A triangular factor has a zero diagonal element."""


class MixingFailure(KohbedError):
    """The Metropolis chain stopped accepting proposals entirely."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class DerivativeFailure(KohbedError):
    """A finite-difference derivative evaluated to a non-finite value."""


class NumericalFailure(KohbedError):
    """A criterion evaluation produced a non-finite or invalid result."""


class SelectionFailure(KohbedError):
    """No candidate has a finite score; nothing can be selected."""


class ConditioningError(KohbedError):
    """Conditional variance of a new point is non-positive (near-duplicate)."""


class PrecomputeTooLarge(KohbedError):
    """The joint covariance would exceed the configured memory bound."""


class IntegrationBlowup(KohbedError):
    """The ODE state became non-finite during integration."""

    def __init__(self, message, t=None):
        super().__init__(message)
        self.t = t
