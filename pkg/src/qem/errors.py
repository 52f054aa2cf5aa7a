"""Exception hierarchy shared across the package."""


class QEMError(Exception):
    """Base class for every error raised by this package."""


class DomainError(QEMError, ValueError):
    """A value or parameter lies outside the support of a distribution."""


class InfeasibleMomentsError(QEMError, ValueError):
    """Mean parameters that no member of the family can produce."""


class NumericalError(QEMError, ArithmeticError):
    """An iterative solver failed to converge."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class NotClosedUnderScalingError(QEMError, ValueError):
    """The family has no member for the law of ``alpha * z``."""


class BroadcastError(QEMError, ValueError):
    pass


class RankCapError(QEMError, MemoryError):
    """An intermediate factor would carry more copy axes than allowed."""


class DegenerateWeightsError(QEMError, FloatingPointError):
    """Every importance weight is zero (log weight of -inf)."""


class MStepError(QEMError, ValueError):
    def __init__(self, latent, message):
        super().__init__(f"{latent}: {message}")
        self.latent = latent


class EnumerationGuardError(QEMError, OverflowError):
    pass


class UnsupportedModelError(QEMError, ValueError):
    pass


class SchemaError(QEMError, ValueError):
    """Dataset or test-set contents disagree with the model declarations."""
