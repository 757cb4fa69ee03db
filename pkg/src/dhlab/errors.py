"""Exception hierarchy.

Validation problems derive from :class:`ValidationError` (CLI exit code 2),
numerical breakdowns from :class:`NumericalError` (CLI exit code 3).
"""


class DHLabError(Exception):
    """Base class for every error raised by the package."""


class ValidationError(DHLabError, ValueError):
    """Raised when user input violates a model or configuration constraint."""


class NegativeLevel(ValidationError):
    pass


class CrossFeedPositive(ValidationError):
    pass


class DegenerateDiffusion(ValidationError):
    pass


class CorrelationOutOfRange(ValidationError):
    pass


class InvalidState(ValidationError):
    pass


class ConfigError(ValidationError):
    pass


class NumericalError(DHLabError, ArithmeticError):
    """Raised when a computation cannot produce a trustworthy number."""


class NotSubcritical(NumericalError):
    pass


class NonFiniteState(NumericalError):
    def __init__(self, message, replication=None, step=None):
        super().__init__(message)
        self.replication = replication
        self.step = step


class ToleranceUnreachable(NumericalError):
    pass


class SingularMatrix(NumericalError):
    def __init__(self, message, condition=None):
        super().__init__(message)
        self.condition = condition


class SingularR(SingularMatrix):
    pass


class SingularInformation(SingularMatrix):
    pass


class SingularGamma(SingularMatrix):
    pass


class SingularG(SingularMatrix):
    pass


class LinkOutOfDomain(NumericalError):
    pass


class TooFewSamples(NumericalError):
    pass


class DegenerateSamples(NumericalError):
    pass


class EstimationAborted(NumericalError):
    """Too many replications failed for a Monte Carlo table to be meaningful."""
