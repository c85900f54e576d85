"""Exception types raised across the package."""


class KGLabError(Exception):
    """Base class for domain errors."""


class PotentialError(KGLabError, ValueError):
    """Invalid potential parameters or evaluation domain."""


class DivergenceError(KGLabError):
    """A tail integral does not converge within its panel budget.

    ``partial`` holds the partial value accumulated before giving up.
    """

    def __init__(self, message, partial=float("nan")):
        super().__init__(message)
        self.partial = partial


class NoValidStartTime(KGLabError):
    """No grid node satisfies the start-time inequalities."""


class TruncationFailure(KGLabError):
    """The series did not reach tolerance before the order cap.

    ``partial`` holds the partially built series.
    """

    def __init__(self, message, partial=None):
        super().__init__(message)
        self.partial = partial


class DomainError(KGLabError, ValueError):
    """A quantity was requested outside its domain of definition."""


class StiffnessError(KGLabError):
    """The ODE step size underflowed."""


class DegenerateMode(KGLabError):
    """A mode carries zero energy at the reference time."""


class ConfigError(KGLabError):
    """Scenario file could not be parsed or validated."""
