class ABCGBIError(Exception):
    """Base class for errors raised by this package."""


class ConfigurationError(ABCGBIError, ValueError):
    """Invalid combination of options (e.g. a closed-form loss without a field)."""


class SimulationError(ABCGBIError, RuntimeError):
    """A simulator or discrepancy produced a non-finite or malformed value."""


class DomainError(ABCGBIError, ValueError):
    """A weight function was evaluated outside the region where it is defined."""


class ImproperPosteriorError(ABCGBIError, ValueError):
    """All grid log-densities are -inf."""


class ZeroAcceptanceError(ABCGBIError, RuntimeError):
    """Rejection ABC accepted no draws."""

    def __init__(self, threshold, min_discrepancy):
        self.threshold = threshold
        self.min_discrepancy = min_discrepancy
        super().__init__(
            f"no draws accepted at threshold {threshold!r}; "
            f"smallest simulated discrepancy was {min_discrepancy!r}"
        )


class FactorizationError(ABCGBIError, RuntimeError):
    """Covariance matrix stayed non-positive-definite after the jitter schedule."""


class CalibrationError(ABCGBIError, ValueError):
    """The threshold does not exceed the minimal attainable discrepancy."""
