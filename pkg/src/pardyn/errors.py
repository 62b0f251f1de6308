"""Exception hierarchy shared by all modules."""


class PardynError(Exception):
    """Base class for all package errors."""


class ConfigurationError(PardynError, ValueError):
    """Malformed problem, mesh or run configuration."""


class DomainError(PardynError, ValueError):
    """A parameter vector lies outside its admissible box."""


class NumericalError(PardynError, ArithmeticError):
    """Failure of a numerical kernel (singular system, divergence)."""

    def __init__(self, message, step=None):
        super().__init__(message if step is None else f"{message} (time step {step})")
        self.step = step


class SingularSystemError(NumericalError):
    pass


class DivergenceError(NumericalError):
    pass


class EstimatorError(NumericalError):
    """Error-bound evaluation failed (e.g. eigen iteration did not converge)."""


class StateError(PardynError, RuntimeError):
    """Operation not available in the current object state."""


class ModelFormatError(PardynError, OSError):
    """Unreadable or incompatible persisted model."""
