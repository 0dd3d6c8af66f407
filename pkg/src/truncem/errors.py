"""Exception hierarchy shared across the package."""


class TruncEMError(Exception):
    """Base class for all package errors."""


class DomainError(TruncEMError, ValueError):
    """Argument outside the domain of a coefficient function."""


class NonFiniteError(TruncEMError, ArithmeticError):
    """A computation produced inf or nan."""


class SimulationError(TruncEMError):
    """A path produced a non-finite value.

    Carries the step index (and path index, when known) of the first failure.
    """

    def __init__(self, message, step=None, path_index=None):
        super().__init__(message)
        self.step = step
        self.path_index = path_index


class ConfigError(TruncEMError, ValueError):
    """Malformed or incomplete configuration."""


class ConstraintError(TruncEMError, ValueError):
    """A named admissibility constraint does not hold."""

    def __init__(self, message, constraint):
        super().__init__(message)
        self.constraint = constraint
