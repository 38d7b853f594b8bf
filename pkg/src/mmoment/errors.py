"""Exception hierarchy shared by every module."""


class MomentError(Exception):
    """Base class for all package errors."""


class DomainError(MomentError, ValueError):
    """Input outside the mathematical domain of an operation."""


class NumericError(MomentError, ArithmeticError):
    """A numerical routine failed (non-PD matrix, bracket failure, ...)."""


class ConvergenceError(NumericError):
    """An iterative routine hit its iteration cap.

    ``residual`` carries the last measured residual when one is available.
    """

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class PreconditionError(MomentError, ValueError):
    """An operation was called without a required capability (e.g. no exact moment)."""


class ConfigError(MomentError, ValueError):
    """Invalid experiment configuration."""


class PropertyViolation(MomentError, AssertionError):
    """A checked inequality or invariant failed."""
