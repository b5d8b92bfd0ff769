from enum import IntEnum

from pydantic import ValidationError


class ExitCode(IntEnum):
    """Stable exit-code contract of the command line interface."""

    SUCCESS = 0
    VALIDATION = 2
    REFUSAL = 3
    NUMERICAL = 4


class DomainError(ValueError):
    """Argument outside the mathematical domain of a function."""


class DataValidationError(ValueError):
    """Malformed or unusable input data."""


class RankDeficiencyError(DataValidationError):
    """Design matrix does not have full column rank."""


class InfeasibleSubsetError(ValueError):
    """No index subset satisfies the nonsingularity condition."""


class SingularityError(ArithmeticError):
    """Weighted design matrix became rank deficient during a computation."""


class DivergenceError(ArithmeticError):
    """Quadrature failed to stabilize, the integral is likely infinite."""


class ImproperPosteriorError(RuntimeError):
    """Sampling refused because the posterior does not exist."""

    def __init__(self, message: str, critical_nu: float, a: float):
        super().__init__(message)
        self.critical_nu = critical_nu
        self.a = a


def exit_code_for(err: BaseException) -> ExitCode:
    """Map an exception raised by a command onto the exit-code contract."""
    if isinstance(err, ImproperPosteriorError):
        return ExitCode.REFUSAL
    if isinstance(err, ArithmeticError):
        return ExitCode.NUMERICAL
    if isinstance(err, (ValidationError, ValueError, KeyError, FileNotFoundError)):
        return ExitCode.VALIDATION
    return ExitCode.NUMERICAL
