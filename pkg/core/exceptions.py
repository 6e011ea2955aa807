"""
Exception hierarchy shared by every app.

Each error also derives from the builtin it refines, so domain code that
already catches ValueError/ArithmeticError keeps working. Management
commands map an error to its ExitCode through `exit_code_for`.
"""
from enum import IntEnum
from typing import Optional, Sequence


class ExitCode(IntEnum):
    SUCCESS = 0
    FAILURE = 1
    PARSE = 3
    CONFIG = 4
    NUMERICAL = 5
    IO = 6


class BeamGPError(Exception):
    """Base class for all project errors."""
    exit_code = ExitCode.FAILURE


class InvalidArgumentError(BeamGPError, ValueError):
    """A numeric argument is NaN or infinite."""


class ContractViolationError(BeamGPError, ValueError):
    """A caller broke a documented precondition (derivative order, empty chain...)."""


class DomainError(BeamGPError, ValueError):
    """A value lies outside its physical domain (position off the beam, sigma <= 0)."""
    exit_code = ExitCode.PARSE


class ParseError(BeamGPError, ValueError):
    """Malformed input file; `line` is 1-based and counts the header."""
    exit_code = ExitCode.PARSE

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ConfigError(BeamGPError, ValueError):
    exit_code = ExitCode.CONFIG


class ConsistencyError(ConfigError):
    """Two inputs that must agree (chain and dataset labels) do not."""


class NumericalSingularityError(BeamGPError, ArithmeticError):
    """Covariance could not be factorized within the jitter budget."""
    exit_code = ExitCode.NUMERICAL


class DegeneratePosteriorError(BeamGPError, ArithmeticError):
    exit_code = ExitCode.NUMERICAL


class InvalidStartError(BeamGPError, ValueError):
    """The sampler's initial point has zero posterior density."""
    exit_code = ExitCode.NUMERICAL

    def __init__(self, message: str, offending: Sequence[str] = ()):
        self.offending = tuple(offending)
        super().__init__(message)


class InferenceError(BeamGPError, RuntimeError):
    exit_code = ExitCode.NUMERICAL


class StudyFailedError(BeamGPError, RuntimeError):
    """Every cell of a parametric study failed."""


class ModelError(BeamGPError, RuntimeError):
    """The finite element model is not solvable (insufficient supports)."""
    exit_code = ExitCode.NUMERICAL


def exit_code_for(exc: BaseException) -> ExitCode:
    if isinstance(exc, BeamGPError):
        return exc.exit_code
    if isinstance(exc, OSError):
        return ExitCode.IO
    return ExitCode.FAILURE
