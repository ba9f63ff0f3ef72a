"""Exception types and their CLI exit codes."""

from typing import Optional

from .constants import EXIT_ACCEPTANCE, EXIT_CONFIG, EXIT_NUMERICAL


class PreemptError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class ConfigError(PreemptError):
    """Malformed experiment configuration."""

    exit_code = EXIT_CONFIG

    def __init__(self, message: str, line: Optional[int] = None) -> None:
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class NumericalAbortError(PreemptError):
    """A loss or update gradient became non-finite."""

    exit_code = EXIT_NUMERICAL


class InvariantViolation(PreemptError):
    """A zero-tolerance invariant did not hold."""

    exit_code = EXIT_NUMERICAL


class AcceptanceError(PreemptError):
    """One or more selftest checks failed."""

    exit_code = EXIT_ACCEPTANCE
