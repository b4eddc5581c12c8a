"""Exception hierarchy for the toolkit. The CLI maps these onto exit codes."""
from __future__ import annotations


class RISError(Exception):
    """Base class for every error raised by the toolkit."""


class DomainError(RISError, ValueError):
    """Argument outside the mathematical domain of an operation."""


class ConfigurationError(RISError):
    """Malformed or inconsistent run configuration."""


class InitializationError(RISError):
    """The most-relaxed stage produced no usable samples."""


class DegenerateLevelError(RISError):
    """All importance weights of a level vanished (relaxation step too aggressive)."""


class NonConvergenceError(RISError):
    """Level cap exceeded before reaching the terminal relaxation."""


class IntegrationError(RISError):
    """Time integration produced a non-finite state."""

    def __init__(self, message: str, step: int) -> None:
        super().__init__(f"{message} (time step {step})")
        self.step = step


class ContractViolation(RISError):
    """A caller broke an operation's precondition."""


class RangeError(RISError):
    """Query outside the range covered by stored results."""


class FitError(RISError):
    """Failure-ratio model could not be fitted to the available points."""


class AssemblyError(RISError):
    """Surface grid incomplete."""

    def __init__(self, missing: list[tuple[int, int]]) -> None:
        cells = ", ".join(f"({i},{j})" for i, j in missing)
        super().__init__(f"surface grid incomplete; missing cells: {cells}")
        self.missing = missing


class UnknownOracleError(RISError, KeyError):
    """No analytic oracle registered under the requested case id."""
