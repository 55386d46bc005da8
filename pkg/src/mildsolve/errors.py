"""Exception hierarchy shared by all solver modules."""

from __future__ import annotations


class MildSolveError(Exception):
    """Base class for every error raised by this package."""


class ContractError(MildSolveError, ValueError):
    """A caller violated a documented precondition (shapes, ranges, spaces)."""


class DomainError(ContractError):
    """An argument lies outside the mathematical domain of an operation."""


class NumericError(MildSolveError, ArithmeticError):
    """A computation produced a non-finite value."""


class ConvergenceError(NumericError):
    """A series or iteration did not converge within its budget."""

    def __init__(self, message: str, partial_sum: float = float("nan"), last_term: float = float("nan")):
        super().__init__(message)
        self.partial_sum = partial_sum
        self.last_term = last_term


class UnsoundConfigurationError(MildSolveError):
    """A hypothesis needed for a certified window failed (e.g. infinite singularity bound)."""


class SolverError(MildSolveError):
    """Failure inside a certified window solve."""


class NonContractionError(SolverError):
    """Picard iteration did not reach tolerance within ``max_iter`` iterations."""


class BallViolationError(SolverError):
    """An iterate left the certified ball of radius ``R + 1``."""


class CertificateViolationError(SolverError):
    """A measured contraction ratio exceeded the analytic bound plus slack."""


class GluingError(SolverError):
    """Consecutive window trajectories disagree at their junction."""


class ConfigError(MildSolveError):
    """A problem file could not be parsed or failed validation."""

    def __init__(self, message: str, field: str | None = None):
        super().__init__(message)
        self.field = field


class AuditError(ConfigError):
    """An eager hypothesis audit failed before solving."""


class SolveAborted(MildSolveError):
    """A maximal solve stopped on an error; ``report`` holds the windows accepted so far."""

    def __init__(self, message: str, report, cause: Exception | None = None):
        super().__init__(message)
        self.report = report
        self.cause = cause
