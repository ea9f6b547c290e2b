"""Exception hierarchy for CiMPCC Racing."""

from __future__ import annotations

from typing import Any


class CimpccError(Exception):
    """Base class for all errors raised by this package."""


class ParseError(CimpccError):
    """A track, telemetry or config document could not be parsed."""


class DegenerateTrackError(CimpccError):
    """Track geometry violates a centerline invariant."""


class NumericalDegeneracyError(CimpccError):
    """Finite differences collapsed to zero length."""


class InvalidWindowError(CimpccError):
    """Moving average window is even, nonpositive or longer than the track."""


class DomainError(CimpccError):
    """Argument lies outside the function's domain."""


class InvalidFactorError(CimpccError):
    """Velocity derivation factor out of range."""


class SteeringSingularityError(CimpccError):
    """Steering angle at or beyond +-pi/2."""


class DimensionMismatchError(CimpccError):
    """Array shapes disagree with the problem layout."""


class ConfigurationError(CimpccError):
    """Configuration is malformed or inconsistent."""


class SolverFailureError(CimpccError):
    """The NLP solve did not produce a usable plan."""


class OffTrackError(CimpccError):
    """Vehicle left the corridor beyond the recovery margin."""


class NoCompletedLapsError(CimpccError):
    """Statistics requested without a completed lap."""


class RaceAbortedError(CimpccError):
    """A race was aborted; partial telemetry is attached."""

    def __init__(self, message: str, method: str = "", records: list[Any] | None = None):
        super().__init__(message)
        self.method = method
        self.records = records or []
