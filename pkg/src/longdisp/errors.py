"""Exception hierarchy shared across the package.

Two broad families matter for the CLI exit-code mapping: data errors
(schema, parsing, validation of input files) and estimation errors
(degenerate kernel windows, singular fits, failed selections).
"""

from __future__ import annotations


class LongdispError(Exception):
    """Base class for all errors raised by this package."""


class DataError(LongdispError):
    """Input data could not be ingested or validated."""


class SchemaError(DataError):
    """A required column is absent or the schema mapping is malformed."""


class ParseError(DataError):
    """A cell could not be parsed; message carries the offending row number."""


class ValidationError(DataError):
    """Parsed data violates a dataset invariant."""


class EstimationError(LongdispError):
    """An estimation step could not be completed."""


class EmptyWindowError(EstimationError):
    """No observation carries kernel weight at the requested target."""

    def __init__(self, t: float, z: float | None, message: str | None = None):
        self.t = t
        self.z = z
        if message is None:
            where = f"t={t!r}" if z is None else f"t={t!r}, z={z!r}"
            message = f"empty window: no effective observations at {where}"
        super().__init__(message)


class EmptyLevelError(EstimationError):
    """A discrete modifier level has no subjects in the dataset."""

    def __init__(self, level: float, group: str | None = None):
        self.level = level
        where = f" in group {group!r}" if group else ""
        super().__init__(f"empty level: no subject with modifier level {level!r}{where}")


class SingularFitError(EstimationError):
    """The weighted Gram matrix is numerically rank deficient."""

    def __init__(self, t: float, z: float | None, rcond: float):
        self.t = t
        self.z = z
        self.rcond = rcond
        super().__init__(
            f"singular fit at t={t!r}, z={z!r}: reciprocal condition {rcond:.3e}"
        )


class GridTooNarrowError(EstimationError):
    """Every candidate bandwidth pair left too many prediction points uncovered."""


class ConfigError(LongdispError):
    """A run configuration is internally inconsistent (CLI usage error)."""
