"""Exception types raised by the landscape sensitivity-analysis toolkit.

All errors are ValueError subclasses so callers that only guard against bad
input keep working.
"""

from typing import Optional


class LandscapeSAError(ValueError):
    """Base class for toolkit errors."""


class InfeasibleDesign(LandscapeSAError):
    """No regular design meets the requested resolution."""


class NotRegular(LandscapeSAError):
    """Operation needs generator columns that the design does not carry."""


class InsufficientStrength(LandscapeSAError):
    pass


class LengthMismatch(LandscapeSAError):
    pass


class NonFiniteState(LandscapeSAError):
    """A simulator pool became NaN or infinite."""

    def __init__(self, message: str, day: Optional[int] = None):
        super().__init__(message)
        self.day = day


class EmptyMask(LandscapeSAError):
    pass


class AggregationModeError(LandscapeSAError):
    pass


class NonNestedGrids(LandscapeSAError):
    pass


class ManifestMismatch(LandscapeSAError):
    pass


class TruncatedPayload(LandscapeSAError):
    pass


class DegenerateData(LandscapeSAError):
    """All columns are constant, so there is no variance to decompose."""


class TooFewPoints(LandscapeSAError):
    pass


class ObjectMismatch(LandscapeSAError):
    pass


class DegenerateTable(LandscapeSAError):
    """Contingency table has a single row or a single column."""


class MissingArtifact(LandscapeSAError):
    pass


class StageFailure(LandscapeSAError):
    """A pipeline stage aborted.

    `run` and `pixel` identify the failing unit of work when known.
    """

    def __init__(self, stage: str, message: str, run: Optional[int] = None, pixel: Optional[int] = None):
        where = []
        if run is not None:
            where.append(f"run {run}")
        if pixel is not None:
            where.append(f"pixel {pixel}")
        suffix = f" ({', '.join(where)})" if where else ""
        super().__init__(f"stage '{stage}' failed{suffix}: {message}")
        self.stage = stage
        self.run = run
        self.pixel = pixel
