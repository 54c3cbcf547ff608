"""Exception hierarchy shared across the package."""

from __future__ import annotations


class OppMatchError(Exception):
    """Base class for all package errors."""


class MalformedRecord(OppMatchError):
    def __init__(self, line_no: int, reason: str):
        super().__init__(f"line {line_no}: {reason}")
        self.line_no = line_no
        self.reason = reason


class DuplicateId(OppMatchError):
    pass


class EmptyPrompt(OppMatchError):
    pass


class UnknownGroup(OppMatchError):
    pass


class DimensionMismatch(OppMatchError):
    pass


class ProviderUnavailable(OppMatchError):
    """Raised by external providers; callers may retry."""


class StoreFormatError(OppMatchError):
    pass


class StorageFailure(OppMatchError):
    pass


class InvalidRecommendation(OppMatchError):
    pass


class NotFound(OppMatchError):
    pass


class UnknownReference(OppMatchError):
    pass


class RunFailed(OppMatchError):
    def __init__(self, message: str, unprocessed: list[str] | None = None):
        super().__init__(message)
        self.unprocessed = sorted(unprocessed or [])


class DegenerateSeries(OppMatchError):
    pass


class LengthMismatch(OppMatchError):
    pass


class WrongDocCount(OppMatchError):
    pass


class UnparseableResponse(OppMatchError):
    pass


class InvalidConfig(OppMatchError):
    pass
