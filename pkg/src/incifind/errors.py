"""Typed exceptions shared across the pipeline.

Every error raised by this package derives from :class:`IncifindError` so
callers (and the CLI exit-code mapping) can distinguish validation problems
from transport problems.
"""


class IncifindError(Exception):
    """Base class for all package errors."""


# --- corpus ---------------------------------------------------------------

class MalformedRecord(IncifindError):
    def __init__(self, line: int, reason: str):
        super().__init__(f"line {line}: {reason}")
        self.line = line
        self.reason = reason


class OverlappingSpans(IncifindError):
    def __init__(self, report_id: str, detail: str = ""):
        super().__init__(f"report {report_id}: overlapping lesion spans {detail}".rstrip())
        self.report_id = report_id


class DuplicateLesionId(IncifindError):
    def __init__(self, report_id: str, lesion_id: str):
        super().__init__(f"report {report_id}: duplicate lesion_id {lesion_id!r}")
        self.report_id = report_id
        self.lesion_id = lesion_id


class UnknownEnumValue(IncifindError):
    def __init__(self, field: str, value: object):
        super().__init__(f"field {field!r}: unknown value {value!r}")
        self.field = field
        self.value = value


class IoFailure(IncifindError):
    pass


# --- synthgen -------------------------------------------------------------

class InvalidConfig(IncifindError):
    pass


# --- tagging --------------------------------------------------------------

class MalformedTag(IncifindError):
    pass


class UnknownLesion(IncifindError):
    def __init__(self, report_id: str, lesion_id: str):
        super().__init__(f"report {report_id}: no lesion {lesion_id!r}")
        self.report_id = report_id
        self.lesion_id = lesion_id


# --- prompting ------------------------------------------------------------

class MissingAnatomyLine(IncifindError):
    pass


# --- llm_client -----------------------------------------------------------

class TransportError(IncifindError):
    def __init__(self, report_id: str, message: str, attempts: int = 1, retryable: bool = False):
        super().__init__(f"report {report_id}: {message} (attempts={attempts})")
        self.report_id = report_id
        self.attempts = attempts
        self.retryable = retryable


class AuthError(IncifindError):
    pass


class CassetteMiss(IncifindError):
    def __init__(self, report_id: str):
        super().__init__(f"report {report_id}: no cassette entry for this request")
        self.report_id = report_id


# --- parsing --------------------------------------------------------------

class NoJsonFound(IncifindError):
    pass


class UnbalancedBraces(IncifindError):
    pass


class ParseFailure(IncifindError):
    def __init__(self, report_id: str, reason: str):
        super().__init__(f"report {report_id}: {reason}")
        self.report_id = report_id
        self.reason = reason


# --- aggregation ----------------------------------------------------------

class MixedReportIds(IncifindError):
    pass


# --- supervised -----------------------------------------------------------

class EmptyBatch(IncifindError):
    pass


class NoLabeledData(IncifindError):
    pass


# --- ensemble -------------------------------------------------------------

class EmptyVotes(IncifindError):
    pass


class KeyMismatch(IncifindError):
    pass


class TooFewModels(IncifindError):
    pass


# --- evaluation -----------------------------------------------------------

class EmptyMatrix(IncifindError):
    pass


class EmptyPool(IncifindError):
    pass
