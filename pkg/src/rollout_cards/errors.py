"""Exception hierarchy shared by every module of the toolkit."""

from __future__ import annotations


class RolloutCardError(Exception):
    """Base class for all toolkit errors."""


class ConformanceError(RolloutCardError):
    """A bundle on disk does not satisfy the format contract."""


# -- row parsing -------------------------------------------------------------


class RowError(RolloutCardError):
    pass


class MalformedRecord(RowError):
    def __init__(self, stream: str, detail: str):
        super().__init__(f"{stream}: malformed record ({detail})")
        self.stream = stream
        self.detail = detail


class MissingRequiredColumn(RowError):
    def __init__(self, stream: str, column: str):
        super().__init__(f"{stream}: missing required column {column!r}")
        self.stream = stream
        self.column = column


class TypeMismatch(RowError):
    def __init__(self, stream: str, column: str, expected: str):
        super().__init__(f"{stream}: column {column!r} must be {expected}")
        self.stream = stream
        self.column = column
        self.expected = expected


class InvariantViolation(RolloutCardError):
    pass


# -- bundle io ---------------------------------------------------------------


class IoFailure(RolloutCardError):
    pass


class OversizedInlinePayload(RolloutCardError):
    def __init__(self, event_id: str, byte_length: int, cap: int):
        super().__init__(
            f"payload of {event_id!r} is {byte_length} bytes, above the inline cap of {cap}"
        )
        self.event_id = event_id
        self.byte_length = byte_length


class HashMismatch(ConformanceError):
    def __init__(self, stream: str):
        super().__init__(f"content hash mismatch for stream {stream!r}")
        self.stream = stream


class MissingStream(ConformanceError):
    def __init__(self, stream: str):
        super().__init__(f"stream {stream!r} is listed in the manifest but absent")
        self.stream = stream


class UnsupportedMajorVersion(ConformanceError):
    def __init__(self, found: int, supported: int):
        super().__init__(f"format major version {found} is not supported (toolkit reads {supported}.x)")
        self.found = found
        self.supported = supported


class UnknownDigest(RolloutCardError):
    pass


class DigestMismatch(ConformanceError):
    pass


class RunIdMismatch(RolloutCardError):
    pass


# -- tracked access and views ------------------------------------------------


class UnknownStream(RolloutCardError):
    pass


class UnknownColumn(RolloutCardError):
    pass


class AlreadyFinished(RolloutCardError):
    pass


class MissingSourceField(RolloutCardError):
    def __init__(self, field: str):
        super().__init__(f"card lacks source field {field}")
        self.field = field


class UnknownQuantity(RolloutCardError):
    pass


# -- rules -------------------------------------------------------------------


class DuplicateRule(RolloutCardError):
    pass


class EmptyDenominator(RolloutCardError):
    pass


class UnknownTier(RolloutCardError):
    pass


class MissingVerdictColumn(RolloutCardError):
    pass


class MissingStateRecord(RolloutCardError):
    pass


class RuleNotApplicable(RolloutCardError):
    def __init__(self, system: str, rule: str, missing: str):
        super().__init__(f"rule {rule} cannot score system {system!r}: {missing}")
        self.system = system
        self.rule = rule
        self.missing = missing


class RulesDifferBeyondDenominator(RolloutCardError):
    pass


# -- synthetic fixtures ------------------------------------------------------


class InvalidProfile(RolloutCardError):
    pass


class UnknownFixture(RolloutCardError):
    pass


class UnknownDefectClass(RolloutCardError):
    pass
