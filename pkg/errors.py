"""Exception hierarchy for evidence generation, linking and storage.

Argument-shaped failures also derive from ValueError so callers that only
know the builtin still catch them. Tampered evidence is never an exception:
verification reports it as a reject verdict.
"""


class EvidenceError(Exception):
    """Root of every error raised by this library."""


# setup / keys
class UnsupportedSuite(EvidenceError, ValueError):
    def __init__(self, suite_id):
        super().__init__(f"unsupported suite: {suite_id!r}")
        self.suite_id = suite_id


class InvalidFieldCount(EvidenceError, ValueError):
    def __init__(self, field_count, detail=""):
        msg = f"invalid field count: {field_count!r}"
        super().__init__(f"{msg} ({detail})" if detail else msg)
        self.field_count = field_count


class DuplicateRole(EvidenceError, ValueError):
    def __init__(self, role):
        super().__init__(f"duplicate or non-repeatable field role: {role!r}")
        self.role = role


class EntropyUnavailable(EvidenceError):
    pass


class SigningError(EvidenceError):
    pass


# encoding
class EncodingError(EvidenceError, ValueError):
    pass


class OversizeComponent(EncodingError):
    def __init__(self, component, size, limit):
        super().__init__(f"{component} is {size} bytes/entries, limit {limit}")
        self.component = component
        self.size = size
        self.limit = limit


class InvalidDigestWidth(EncodingError):
    def __init__(self, component, width, expected=32):
        super().__init__(f"{component} digest is {width} bytes, expected {expected}")
        self.component = component
        self.width = width


class MalformedEventLine(EncodingError):
    def __init__(self, line_no, reason):
        super().__init__(f"line {line_no}: {reason}")
        self.line_no = line_no
        self.reason = reason


# items / linking
class MalformedItem(EvidenceError, ValueError):
    pass


class IndexOutOfRange(EvidenceError, IndexError):
    def __init__(self, index, size):
        super().__init__(f"index {index} out of range for size {size}")
        self.index = index
        self.size = size


class EmptySequence(EvidenceError, ValueError):
    pass


class LengthOverflow(EvidenceError, OverflowError):
    pass


# anchoring
class SinkUnavailable(EvidenceError):
    def __init__(self, sink_id, detail):
        super().__init__(f"anchor sink {sink_id} unavailable: {detail}")
        self.sink_id = sink_id


class SequenceConflict(EvidenceError):
    def __init__(self, sequence, detail):
        super().__init__(f"sequence {sequence}: {detail}")
        self.sequence = sequence


# storage
class ParamsMismatch(EvidenceError, ValueError):
    pass


class StorageFailure(EvidenceError):
    def __init__(self, path, detail):
        super().__init__(f"{path}: {detail}")
        self.path = path


class CorruptRecord(EvidenceError):
    def __init__(self, path, index, detail):
        super().__init__(f"{path} record {index}: {detail}")
        self.path = path
        self.index = index


class MissingEvent(EvidenceError):
    def __init__(self, index, digest_hex=None):
        detail = f" (event {digest_hex})" if digest_hex else ""
        super().__init__(f"no stored event for record {index}{detail}")
        self.index = index
        self.digest_hex = digest_hex


class ConfigError(EvidenceError, ValueError):
    pass


class UnknownRole(EvidenceError, ValueError):
    def __init__(self, role):
        super().__init__(f"unknown field role: {role!r}")
        self.role = role
