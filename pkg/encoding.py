"""Event model, canonical serialization and the per-field encoders φ_i.

Every encoder is a pure function of (params, event). Large payloads never
reach an encoder: events carry digests of their inputs and outputs, so the
length of every φ_i message is bounded by the limits below.
"""
import base64
import binascii
import json
import re
import struct
from dataclasses import dataclass, field

from core import Params, ROLE_KINDS, lp, role_kind, suite_hash
from errors import (
    EncodingError,
    IndexOutOfRange,
    InvalidDigestWidth,
    MalformedEventLine,
    OversizeComponent,
)

DIGEST_LEN = 32
MAX_ID_BYTES = 256
MAX_ACTOR_BYTES = 1024
MAX_REFS = 1 << 16
MAX_EXTENSIONS = 64
MAX_TAG_BYTES = 64
MAX_EXTENSION_BYTES = 4096
MAX_TIMESTAMP = (1 << 64) - 1

ROLE_TAG_BYTES = {kind: i + 1 for i, kind in enumerate(ROLE_KINDS)}

EVENT_FIELDS = (
    "event_id", "workflow_id", "actor", "timestamp", "config_digest",
    "input_refs", "output_refs", "env_digest", "prev_link", "extensions",
)
_HEX_DIGEST = re.compile(r"^[0-9a-f]{64}$")


@dataclass(frozen=True)
class Event:
    event_id: bytes
    workflow_id: bytes
    actor: str
    timestamp: int
    config_digest: bytes
    input_refs: tuple[bytes, ...] = ()
    output_refs: tuple[bytes, ...] = ()
    env_digest: bytes = bytes(DIGEST_LEN)
    prev_link: bytes = bytes(DIGEST_LEN)
    extensions: tuple[tuple[str, bytes], ...] = field(default=())


@dataclass(frozen=True)
class FieldRole:
    tag: str
    index: int
    name: str

    @property
    def tag_byte(self) -> int:
        return ROLE_TAG_BYTES[self.tag]


def field_roles(params: Params) -> tuple[FieldRole, ...]:
    return tuple(FieldRole(tag=role_kind(name), index=i, name=name) for i, name in enumerate(params.field_roles))


def _check_digest(name: str, value: bytes) -> None:
    if not isinstance(value, (bytes, bytearray)) or len(value) != DIGEST_LEN:
        width = len(value) if isinstance(value, (bytes, bytearray)) else -1
        raise InvalidDigestWidth(name, width, DIGEST_LEN)


def _check_bytes(name: str, value: bytes, low: int, high: int) -> None:
    if not isinstance(value, (bytes, bytearray)):
        raise EncodingError(f"{name} must be bytes")
    if len(value) > high:
        raise OversizeComponent(name, len(value), high)
    if len(value) < low:
        raise EncodingError(f"{name} must be at least {low} byte(s)")


def _utf8(name: str, text: str) -> bytes:
    try:
        return text.encode("utf-8")
    except UnicodeEncodeError as e:
        raise EncodingError(f"{name} is not valid UTF-8 text: {e.reason}") from e


def validate_event(event: Event) -> None:
    """Raise if the event violates a width or size limit."""
    _check_bytes("event_id", event.event_id, 1, MAX_ID_BYTES)
    _check_bytes("workflow_id", event.workflow_id, 1, MAX_ID_BYTES)
    if not isinstance(event.actor, str):
        raise EncodingError("actor must be a string")
    actor_len = len(_utf8("actor", event.actor))
    if actor_len > MAX_ACTOR_BYTES:
        raise OversizeComponent("actor", actor_len, MAX_ACTOR_BYTES)
    if isinstance(event.timestamp, bool) or not isinstance(event.timestamp, int) \
            or not 0 <= event.timestamp <= MAX_TIMESTAMP:
        raise EncodingError(f"timestamp must be an unsigned 64-bit integer, got {event.timestamp!r}")
    _check_digest("config_digest", event.config_digest)
    _check_digest("env_digest", event.env_digest)
    _check_digest("prev_link", event.prev_link)
    for name in ("input_refs", "output_refs"):
        refs = getattr(event, name)
        if len(refs) > MAX_REFS:
            raise OversizeComponent(name, len(refs), MAX_REFS)
        for i, ref in enumerate(refs):
            _check_digest(f"{name}[{i}]", ref)
    if len(event.extensions) > MAX_EXTENSIONS:
        raise OversizeComponent("extensions", len(event.extensions), MAX_EXTENSIONS)
    tags = set()
    for tag, value in event.extensions:
        if not isinstance(tag, str):
            raise EncodingError("extension tag must be a string")
        _check_bytes(f"extension tag {tag!r}", _utf8("extension tag", tag), 1, MAX_TAG_BYTES)
        _check_bytes(f"extension {tag!r}", value, 0, MAX_EXTENSION_BYTES)
        if tag in tags:
            raise EncodingError(f"duplicate extension tag {tag!r}")
        tags.add(tag)


# canonical form ------------------------------------------------------------

def _refs(refs) -> bytes:
    return struct.pack(">I", len(refs)) + b"".join(refs)


def _extensions(extensions) -> bytes:
    out = bytearray(struct.pack(">I", len(extensions)))
    for tag, value in extensions:
        out += lp(tag.encode("utf-8"))
        out += lp(bytes(value))
    return bytes(out)


def canonical_encode(event: Event, validate: bool = True) -> bytes:
    """Deterministic, injective byte form of an event.

    Variable-length components carry a 4-byte big-endian length, lists a 4-byte
    count; digests and the u64 timestamp are fixed width.
    """
    if validate:
        validate_event(event)
    return b"".join((
        lp(bytes(event.event_id)),
        lp(bytes(event.workflow_id)),
        lp(event.actor.encode("utf-8")),
        struct.pack(">Q", event.timestamp),
        bytes(event.config_digest),
        _refs(event.input_refs),
        _refs(event.output_refs),
        bytes(event.env_digest),
        bytes(event.prev_link),
        _extensions(event.extensions),
    ))


class _Reader:
    def __init__(self, data: bytes):
        self.data = memoryview(data)
        self.pos = 0

    def take(self, n: int) -> bytes:
        if n < 0 or self.pos + n > len(self.data):
            raise EncodingError(f"truncated event encoding at offset {self.pos}")
        chunk = bytes(self.data[self.pos:self.pos + n])
        self.pos += n
        return chunk

    def u32(self) -> int:
        return struct.unpack(">I", self.take(4))[0]

    def u64(self) -> int:
        return struct.unpack(">Q", self.take(8))[0]

    def prefixed(self) -> bytes:
        return self.take(self.u32())

    def refs(self) -> tuple[bytes, ...]:
        count = self.u32()
        if count > MAX_REFS:
            raise OversizeComponent("refs", count, MAX_REFS)
        return tuple(self.take(DIGEST_LEN) for _ in range(count))


def canonical_decode(data: bytes) -> Event:
    """Inverse of canonical_encode."""
    r = _Reader(data)
    try:
        event_id = r.prefixed()
        workflow_id = r.prefixed()
        actor = r.prefixed().decode("utf-8")
        timestamp = r.u64()
        config_digest = r.take(DIGEST_LEN)
        input_refs = r.refs()
        output_refs = r.refs()
        env_digest = r.take(DIGEST_LEN)
        prev_link = r.take(DIGEST_LEN)
        count = r.u32()
        if count > MAX_EXTENSIONS:
            raise OversizeComponent("extensions", count, MAX_EXTENSIONS)
        extensions = tuple((r.prefixed().decode("utf-8"), r.prefixed()) for _ in range(count))
    except UnicodeDecodeError as e:
        raise EncodingError(f"invalid UTF-8 in event encoding: {e}") from e
    if r.pos != len(data):
        raise EncodingError(f"{len(data) - r.pos} trailing bytes after event encoding")
    event = Event(event_id, workflow_id, actor, timestamp, config_digest,
                  input_refs, output_refs, env_digest, prev_link, extensions)
    validate_event(event)
    return event


def event_digest(event: Event) -> bytes:
    """Content address of an event: H(canonical_encode(E))."""
    return suite_hash(canonical_encode(event))


# per-field encoders --------------------------------------------------------

def _context_payload(event: Event) -> bytes:
    return lp(bytes(event.workflow_id)) + lp(bytes(event.event_id))


def _inputs_payload(event: Event) -> bytes:
    return _refs(event.input_refs)


def _outputs_payload(event: Event) -> bytes:
    return _refs(event.output_refs)


def _config_payload(event: Event) -> bytes:
    return bytes(event.config_digest)


def _environment_payload(event: Event) -> bytes:
    return bytes(event.env_digest)


def _link_payload(event: Event) -> bytes:
    return bytes(event.prev_link)


def _time_actor_payload(event: Event) -> bytes:
    return struct.pack(">Q", event.timestamp) + lp(event.actor.encode("utf-8"))


def _extension_payload(event: Event) -> bytes:
    return _extensions(event.extensions)


_PAYLOADS = {
    "context": _context_payload,
    "inputs": _inputs_payload,
    "outputs": _outputs_payload,
    "config": _config_payload,
    "environment": _environment_payload,
    "link": _link_payload,
    "time_actor": _time_actor_payload,
    "extension": _extension_payload,
}


def _message(params: Params, index: int, kind: str, event: Event) -> bytes:
    return bytes((ROLE_TAG_BYTES[kind], index)) + params.params_digest + _PAYLOADS[kind](event)


def phi(params: Params, index: int, event: Event, validate: bool = True) -> bytes:
    """Domain-separated message m_i = role byte ∥ index byte ∥ params_digest ∥ payload."""
    if isinstance(index, bool) or not isinstance(index, int) or not 0 <= index < params.field_count:
        raise IndexOutOfRange(index, params.field_count)
    if validate:
        validate_event(event)
    return _message(params, index, role_kind(params.field_roles[index]), event)


def encode_fields(params: Params, event: Event) -> list[bytes]:
    """All k messages for an event, validating it once."""
    validate_event(event)
    return [_message(params, i, role_kind(name), event) for i, name in enumerate(params.field_roles)]


def max_message_len(params: Params) -> int:
    """Upper bound on |phi(i, E)| for any valid event under these params."""
    prefix = 2 + params.field_bytes
    ext = 4 + MAX_EXTENSIONS * (4 + MAX_TAG_BYTES + 4 + MAX_EXTENSION_BYTES)
    bounds = {
        "context": 8 + 2 * MAX_ID_BYTES,
        "inputs": 4 + MAX_REFS * DIGEST_LEN,
        "outputs": 4 + MAX_REFS * DIGEST_LEN,
        "config": DIGEST_LEN,
        "environment": DIGEST_LEN,
        "link": DIGEST_LEN,
        "time_actor": 8 + 4 + MAX_ACTOR_BYTES,
        "extension": ext,
    }
    return prefix + max(bounds[role_kind(r)] for r in params.field_roles)


# ingestion lines -----------------------------------------------------------

def _hex_digest(value, name: str) -> bytes:
    if not isinstance(value, str) or not _HEX_DIGEST.match(value):
        raise EncodingError(f"{name} must be 64 lowercase hex characters")
    return bytes.fromhex(value)


def _b64(value, name: str) -> bytes:
    if not isinstance(value, str):
        raise EncodingError(f"{name} must be a base64 string")
    try:
        return base64.b64decode(value, validate=True)
    except (binascii.Error, ValueError) as e:
        raise EncodingError(f"{name} is not valid base64: {e}") from e


def parse_event_line(text: str, line_no: int = 0) -> Event:
    """Decode one ingestion line (a JSON object keyed by Event field names)."""
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as e:
        raise MalformedEventLine(line_no, f"invalid JSON: {e.msg}") from e
    if not isinstance(obj, dict):
        raise MalformedEventLine(line_no, "record must be a JSON object")
    missing = [k for k in EVENT_FIELDS if k not in obj]
    extra = sorted(k for k in obj if k not in EVENT_FIELDS)
    if missing or extra:
        raise MalformedEventLine(line_no, f"missing keys {missing} extra keys {extra}")
    try:
        for name in ("input_refs", "output_refs", "extensions"):
            if not isinstance(obj[name], list):
                raise EncodingError(f"{name} must be a list")
        if not isinstance(obj["actor"], str):
            raise EncodingError("actor must be a string")
        if isinstance(obj["timestamp"], bool) or not isinstance(obj["timestamp"], int):
            raise EncodingError("timestamp must be an integer")
        extensions = []
        for i, entry in enumerate(obj["extensions"]):
            if not isinstance(entry, dict) or set(entry) != {"tag", "value"} or not isinstance(entry["tag"], str):
                raise EncodingError(f"extensions[{i}] must be an object with 'tag' and 'value'")
            extensions.append((entry["tag"], _b64(entry["value"], f"extensions[{i}].value")))
        event = Event(
            event_id=_b64(obj["event_id"], "event_id"),
            workflow_id=_b64(obj["workflow_id"], "workflow_id"),
            actor=obj["actor"],
            timestamp=obj["timestamp"],
            config_digest=_hex_digest(obj["config_digest"], "config_digest"),
            input_refs=tuple(_hex_digest(v, f"input_refs[{i}]") for i, v in enumerate(obj["input_refs"])),
            output_refs=tuple(_hex_digest(v, f"output_refs[{i}]") for i, v in enumerate(obj["output_refs"])),
            env_digest=_hex_digest(obj["env_digest"], "env_digest"),
            prev_link=_hex_digest(obj["prev_link"], "prev_link"),
            extensions=tuple(extensions),
        )
        validate_event(event)
    except EncodingError as e:
        if isinstance(e, MalformedEventLine):
            raise
        raise MalformedEventLine(line_no, str(e)) from e
    return event


def event_to_line(event: Event) -> str:
    """Encode an event as one ingestion line (inverse of parse_event_line)."""
    obj = {
        "event_id": base64.b64encode(event.event_id).decode("ascii"),
        "workflow_id": base64.b64encode(event.workflow_id).decode("ascii"),
        "actor": event.actor,
        "timestamp": event.timestamp,
        "config_digest": event.config_digest.hex(),
        "input_refs": [r.hex() for r in event.input_refs],
        "output_refs": [r.hex() for r in event.output_refs],
        "env_digest": event.env_digest.hex(),
        "prev_link": event.prev_link.hex(),
        "extensions": [{"tag": t, "value": base64.b64encode(v).decode("ascii")} for t, v in event.extensions],
    }
    return json.dumps(obj, separators=(",", ":"), ensure_ascii=False)


if __name__ == "__main__":
    pass
