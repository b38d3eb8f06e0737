"""Public parameters, key material and the constant-size evidence item.

Suite "v1" is SHA-256 for every hash and Ed25519 for signatures. All types
here are frozen dataclasses and safe to share across threads.
"""
import hashlib
import secrets
import struct
import threading
from contextlib import contextmanager
from dataclasses import dataclass, field
from functools import lru_cache

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives import serialization
from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PrivateKey, Ed25519PublicKey

from errors import (
    DuplicateRole,
    EncodingError,
    EntropyUnavailable,
    InvalidFieldCount,
    MalformedItem,
    SigningError,
    UnknownRole,
    UnsupportedSuite,
)
from logging_config import setup_logging

logger = setup_logging(__name__)

PARAMS_MAGIC = b"CSEV"
PARAMS_VERSION = 1
MIN_FIELDS = 1
MAX_FIELDS = 64
DEFAULT_FIELD_COUNT = 8

ROLE_KINDS = ("context", "inputs", "outputs", "config", "environment", "link", "time_actor", "extension")
DEFAULT_ROLES = ROLE_KINDS
REPEATABLE_KIND = "extension"


@dataclass(frozen=True)
class Suite:
    suite_id: str
    field_bits: int
    secret_key_len: int
    public_key_len: int
    signature_len: int

    @property
    def digest_len(self) -> int:
        return self.field_bits // 8


SUITES = {
    "v1": Suite(suite_id="v1", field_bits=256, secret_key_len=32, public_key_len=32, signature_len=64),
}


def get_suite(suite_id: str) -> Suite:
    try:
        return SUITES[suite_id]
    except (KeyError, TypeError):
        raise UnsupportedSuite(suite_id) from None


# hash accounting -----------------------------------------------------------

class HashMeter:
    """Thread-safe count of suite-hash evaluations."""
    def __init__(self):
        self._lock = threading.Lock()
        self.count = 0

    def add(self, n: int = 1) -> None:
        with self._lock:
            self.count += n


_meters_lock = threading.Lock()
_active_meters: tuple[HashMeter, ...] = ()


@contextmanager
def count_hashes():
    """Count every suite_hash call made (by any thread) while the block runs.

    Example:
        with count_hashes() as meter:
            generate_evidence(params, keypair, event)
        assert meter.count == params.field_count
    """
    global _active_meters
    meter = HashMeter()
    with _meters_lock:
        _active_meters = _active_meters + (meter,)
    try:
        yield meter
    finally:
        with _meters_lock:
            _active_meters = tuple(m for m in _active_meters if m is not meter)


def suite_hash(data: bytes) -> bytes:
    """H for suite v1. Every hash the library takes goes through here."""
    meters = _active_meters
    if meters:
        for meter in meters:
            meter.add()
    return hashlib.sha256(data).digest()


def lp(data: bytes) -> bytes:
    """4-byte big-endian length prefix."""
    return struct.pack(">I", len(data)) + data


# parameters ----------------------------------------------------------------

def role_kind(role: str) -> str:
    return role.split(":", 1)[0]


def default_roles(field_count: int = DEFAULT_FIELD_COUNT) -> tuple[str, ...]:
    """Default registry: the eight base roles, then extension:<i> for i >= 8."""
    base = DEFAULT_ROLES[:field_count]
    extra = tuple(f"{REPEATABLE_KIND}:{i}" for i in range(len(DEFAULT_ROLES), field_count))
    return base + extra


def _validate_roles(field_count: int, field_roles) -> tuple[str, ...]:
    roles = tuple(field_roles)
    if len(roles) != field_count:
        raise InvalidFieldCount(field_count, f"{len(roles)} roles given")
    seen_tags = set()
    seen_kinds = set()
    for role in roles:
        if not isinstance(role, str) or role_kind(role) not in ROLE_KINDS:
            raise UnknownRole(role)
        if ":" in role and role_kind(role) != REPEATABLE_KIND:
            raise UnknownRole(role)
        kind = role_kind(role)
        if role in seen_tags or (kind in seen_kinds and kind != REPEATABLE_KIND):
            raise DuplicateRole(role)
        seen_tags.add(role)
        seen_kinds.add(kind)
    return roles


@dataclass(frozen=True)
class Params:
    field_count: int
    field_bits: int
    field_roles: tuple[str, ...]
    suite_id: str
    params_digest: bytes = field(repr=False)

    @property
    def suite(self) -> Suite:
        return get_suite(self.suite_id)

    @property
    def field_bytes(self) -> int:
        return self.field_bits // 8

    @property
    def item_size(self) -> int:
        """k·λ/8 bytes."""
        return self.field_count * self.field_bytes

    @property
    def signature_len(self) -> int:
        return self.suite.signature_len

    @property
    def record_size(self) -> int:
        """Serialized SignedEvidence: item ∥ signature ∥ signer fingerprint."""
        return self.item_size + self.signature_len + self.field_bytes

    def to_bytes(self) -> bytes:
        return serialize_params(self.field_count, self.field_bits, self.suite_id, self.field_roles)


def serialize_params(field_count: int, field_bits: int, suite_id: str, field_roles) -> bytes:
    """Canonical params layout: magic ∥ version ∥ k ∥ λ/8 ∥ suite_id ∥ role tags."""
    out = bytearray(PARAMS_MAGIC)
    out += struct.pack(">HBH", PARAMS_VERSION, field_count, field_bits // 8)
    out += lp(suite_id.encode("utf-8"))
    for role in field_roles:
        out += lp(role.encode("utf-8"))
    return bytes(out)


def setup(field_count: int = DEFAULT_FIELD_COUNT, suite_id: str = "v1", field_roles=None) -> Params:
    """Build public parameters. Deterministic for identical inputs.

    Raises:
        UnsupportedSuite: suite_id is not known.
        InvalidFieldCount: field_count outside [1, 64] or role list of the wrong length.
        DuplicateRole: a role tag repeats, or a non-extension kind appears twice.
        UnknownRole: a role tag names no known encoder.
    """
    suite = get_suite(suite_id)
    if isinstance(field_count, bool) or not isinstance(field_count, int):
        raise InvalidFieldCount(field_count, "not an integer")
    if not MIN_FIELDS <= field_count <= MAX_FIELDS:
        raise InvalidFieldCount(field_count, f"must be in [{MIN_FIELDS}, {MAX_FIELDS}]")
    roles = default_roles(field_count) if field_roles is None else _validate_roles(field_count, field_roles)
    encoded = serialize_params(field_count, suite.field_bits, suite_id, roles)
    params = Params(
        field_count=field_count,
        field_bits=suite.field_bits,
        field_roles=roles,
        suite_id=suite_id,
        params_digest=suite_hash(encoded),
    )
    logger.debug(f"setup() k={field_count} suite={suite_id} digest={params.params_digest.hex()}")
    return params


def parse_params(data: bytes, offset: int = 0) -> tuple[Params, int]:
    """Parse a serialized Params starting at `offset`.

    Returns the Params and the offset just past it (the layout is self-delimiting).
    """
    view = memoryview(data)
    try:
        if bytes(view[offset:offset + 4]) != PARAMS_MAGIC:
            raise EncodingError("bad params magic")
        version, field_count, field_width = struct.unpack_from(">HBH", data, offset + 4)
        if version != PARAMS_VERSION:
            raise EncodingError(f"unsupported params version {version}")
        pos = offset + 9
        strings = []
        for _ in range(field_count + 1):
            (length,) = struct.unpack_from(">I", data, pos)
            pos += 4
            if pos + length > len(data):
                raise EncodingError("truncated params")
            strings.append(bytes(view[pos:pos + length]).decode("utf-8"))
            pos += length
    except (struct.error, UnicodeDecodeError) as e:
        raise EncodingError(f"malformed params: {e}") from e
    suite_id, roles = strings[0], strings[1:]
    params = setup(field_count, suite_id, roles)
    if params.field_bytes != field_width:
        raise EncodingError(f"params declare {field_width}-byte fields, suite {suite_id} uses {params.field_bytes}")
    return params, pos


# keys ----------------------------------------------------------------------

@lru_cache(maxsize=64)
def _private_key(secret_key: bytes) -> Ed25519PrivateKey:
    return Ed25519PrivateKey.from_private_bytes(secret_key)


@lru_cache(maxsize=1024)
def _public_key(public_key: bytes) -> Ed25519PublicKey:
    return Ed25519PublicKey.from_public_bytes(public_key)


@dataclass(frozen=True)
class KeyPair:
    secret_key: bytes = field(repr=False)
    public_key: bytes
    key_fingerprint: bytes
    suite_id: str = "v1"

    def sign(self, message: bytes) -> bytes:
        try:
            return _private_key(self.secret_key).sign(message)
        except Exception as e:
            logger.error(f"signing failed: {e}")
            raise SigningError(str(e)) from e


def key_fingerprint(public_key: bytes) -> bytes:
    return suite_hash(public_key)


def keypair_from_secret(secret_key: bytes, suite_id: str = "v1") -> KeyPair:
    suite = get_suite(suite_id)
    if len(secret_key) != suite.secret_key_len:
        raise ValueError(f"secret key must be {suite.secret_key_len} bytes, got {len(secret_key)}")
    public_key = _private_key(bytes(secret_key)).public_key().public_bytes(
        encoding=serialization.Encoding.Raw,
        format=serialization.PublicFormat.Raw,
    )
    return KeyPair(
        secret_key=bytes(secret_key),
        public_key=public_key,
        key_fingerprint=key_fingerprint(public_key),
        suite_id=suite_id,
    )


def keygen(seed: bytes | None = None, suite_id: str = "v1") -> KeyPair:
    """Generate a signing key pair.

    With a 32-byte seed the pair is derived deterministically (test mode);
    without one the seed comes from the OS entropy source.
    """
    if seed is None:
        try:
            seed = secrets.token_bytes(32)
        except (OSError, NotImplementedError) as e:
            raise EntropyUnavailable(f"system entropy unavailable: {e}") from e
    elif len(seed) != 32:
        raise ValueError(f"seed must be exactly 32 bytes, got {len(seed)}")
    return keypair_from_secret(seed, suite_id)


def verify_signature(public_key: bytes, message: bytes, signature: bytes) -> bool:
    try:
        _public_key(bytes(public_key)).verify(bytes(signature), message)
        return True
    except (InvalidSignature, ValueError):
        return False


# evidence items ------------------------------------------------------------

@dataclass(frozen=True)
class EvidenceItem:
    fields: tuple[bytes, ...]


@dataclass(frozen=True)
class SignedEvidence:
    item: EvidenceItem
    signature: bytes
    signer_fingerprint: bytes


def check_item(item: EvidenceItem, params: Params) -> None:
    if len(item.fields) != params.field_count:
        raise MalformedItem(f"item has {len(item.fields)} fields, params require {params.field_count}")
    for i, f in enumerate(item.fields):
        if len(f) != params.field_bytes:
            raise MalformedItem(f"field {i} is {len(f)} bytes, expected {params.field_bytes}")


def serialize_item(item: EvidenceItem, params: Params | None = None) -> bytes:
    """f_0 ∥ f_1 ∥ … ∥ f_{k-1}; exactly k·λ/8 bytes."""
    if params is not None:
        check_item(item, params)
    elif any(len(f) != 32 for f in item.fields) or not item.fields:
        raise MalformedItem("item fields must be 32-byte digests")
    return b"".join(item.fields)


def deserialize_item(data: bytes, params: Params) -> EvidenceItem:
    if len(data) != params.item_size:
        raise MalformedItem(f"item is {len(data)} bytes, expected {params.item_size}")
    w = params.field_bytes
    return EvidenceItem(tuple(bytes(data[i:i + w]) for i in range(0, len(data), w)))


def serialize_signed(signed: SignedEvidence, params: Params) -> bytes:
    if len(signed.signature) != params.signature_len:
        raise MalformedItem(f"signature is {len(signed.signature)} bytes, expected {params.signature_len}")
    if len(signed.signer_fingerprint) != params.field_bytes:
        raise MalformedItem("signer fingerprint has the wrong width")
    return serialize_item(signed.item, params) + signed.signature + signed.signer_fingerprint


def deserialize_signed(data: bytes, params: Params) -> SignedEvidence:
    if len(data) != params.record_size:
        raise MalformedItem(f"record is {len(data)} bytes, expected {params.record_size}")
    sig_end = params.item_size + params.signature_len
    return SignedEvidence(
        item=deserialize_item(data[:params.item_size], params),
        signature=bytes(data[params.item_size:sig_end]),
        signer_fingerprint=bytes(data[sig_end:]),
    )


if __name__ == "__main__":
    pass
