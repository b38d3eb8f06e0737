"""Fixed-size evidence log, sidecar event index, event store and the ingestion/audit loops.

Record j of the evidence log commits to the j-th ingested event; the
sidecar index holds that event's digest at position j so audits can fetch
the event from the content-addressed store.
"""
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from time import perf_counter
from typing import Iterator

import pandas as pd

from audit_link import ChainTip, link_chain, link_merkle
from config import local_access
from core import (
    KeyPair,
    Params,
    SignedEvidence,
    deserialize_signed,
    key_fingerprint,
    parse_params,
    serialize_signed,
    suite_hash,
)
from encoding import Event, canonical_decode, canonical_encode, encode_fields, parse_event_line
from errors import (
    CorruptRecord,
    EncodingError,
    IndexOutOfRange,
    MalformedEventLine,
    MissingEvent,
    ParamsMismatch,
    StorageFailure,
)
from evidence import MALFORMED, SIGNER_MISMATCH, VerifyOutcome, generate_evidence, verify_batch, verify_evidence
from logging_config import setup_logging

logger = setup_logging(__name__)

FORMAT_VERSION = 1
DIGEST_LEN = 32


class _FixedRecordFile:
    """Header followed by equal-size records; O(1) random access by offset."""
    magic = b""

    def __init__(self, path, sync: bool = True):
        self.path = Path(path)
        self.sync = sync
        self.header_size = 0
        self.record_size = 0

    def _create(self, header: bytes) -> None:
        try:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with open(self.path, "xb") as f:
                f.write(header)
                f.flush()
                os.fsync(f.fileno())
        except OSError as e:
            logger.error(f"cannot create {self.path}: {e}")
            raise StorageFailure(self.path, str(e)) from e

    def _file_size(self) -> int:
        try:
            return os.path.getsize(self.path)
        except OSError as e:
            raise StorageFailure(self.path, str(e)) from e

    @property
    def count(self) -> int:
        """Number of complete records."""
        return max(0, self._file_size() - self.header_size) // self.record_size

    @property
    def trailing_bytes(self) -> int:
        """Bytes of a partial record at the end of the file (0 when clean)."""
        return max(0, self._file_size() - self.header_size) % self.record_size

    def __len__(self) -> int:
        return self.count

    def _append_raw(self, data: bytes) -> int:
        with local_access(self.path, write=True):
            size = self._file_size()
            body = size - self.header_size
            if body % self.record_size:
                raise CorruptRecord(self.path, body // self.record_size,
                                    "partial trailing record; refusing to append")
            try:
                with open(self.path, "ab") as f:
                    f.write(data)
                    f.flush()
                    if self.sync:
                        os.fsync(f.fileno())
            except OSError as e:
                logger.error(f"append to {self.path} failed: {e}")
                raise StorageFailure(self.path, str(e)) from e
            return body // self.record_size

    def read_raw(self, index: int) -> bytes:
        with local_access(self.path):
            body = self._file_size() - self.header_size
            complete, trailing = divmod(max(0, body), self.record_size)
            if isinstance(index, bool) or not isinstance(index, int) or index < 0:
                raise IndexOutOfRange(index, complete)
            if index >= complete:
                if index == complete and trailing:
                    raise CorruptRecord(self.path, index, f"only {trailing} of {self.record_size} bytes present")
                raise IndexOutOfRange(index, complete)
            try:
                with open(self.path, "rb") as f:
                    f.seek(self.header_size + index * self.record_size)
                    data = f.read(self.record_size)
            except OSError as e:
                raise StorageFailure(self.path, str(e)) from e
        if len(data) != self.record_size:
            raise CorruptRecord(self.path, index, "short read")
        return data


class EvidenceLog(_FixedRecordFile):
    """Header "CSEL" ∥ version u16 ∥ params serialization, then fixed-size SignedEvidence records.

    Opening an existing file takes its params from the header; creating a new
    one requires params. Pass `sync=False` to skip fsync per append (benchmarks).
    """
    magic = b"CSEL"

    def __init__(self, path, params: Params | None = None, sync: bool = True):
        super().__init__(path, sync)
        if self.path.exists() and self.path.stat().st_size > 0:
            stored, self.header_size = self._read_header()
            if params is not None and params.params_digest != stored.params_digest:
                raise ParamsMismatch(f"{self.path} was written under params "
                                     f"{stored.params_digest.hex()}, not {params.params_digest.hex()}")
            self.params = stored
        else:
            if params is None:
                raise StorageFailure(self.path, "log does not exist and no params were given to create it")
            header = self.magic + struct.pack(">H", FORMAT_VERSION) + params.to_bytes()
            self._create(header)
            self.params = params
            self.header_size = len(header)
            logger.info(f"created evidence log {self.path} (record size {params.record_size} bytes)")
        self.record_size = self.params.record_size

    def _read_header(self) -> tuple[Params, int]:
        try:
            with open(self.path, "rb") as f:
                head = f.read(1 << 16)
        except OSError as e:
            raise StorageFailure(self.path, str(e)) from e
        if head[:4] != self.magic:
            raise CorruptRecord(self.path, 0, "bad evidence log magic")
        (version,) = struct.unpack_from(">H", head, 4)
        if version != FORMAT_VERSION:
            raise CorruptRecord(self.path, 0, f"unsupported log version {version}")
        try:
            return parse_params(head, 6)
        except (EncodingError, ValueError) as e:
            raise CorruptRecord(self.path, 0, f"unreadable params header: {e}") from e

    def append(self, signed: SignedEvidence, params: Params | None = None) -> int:
        """Durably append a record and return its index.

        Raises ParamsMismatch when `params` differs from the log header's.
        """
        if params is not None and params.params_digest != self.params.params_digest:
            raise ParamsMismatch("evidence params do not match the log header")
        return self._append_raw(serialize_signed(signed, self.params))

    def read(self, index: int) -> SignedEvidence:
        return deserialize_signed(self.read_raw(index), self.params)

    def __iter__(self) -> Iterator[SignedEvidence]:
        for i in range(self.count):
            yield self.read(i)


def append_record(log: EvidenceLog, signed: SignedEvidence, params: Params | None = None) -> int:
    return log.append(signed, params)


def read_record(log: EvidenceLog, index: int) -> SignedEvidence:
    return log.read(index)


class SidecarIndex(_FixedRecordFile):
    """"CSIX" ∥ version u16, then one 32-byte event digest per evidence record."""
    magic = b"CSIX"

    def __init__(self, path, sync: bool = True):
        super().__init__(path, sync)
        header = self.magic + struct.pack(">H", FORMAT_VERSION)
        self.header_size = len(header)
        self.record_size = DIGEST_LEN
        if not self.path.exists() or self.path.stat().st_size == 0:
            self._create(header)
        else:
            with open(self.path, "rb") as f:
                if f.read(len(header)) != header:
                    raise CorruptRecord(self.path, 0, "bad sidecar index header")

    @classmethod
    def for_log(cls, log: EvidenceLog) -> "SidecarIndex":
        return cls(log.path.with_name(log.path.name + ".idx"), sync=log.sync)

    def append(self, digest: bytes) -> int:
        if len(digest) != DIGEST_LEN:
            raise ValueError("event digest must be 32 bytes")
        return self._append_raw(digest)

    def read(self, index: int) -> bytes:
        return self.read_raw(index)

    def digests(self) -> list[bytes]:
        with local_access(self.path):
            data = self.path.read_bytes()[self.header_size:]
        usable = len(data) - len(data) % DIGEST_LEN
        return [data[i:i + DIGEST_LEN] for i in range(0, usable, DIGEST_LEN)]


class EventStore:
    """Content-addressed canonical event bytes under <root>/ab/cd/<hex digest>."""

    def __init__(self, root):
        self.root = Path(root)

    def path_for(self, digest: bytes) -> Path:
        h = digest.hex()
        return self.root / h[:2] / h[2:4] / h

    def contains(self, digest: bytes) -> bool:
        return self.path_for(digest).exists()

    def put(self, event: Event) -> bytes:
        """Store an event; returns its digest. Storing the same event twice is a no-op."""
        data = canonical_encode(event)
        digest = suite_hash(data)
        path = self.path_for(digest)
        if path.exists():
            return digest
        tmp = path.with_name(path.name + ".tmp")
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            with open(tmp, "wb") as f:
                f.write(data)
                f.flush()
                os.fsync(f.fileno())
            os.replace(tmp, path)
        except OSError as e:
            logger.error(f"event store write failed for {path}: {e}")
            raise StorageFailure(path, str(e)) from e
        return digest

    def get_bytes(self, digest: bytes) -> bytes:
        try:
            return self.path_for(digest).read_bytes()
        except FileNotFoundError:
            raise MissingEvent(-1, digest.hex()) from None
        except OSError as e:
            raise StorageFailure(self.path_for(digest), str(e)) from e

    def get(self, digest: bytes, check: bool = True) -> Event:
        """Load an event. With `check`, the stored bytes must hash to their name."""
        data = self.get_bytes(digest)
        if check and suite_hash(data) != digest:
            raise CorruptRecord(self.path_for(digest), -1, "stored bytes do not match their digest")
        return canonical_decode(data)

    def stored_digests(self) -> Iterator[bytes]:
        """Digests of every complete event file (interrupted .tmp writes are skipped)."""
        if not self.root.exists():
            return
        for path in sorted(self.root.glob("??/??/*")):
            if len(path.name) != 2 * DIGEST_LEN:
                continue
            try:
                yield bytes.fromhex(path.name)
            except ValueError:
                logger.warning(f"ignoring stray file in event store: {path}")


# ingestion -----------------------------------------------------------------

@dataclass(frozen=True)
class LineRejection:
    line_no: int
    reason: str


@dataclass
class IngestReport:
    accepted: int = 0
    duplicates: int = 0
    rejected: list[LineRejection] = field(default_factory=list)
    appended: list[int] = field(default_factory=list)
    recovered: int = 0

    @property
    def lines(self) -> int:
        return self.accepted + self.duplicates + len(self.rejected)


def _lines(source) -> Iterator[str | bytes]:
    # raw lines; files are read as bytes and decoded one line at a time
    if isinstance(source, (str, Path)):
        try:
            with open(source, "rb") as f:
                yield from f
        except OSError as e:
            raise StorageFailure(source, str(e)) from e
    else:
        yield from source


def _decode_line(line: str | bytes, line_no: int) -> str:
    if isinstance(line, str):
        return line
    try:
        return line.decode("utf-8")
    except UnicodeDecodeError as e:
        raise MalformedEventLine(line_no, f"not valid UTF-8 at byte {e.start}") from e


def _field_digests(params: Params, event: Event) -> tuple[bytes, ...]:
    return tuple(suite_hash(m) for m in encode_fields(params, event))


def _recover_from_store(pending: list[SignedEvidence], params: Params, index: SidecarIndex,
                        event_store: EventStore, known: set[bytes]) -> int:
    """Index log records that were written without their index entry.

    Ingest stores the event before appending its record, so a run interrupted
    between the log and index writes leaves the event in the store. Returns
    the number of records re-indexed; stops at the first record without a
    matching stored event.
    """
    candidates = {}
    for digest in event_store.stored_digests():
        if digest in known:
            continue
        try:
            candidates[_field_digests(params, event_store.get(digest))] = digest
        except (EncodingError, CorruptRecord) as e:
            logger.warning(f"skipping unreadable stored event {digest.hex()}: {e}")
    recovered = 0
    while pending and pending[0].item.fields in candidates:
        digest = candidates.pop(pending.pop(0).item.fields)
        index.append(digest)
        known.add(digest)
        recovered += 1
    return recovered


def ingest_events(source, params: Params, keypair: KeyPair, log: EvidenceLog, event_store: EventStore,
                  index: SidecarIndex | None = None) -> IngestReport:
    """Run the instrumentation loop over an ingestion file or iterable of lines.

    Each valid, not yet seen event is stored, signed and appended. Events
    already recorded (same digest) are counted as duplicates, so re-running an
    interrupted ingest is safe. Log records left without an index entry by an
    interrupted run are re-indexed, from the event store when the event made it
    there, otherwise from the matching input line. Bad lines are reported,
    never fatal; storage failures are.
    """
    logger.info("-"*40)
    start = perf_counter()
    if log.params.params_digest != params.params_digest:
        raise ParamsMismatch("ingest params do not match the evidence log header")
    index = SidecarIndex.for_log(log) if index is None else index
    if index.count > log.count:
        raise StorageFailure(index.path, f"index holds {index.count} digests but log holds {log.count} records")
    known = set(index.digests())
    report = IngestReport()
    pending = [log.read(i) for i in range(index.count, log.count)]
    if pending:
        logger.warning(f"{len(pending)} log record(s) have no index entry; recovering")
        report.recovered = _recover_from_store(pending, params, index, event_store, known)

    for line_no, line in enumerate(_lines(source), start=1):
        try:
            text = _decode_line(line, line_no)
            if not text.strip():
                continue
            event = parse_event_line(text, line_no)
        except MalformedEventLine as e:
            logger.warning(f"rejected line {line_no}: {e.reason}")
            report.rejected.append(LineRejection(line_no, e.reason))
            continue
        digest = suite_hash(canonical_encode(event, validate=False))
        if digest in known:
            report.duplicates += 1
            continue
        if pending:
            if pending[0].item.fields != _field_digests(params, event):
                raise StorageFailure(log.path, f"record {index.count} has no index entry and does not match "
                                               f"the next new event (line {line_no})")
            pending.pop(0)
            event_store.put(event)
            position = index.append(digest)
            report.recovered += 1
        else:
            event_store.put(event)
            position = log.append(generate_evidence(params, keypair, event), params)
            index.append(digest)
        known.add(digest)
        report.accepted += 1
        report.appended.append(position)

    if pending:
        raise StorageFailure(log.path, f"{len(pending)} log record(s) at the end have no stored event to index")

    elapsed = round((perf_counter() - start)*1000, 2)
    logger.info(f"ingest: accepted={report.accepted} duplicates={report.duplicates} rejected={len(report.rejected)}")
    logger.info(f"TIME ingest_events() = {elapsed} ms")
    logger.info("-"*40)
    return report


# audit ---------------------------------------------------------------------

@dataclass
class AuditReport:
    verdicts: list[VerifyOutcome]
    tip: ChainTip
    merkle_root: bytes | None
    trailing_bytes: int = 0

    @property
    def all_accepted(self) -> bool:
        return all(v.accepted for v in self.verdicts)

    @property
    def rejected_indices(self) -> list[int]:
        return [i for i, v in enumerate(self.verdicts) if not v.accepted]

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            "index": range(len(self.verdicts)),
            "verdict": [v.verdict for v in self.verdicts],
            "reason": [str(v.reject_reason) if v.reject_reason else "" for v in self.verdicts],
        })


def _stored_event(i: int, signed: SignedEvidence, digest: bytes | None, event_store: EventStore,
                  expected_fp: bytes) -> Event | VerifyOutcome:
    # the event to re-encode for record i, or an early reject
    if digest is None or not event_store.contains(digest):
        raise MissingEvent(i, digest.hex() if digest else None)
    if signed.signer_fingerprint != expected_fp:
        return VerifyOutcome.reject(SIGNER_MISMATCH)
    try:
        return event_store.get(digest, check=False)
    except EncodingError as e:
        return VerifyOutcome.reject(MALFORMED, detail=f"stored event unreadable: {e}")


def verify_record(log: EvidenceLog, event_store: EventStore, public_key: bytes, params: Params, index: int,
                  sidecar: SidecarIndex | None = None, full_scan: bool = False) -> VerifyOutcome:
    """Verify one logged record against its stored event."""
    if log.params.params_digest != params.params_digest:
        raise ParamsMismatch("verify params do not match the evidence log header")
    sidecar = SidecarIndex.for_log(log) if sidecar is None else sidecar
    signed = log.read(index)
    digest = sidecar.read(index) if index < sidecar.count else None
    prepared = _stored_event(index, signed, digest, event_store, key_fingerprint(public_key))
    if isinstance(prepared, VerifyOutcome):
        return prepared
    return verify_evidence(params, public_key, prepared, signed, full_scan)


def audit_scan(log: EvidenceLog, event_store: EventStore, public_key: bytes, params: Params,
               index: SidecarIndex | None = None, workers: int | None = 1,
               executor: str = "process") -> AuditReport:
    """Verify every record against its stored event and recompute the chain tip and Merkle root.

    Raises:
        MissingEvent: the index or the event store lacks a record's event.
        ParamsMismatch: the log was written under other params.
    """
    logger.info("-"*40)
    start = perf_counter()
    if log.params.params_digest != params.params_digest:
        raise ParamsMismatch("audit params do not match the evidence log header")
    index = SidecarIndex.for_log(log) if index is None else index
    count = log.count
    if log.trailing_bytes:
        logger.warning(f"{log.path} ends with a partial record of {log.trailing_bytes} bytes; auditing {count} complete records")
    records = [log.read(i) for i in range(count)]
    digests = index.digests()
    expected_fp = key_fingerprint(public_key)

    verdicts: list[VerifyOutcome | None] = [None] * count
    pending = []
    for i, signed in enumerate(records):
        prepared = _stored_event(i, signed, digests[i] if i < len(digests) else None, event_store, expected_fp)
        if isinstance(prepared, VerifyOutcome):
            verdicts[i] = prepared
        else:
            pending.append((i, (public_key, prepared, signed)))

    if pending:
        outcomes = verify_batch(params, [entry for _, entry in pending], workers=workers, executor=executor)
        for (i, _), outcome in zip(pending, outcomes):
            verdicts[i] = outcome

    items = [r.item for r in records]
    tip = link_chain(params, items)
    root = link_merkle(params, items)[0] if items else None
    report = AuditReport(verdicts=verdicts, tip=tip, merkle_root=root, trailing_bytes=log.trailing_bytes)

    elapsed = round((perf_counter() - start)*1000, 2)
    logger.info(f"audit: {count} records, {len(report.rejected_indices)} rejected, tip={tip.tip.hex()}")
    logger.info(f"TIME audit_scan() = {elapsed} ms")
    logger.info("-"*40)
    return report


if __name__ == "__main__":
    pass
