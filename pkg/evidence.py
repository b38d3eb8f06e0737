"""Hash-and-sign evidence: generation, verification and batch verification."""
import os
from concurrent.futures import ProcessPoolExecutor, ThreadPoolExecutor
from concurrent.futures.process import BrokenProcessPool
from dataclasses import dataclass
from typing import Sequence

from core import KeyPair, Params, SignedEvidence, EvidenceItem, suite_hash, verify_signature
from encoding import Event, encode_fields
from errors import EmptySequence, EncodingError, MalformedItem, ParamsMismatch
from logging_config import setup_logging

logger = setup_logging(__name__)

ACCEPT = "accept"
REJECT = "reject"

FIELD_MISMATCH = "field_mismatch"
BAD_SIGNATURE = "bad_signature"
MALFORMED = "malformed"
SIGNER_MISMATCH = "signer_mismatch"


@dataclass(frozen=True)
class RejectReason:
    kind: str
    index: int | None = None
    detail: str = ""

    def __str__(self) -> str:
        if self.kind == FIELD_MISMATCH:
            return f"{self.kind}({self.index})"
        return self.kind


@dataclass(frozen=True)
class VerifyOutcome:
    verdict: str
    reject_reason: RejectReason | None = None
    # filled only in full-scan mode
    mismatched_indices: tuple[int, ...] = ()

    def __post_init__(self):
        if self.verdict == ACCEPT and self.reject_reason is not None:
            raise ValueError("an accepted outcome carries no reject reason")
        if self.verdict not in (ACCEPT, REJECT):
            raise ValueError(f"unknown verdict {self.verdict!r}")

    @property
    def accepted(self) -> bool:
        return self.verdict == ACCEPT

    @classmethod
    def accept(cls) -> "VerifyOutcome":
        return cls(ACCEPT)

    @classmethod
    def reject(cls, kind: str, index: int | None = None, detail: str = "",
               mismatched: tuple[int, ...] = ()) -> "VerifyOutcome":
        return cls(REJECT, RejectReason(kind, index, detail), mismatched)


_ACCEPTED = VerifyOutcome.accept()


def signature_payload(params: Params, item: EvidenceItem) -> bytes:
    """params_digest ∥ serialized item. Binds every signature to its parameter set."""
    return params.params_digest + b"".join(item.fields)


def generate_evidence(params: Params, keypair: KeyPair, event: Event) -> SignedEvidence:
    """Commit to an event with k field hashes and one signature.

    Raises:
        EncodingError: the event violates an encoding limit.
        SigningError: the signing backend failed.
        ParamsMismatch: the key pair belongs to another suite.
    """
    if keypair.suite_id != params.suite_id:
        raise ParamsMismatch(f"key suite {keypair.suite_id} does not match params suite {params.suite_id}")
    item = EvidenceItem(tuple(suite_hash(m) for m in encode_fields(params, event)))
    signature = keypair.sign(signature_payload(params, item))
    return SignedEvidence(item=item, signature=signature, signer_fingerprint=keypair.key_fingerprint)


def _well_formed(params: Params, public_key: bytes, signed: SignedEvidence) -> str | None:
    if not isinstance(signed, SignedEvidence) or not isinstance(signed.item, EvidenceItem):
        return "not a signed evidence record"
    fields = signed.item.fields
    if len(fields) != params.field_count:
        return f"item has {len(fields)} fields, expected {params.field_count}"
    if any(not isinstance(f, (bytes, bytearray)) or len(f) != params.field_bytes for f in fields):
        return "field of the wrong width"
    if not isinstance(signed.signature, (bytes, bytearray)) or len(signed.signature) != params.signature_len:
        return "signature of the wrong length"
    if not isinstance(public_key, (bytes, bytearray)) or len(public_key) != params.suite.public_key_len:
        return "public key of the wrong length"
    return None


def verify_evidence(params: Params, public_key: bytes, event: Event, signed: SignedEvidence,
                    full_scan: bool = False) -> VerifyOutcome:
    """Recompute every field from the event, then check the signature.

    Never raises for bad input: malformed arguments, field mismatches and bad
    signatures all come back as reject verdicts. By default the first
    mismatching index (in index order) is reported; `full_scan` checks every
    field and lists all mismatches.
    """
    problem = _well_formed(params, public_key, signed)
    if problem:
        return VerifyOutcome.reject(MALFORMED, detail=problem)
    try:
        messages = encode_fields(params, event)
    except (EncodingError, MalformedItem, TypeError, AttributeError) as e:
        return VerifyOutcome.reject(MALFORMED, detail=f"event: {e}")

    mismatched = []
    for i, (message, stored) in enumerate(zip(messages, signed.item.fields)):
        if suite_hash(message) != stored:
            if not full_scan:
                return VerifyOutcome.reject(FIELD_MISMATCH, index=i)
            mismatched.append(i)
    if mismatched:
        return VerifyOutcome.reject(FIELD_MISMATCH, index=mismatched[0], mismatched=tuple(mismatched))

    if not verify_signature(public_key, signature_payload(params, signed.item), signed.signature):
        return VerifyOutcome.reject(BAD_SIGNATURE)
    return _ACCEPTED


def _verify_chunk(args) -> list[VerifyOutcome]:
    params, chunk, full_scan = args
    return [verify_evidence(params, pk, event, signed, full_scan) for pk, event, signed in chunk]


def default_workers() -> int:
    return os.cpu_count() or 1


def verify_batch(params: Params, entries: Sequence[tuple[bytes, Event, SignedEvidence]],
                 workers: int | None = None, executor: str = "process",
                 full_scan: bool = False) -> list[VerifyOutcome]:
    """Verify many (public_key, event, evidence) entries, possibly in parallel.

    The result list is positionally aligned with `entries` and identical to
    mapping verify_evidence over them, whatever the degree of parallelism.

    Args:
        workers: parallelism hint; None means all available cores, 1 runs inline.
        executor: "process" for a process pool, "thread" for a thread pool.
    """
    entries = list(entries)
    if not entries:
        raise EmptySequence("verify_batch needs at least one entry")
    workers = default_workers() if workers is None else max(1, int(workers))
    workers = min(workers, len(entries))
    if workers == 1:
        return _verify_chunk((params, entries, full_scan))

    n_chunks = workers * 4
    size = max(1, -(-len(entries) // n_chunks))
    jobs = [(params, entries[i:i + size], full_scan) for i in range(0, len(entries), size)]
    pool_cls = ProcessPoolExecutor if executor == "process" else ThreadPoolExecutor
    try:
        with pool_cls(max_workers=workers) as pool:
            results = list(pool.map(_verify_chunk, jobs))
    except (BrokenProcessPool, OSError, NotImplementedError) as e:
        logger.warning(f"{executor} pool unavailable ({e}); verifying {len(entries)} entries inline")
        return _verify_chunk((params, entries, full_scan))
    outcomes = [outcome for chunk in results for outcome in chunk]
    logger.debug(f"verify_batch() {len(outcomes)} entries, {workers} {executor} workers, "
                 f"{sum(not o.accepted for o in outcomes)} rejected")
    return outcomes


if __name__ == "__main__":
    pass
