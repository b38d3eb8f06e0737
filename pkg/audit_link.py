"""Hash chains, Merkle trees, inclusion proofs and external anchoring.

Chains and trees are computed over serialized EvidenceItem bytes only;
signatures are checked item by item elsewhere.
"""
import os
import struct
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Protocol, Sequence

from config import local_access
from core import EvidenceItem, Params, check_item, serialize_item, suite_hash
from errors import (
    CorruptRecord,
    EmptySequence,
    EncodingError,
    IndexOutOfRange,
    LengthOverflow,
    MalformedItem,
    SequenceConflict,
    SinkUnavailable,
)
from logging_config import setup_logging

logger = setup_logging(__name__)

MAX_CHAIN_LENGTH = (1 << 64) - 1
LEAF_PREFIX = b"\x00"
NODE_PREFIX = b"\x01"
LEFT = "left"
RIGHT = "right"


# hash chain ----------------------------------------------------------------

@dataclass(frozen=True)
class ChainTip:
    tip: bytes
    length: int

    def __post_init__(self):
        if not 0 <= self.length <= MAX_CHAIN_LENGTH:
            raise LengthOverflow(f"chain length {self.length} outside u64")
        if (self.length == 0) != (self.tip == bytes(len(self.tip))):
            raise ValueError("a chain tip is all-zero exactly when the chain is empty")

    @classmethod
    def empty(cls, params: Params | None = None) -> "ChainTip":
        return cls(bytes(params.field_bytes if params else 32), 0)


def extend_chain(params: Params, tip: ChainTip, item: EvidenceItem) -> ChainTip:
    """ℓ' = H(ℓ ∥ item bytes); one hash."""
    if len(tip.tip) != params.field_bytes:
        raise MalformedItem(f"chain tip is {len(tip.tip)} bytes, expected {params.field_bytes}")
    if tip.length >= MAX_CHAIN_LENGTH:
        raise LengthOverflow("chain length would exceed 2^64 - 1")
    return ChainTip(suite_hash(tip.tip + serialize_item(item, params)), tip.length + 1)


def link_chain(params: Params, items: Iterable[EvidenceItem]) -> ChainTip:
    """Fold items from the all-zero tip; exactly n hashes for n items."""
    tip = ChainTip.empty(params)
    for item in items:
        tip = extend_chain(params, tip, item)
    return tip


def verify_chain(params: Params, items: Iterable[EvidenceItem], expected: ChainTip) -> bool:
    """Recompute a chain and compare it with a previously recorded tip."""
    return link_chain(params, items) == expected


# merkle tree ---------------------------------------------------------------

def leaf_hash(params: Params, item: EvidenceItem) -> bytes:
    return suite_hash(LEAF_PREFIX + serialize_item(item, params))


def node_hash(left: bytes, right: bytes) -> bytes:
    return suite_hash(NODE_PREFIX + left + right)


def _levels(params: Params, items: Sequence[EvidenceItem]) -> list[list[bytes]]:
    # unpaired trailing node moves up unchanged
    level = [leaf_hash(params, item) for item in items]
    levels = [level]
    while len(level) > 1:
        nxt = [node_hash(level[i], level[i + 1]) for i in range(0, len(level) - 1, 2)]
        if len(level) % 2:
            nxt.append(level[-1])
        levels.append(nxt)
        level = nxt
    return levels


def link_merkle(params: Params, items: Sequence[EvidenceItem]) -> tuple[bytes, int]:
    """Merkle root and leaf count. n leaf hashes plus n - 1 node hashes."""
    items = list(items)
    if not items:
        raise EmptySequence("a Merkle tree needs at least one item")
    return _levels(params, items)[-1][0], len(items)


@dataclass(frozen=True)
class MerkleProof:
    leaf_index: int
    path: tuple[tuple[bytes, str], ...]
    root: bytes
    tree_size: int


def expected_sides(leaf_index: int, tree_size: int) -> list[str]:
    """Sibling sides along the path of a leaf, skipping levels where it is promoted."""
    sides = []
    idx, size = leaf_index, tree_size
    while size > 1:
        sibling = idx ^ 1
        if sibling < size:
            sides.append(LEFT if sibling < idx else RIGHT)
        idx //= 2
        size = (size + 1) // 2
    return sides


def prove_inclusion(params: Params, items: Sequence[EvidenceItem], index: int) -> MerkleProof:
    items = list(items)
    if not items:
        raise EmptySequence("cannot prove inclusion in an empty tree")
    if not 0 <= index < len(items):
        raise IndexOutOfRange(index, len(items))
    levels = _levels(params, items)
    path = []
    idx = index
    for level in levels[:-1]:
        sibling = idx ^ 1
        if sibling < len(level):
            path.append((level[sibling], LEFT if sibling < idx else RIGHT))
        idx //= 2
    return MerkleProof(leaf_index=index, path=tuple(path), root=levels[-1][0], tree_size=len(items))


def verify_inclusion(params: Params, item: EvidenceItem, proof: MerkleProof) -> bool:
    """Accept (True) iff the item folds up the path to proof.root.

    Malformed proofs reject rather than raise. The sibling sides must match
    the tree shape implied by (leaf_index, tree_size).
    """
    try:
        check_item(item, params)
        if not 0 <= proof.leaf_index < proof.tree_size:
            return False
        if [side for _, side in proof.path] != expected_sides(proof.leaf_index, proof.tree_size):
            return False
        node = leaf_hash(params, item)
        for sibling, side in proof.path:
            if len(sibling) != params.field_bytes:
                return False
            node = node_hash(sibling, node) if side == LEFT else node_hash(node, sibling)
        return node == proof.root
    except (MalformedItem, TypeError, AttributeError, ValueError):
        return False


PROOF_MAGIC = b"CSMP"
PROOF_VERSION = 1


def serialize_proof(proof: MerkleProof) -> bytes:
    out = bytearray(PROOF_MAGIC)
    out += struct.pack(">HQQ", PROOF_VERSION, proof.leaf_index, proof.tree_size)
    out += proof.root
    out += struct.pack(">H", len(proof.path))
    for sibling, side in proof.path:
        out += b"\x00" if side == LEFT else b"\x01"
        out += sibling
    return bytes(out)


def parse_proof(data: bytes, digest_len: int = 32) -> MerkleProof:
    try:
        if data[:4] != PROOF_MAGIC:
            raise EncodingError("bad proof magic")
        version, leaf_index, tree_size = struct.unpack_from(">HQQ", data, 4)
        if version != PROOF_VERSION:
            raise EncodingError(f"unsupported proof version {version}")
        pos = 22
        root = data[pos:pos + digest_len]
        pos += digest_len
        (count,) = struct.unpack_from(">H", data, pos)
        pos += 2
        path = []
        for _ in range(count):
            side_byte = data[pos]
            if side_byte not in (0, 1):
                raise EncodingError(f"bad side byte {side_byte}")
            path.append((bytes(data[pos + 1:pos + 1 + digest_len]), LEFT if side_byte == 0 else RIGHT))
            pos += 1 + digest_len
    except (struct.error, IndexError) as e:
        raise EncodingError(f"truncated proof: {e}") from e
    if pos != len(data) or len(root) != digest_len or any(len(s) != digest_len for s, _ in path):
        raise EncodingError("proof length does not match its declared path")
    return MerkleProof(leaf_index=leaf_index, path=tuple(path), root=bytes(root), tree_size=tree_size)


# anchoring -----------------------------------------------------------------

@dataclass(frozen=True)
class AnchorRecord:
    sequence: int
    label: str
    digest: bytes
    written_us: int


@dataclass(frozen=True)
class AnchorReceipt:
    sink_id: str
    sequence: int
    digest: bytes


class AnchorSink(Protocol):
    """Anything that can durably store short digests under monotonic sequence numbers."""
    sink_id: str

    def append(self, value: bytes, label: str, sequence: int | None = None) -> AnchorReceipt: ...

    def read(self, sequence: int) -> AnchorRecord: ...

    def records(self) -> list[AnchorRecord]: ...


class FileAnchorSink:
    """Append-only local anchor file.

    Layout: "CSAN" ∥ version u16, then records of
    sequence u64 ∥ label length u16 ∥ label ∥ 32-byte digest ∥ write time u64 (µs).
    Single writer per file; readers may run concurrently.
    """
    MAGIC = b"CSAN"
    VERSION = 1
    HEADER = MAGIC + struct.pack(">H", VERSION)
    DIGEST_LEN = 32

    def __init__(self, path):
        self.path = Path(path)
        self.sink_id = f"file:{self.path.resolve()}"

    def _load(self) -> list[AnchorRecord]:
        try:
            data = self.path.read_bytes()
        except FileNotFoundError:
            return []
        except OSError as e:
            logger.error(f"cannot read anchor sink {self.path}: {e}")
            raise SinkUnavailable(self.sink_id, str(e)) from e
        if not data:
            return []
        if data[:len(self.HEADER)] != self.HEADER:
            raise CorruptRecord(self.path, 0, "bad anchor file header")
        records = []
        pos = len(self.HEADER)
        while pos < len(data):
            try:
                sequence, label_len = struct.unpack_from(">QH", data, pos)
                start = pos + 10
                end = start + label_len + self.DIGEST_LEN + 8
                if end > len(data):
                    raise struct.error("short record")
                label = data[start:start + label_len].decode("utf-8")
                digest = data[start + label_len:start + label_len + self.DIGEST_LEN]
                (written_us,) = struct.unpack_from(">Q", data, end - 8)
            except (struct.error, UnicodeDecodeError) as e:
                raise CorruptRecord(self.path, len(records), f"partial or unreadable anchor record: {e}") from e
            records.append(AnchorRecord(sequence, label, bytes(digest), written_us))
            pos = end
        return records

    def records(self) -> list[AnchorRecord]:
        with local_access(self.path):
            return self._load()

    def read(self, sequence: int) -> AnchorRecord:
        """Stored record for a sequence number.

        Raises SequenceConflict if the file holds two different digests under
        the same sequence (equivocation), IndexOutOfRange if it holds none.
        """
        matches = [r for r in self.records() if r.sequence == sequence]
        if not matches:
            raise IndexOutOfRange(sequence, len(self.records()))
        if len({r.digest for r in matches}) > 1:
            raise SequenceConflict(sequence, "sink holds conflicting digests")
        return matches[0]

    def append(self, value: bytes, label: str, sequence: int | None = None) -> AnchorReceipt:
        label_bytes = label.encode("utf-8")
        if len(label_bytes) > 0xFFFF:
            raise ValueError("anchor label longer than 65535 bytes")
        with local_access(self.path, write=True):
            records = self._load()
            next_sequence = max((r.sequence for r in records), default=-1) + 1
            if sequence is not None and sequence != next_sequence:
                existing = [r for r in records if r.sequence == sequence]
                if existing and all(r.digest == value for r in existing):
                    return AnchorReceipt(self.sink_id, sequence, existing[0].digest)
                detail = "already holds a different digest" if existing else f"next free sequence is {next_sequence}"
                raise SequenceConflict(sequence, detail)
            record = struct.pack(">QH", next_sequence, len(label_bytes)) + label_bytes + value \
                + struct.pack(">Q", time.time_ns() // 1000)
            try:
                self.path.parent.mkdir(parents=True, exist_ok=True)
                with open(self.path, "ab") as f:
                    if f.tell() == 0:
                        f.write(self.HEADER)
                    f.write(record)
                    f.flush()
                    os.fsync(f.fileno())
            except OSError as e:
                logger.error(f"anchor append failed for {self.path}: {e}")
                raise SinkUnavailable(self.sink_id, str(e)) from e
        return AnchorReceipt(self.sink_id, next_sequence, value)


def anchor(target: AnchorSink, value: bytes, label: str, sequence: int | None = None) -> AnchorReceipt:
    """Durably publish a tip or root to an external append-only sink."""
    if not isinstance(value, (bytes, bytearray)) or len(value) != 32:
        raise ValueError("anchored value must be a 32-byte digest")
    receipt = target.append(bytes(value), label, sequence)
    logger.info(f"anchored {value.hex()} label={label!r} at {receipt.sink_id} seq={receipt.sequence}")
    return receipt


if __name__ == "__main__":
    pass
