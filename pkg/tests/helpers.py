"""Golden-vector access and event builders shared by the test modules."""
import hashlib
import random
from pathlib import Path

from bench import synthetic_event
from encoding import Event

GOLDEN_DIR = Path(__file__).parent / "golden"


def golden(name: str) -> bytes:
    """Bytes of a hex golden vector in tests/golden."""
    return bytes.fromhex((GOLDEN_DIR / name).read_text().strip())


def golden_text(name: str) -> str:
    return (GOLDEN_DIR / name).read_text()


def sha(text: str) -> bytes:
    return hashlib.sha256(text.encode()).digest()


def make_golden_event(event_id: bytes = b"evt-0001", prev_link: bytes = bytes(32)) -> Event:
    """The event whose encodings are pinned in tests/golden (see make_vectors.sh)."""
    return Event(
        event_id=event_id,
        workflow_id=b"wf-demo",
        actor="alice",
        timestamp=1700000000,
        config_digest=sha("config"),
        input_refs=(sha("input-a"), sha("input-b")),
        output_refs=(sha("output-a"),),
        env_digest=sha("env"),
        prev_link=prev_link,
        extensions=(("tee", b"attestation"),),
    )


def flip_bit(data: bytes, bit: int) -> bytes:
    out = bytearray(data)
    out[bit // 8] ^= 1 << (bit % 8)
    return bytes(out)


def random_events(n: int, seed: int = 0, payload_bytes: int = 64) -> list[Event]:
    rng = random.Random(seed)
    return [synthetic_event(rng, payload_bytes) for _ in range(n)]
