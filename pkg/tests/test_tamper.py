"""
Tamper suite: every single-bit flip of the golden item and of its signature
must reject, with the reason naming what was flipped.
"""
import pytest

from core import SignedEvidence, deserialize_item
from evidence import BAD_SIGNATURE, FIELD_MISMATCH, generate_evidence, verify_batch, verify_evidence
from tests.helpers import flip_bit, golden, make_golden_event, random_events


@pytest.fixture(scope="module")
def golden_signed(params, keypair):
    return generate_evidence(params, keypair, make_golden_event())


def test_all_2048_item_bit_flips_reject_at_the_flipped_field(params, keypair, golden_signed, golden_event):
    item_bytes = golden("item.hex")
    misses = []
    for bit in range(len(item_bytes) * 8):
        item = deserialize_item(flip_bit(item_bytes, bit), params)
        signed = SignedEvidence(item, golden_signed.signature, golden_signed.signer_fingerprint)
        outcome = verify_evidence(params, keypair.public_key, golden_event, signed)
        field = bit // 256
        if outcome.accepted or outcome.reject_reason.kind != FIELD_MISMATCH or outcome.reject_reason.index != field:
            misses.append(bit)
    assert misses == []


def test_all_512_signature_bit_flips_reject_as_bad_signature(params, keypair, golden_signed, golden_event):
    sig = golden("signature.hex")
    outcomes = [
        verify_evidence(params, keypair.public_key, golden_event,
                        SignedEvidence(golden_signed.item, flip_bit(sig, bit), golden_signed.signer_fingerprint))
        for bit in range(len(sig) * 8)
    ]
    assert len(outcomes) == 512
    assert all(o.reject_reason is not None and o.reject_reason.kind == BAD_SIGNATURE for o in outcomes)


@pytest.mark.integration
def test_ten_thousand_random_events_round_trip(params, keypair):
    events = random_events(10_000, seed=7, payload_bytes=32)
    entries = [(keypair.public_key, e, generate_evidence(params, keypair, e)) for e in events]
    assert all(o.accepted for o in verify_batch(params, entries, workers=1))
