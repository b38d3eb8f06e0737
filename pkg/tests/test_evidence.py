"""
Tests for generate_evidence / verify_evidence / verify_batch.
"""
import random
from dataclasses import fields, replace

import pytest

from core import EvidenceItem, SignedEvidence, count_hashes, setup
from encoding import Event
from errors import EmptySequence, ParamsMismatch
from evidence import (
    BAD_SIGNATURE,
    FIELD_MISMATCH,
    MALFORMED,
    VerifyOutcome,
    default_workers,
    generate_evidence,
    signature_payload,
    verify_batch,
    verify_evidence,
)
from tests.helpers import flip_bit, golden, random_events, sha


class TestGenerate:
    def test_golden_item_and_signature(self, params, keypair, golden_event):
        signed = generate_evidence(params, keypair, golden_event)
        assert b"".join(signed.item.fields) == golden("item.hex")
        assert signed.signature == golden("signature.hex")
        assert signed.signer_fingerprint == golden("fingerprint.hex")

    def test_deterministic(self, params, keypair, golden_event):
        assert generate_evidence(params, keypair, golden_event) == generate_evidence(params, keypair, golden_event)

    @pytest.mark.parametrize("k", [1, 8, 16, 64])
    def test_exactly_k_hashes(self, k, keypair, golden_event):
        p = setup(k)
        with count_hashes() as meter:
            generate_evidence(p, keypair, golden_event)
        assert meter.count == k

    def test_key_suite_must_match(self, params, keypair, golden_event):
        with pytest.raises(ParamsMismatch):
            generate_evidence(params, replace(keypair, suite_id="v0"), golden_event)

    def test_signature_binds_params_digest(self, params, keypair, golden_event):
        signed = generate_evidence(params, keypair, golden_event)
        assert signature_payload(params, signed.item).startswith(params.params_digest)


class TestVerify:
    def test_accept(self, params, keypair, golden_event):
        signed = generate_evidence(params, keypair, golden_event)
        outcome = verify_evidence(params, keypair.public_key, golden_event, signed)
        assert outcome == VerifyOutcome.accept()
        assert outcome.reject_reason is None

    def test_exactly_k_hashes(self, params, keypair, golden_event):
        signed = generate_evidence(params, keypair, golden_event)
        with count_hashes() as meter:
            verify_evidence(params, keypair.public_key, golden_event, signed)
        assert meter.count == params.field_count

    @pytest.mark.parametrize("change,index", [
        ({"event_id": b"evt-9999"}, 0),
        ({"input_refs": ()}, 1),
        ({"output_refs": (sha("output-b"),)}, 2),
        ({"config_digest": sha("other config")}, 3),
        ({"env_digest": sha("other env")}, 4),
        ({"prev_link": sha("other link")}, 5),
        ({"actor": "mallory"}, 6),
        ({"timestamp": 1700000001}, 6),
        ({"extensions": ()}, 7),
    ])
    def test_event_change_names_the_field(self, params, keypair, golden_event, change, index):
        signed = generate_evidence(params, keypair, golden_event)
        outcome = verify_evidence(params, keypair.public_key, replace(golden_event, **change), signed)
        assert not outcome.accepted
        assert outcome.reject_reason.kind == FIELD_MISMATCH
        assert outcome.reject_reason.index == index

    def test_first_mismatch_in_index_order(self, params, keypair, golden_event):
        signed = generate_evidence(params, keypair, golden_event)
        changed = replace(golden_event, config_digest=sha("x"), input_refs=())
        assert verify_evidence(params, keypair.public_key, changed, signed).reject_reason.index == 1

    def test_full_scan_lists_every_mismatch(self, params, keypair, golden_event):
        signed = generate_evidence(params, keypair, golden_event)
        changed = replace(golden_event, config_digest=sha("x"), input_refs=(), actor="bob")
        outcome = verify_evidence(params, keypair.public_key, changed, signed, full_scan=True)
        assert outcome.mismatched_indices == (1, 3, 6)
        assert outcome.reject_reason.index == 1

    def test_wrong_key_is_bad_signature(self, params, keypair, other_keypair, golden_event):
        signed = generate_evidence(params, keypair, golden_event)
        outcome = verify_evidence(params, other_keypair.public_key, golden_event, signed)
        assert outcome.reject_reason.kind == BAD_SIGNATURE

    def test_evidence_from_other_params_rejects(self, keypair, golden_event):
        signed = generate_evidence(setup(8), keypair, golden_event)
        other = setup(8, field_roles=["inputs", "context", "outputs", "config",
                                      "environment", "link", "time_actor", "extension"])
        assert not verify_evidence(other, keypair.public_key, golden_event, signed).accepted

    def test_malformed_inputs_reject_without_raising(self, params, keypair, golden_event):
        signed = generate_evidence(params, keypair, golden_event)
        cases = [
            replace(signed, item=EvidenceItem(signed.item.fields[:7])),
            replace(signed, item=EvidenceItem(signed.item.fields[:7] + (bytes(31),))),
            replace(signed, signature=signed.signature[:63]),
            "not evidence",
        ]
        for bad in cases:
            assert verify_evidence(params, keypair.public_key, golden_event, bad).reject_reason.kind == MALFORMED
        assert verify_evidence(params, b"short", golden_event, signed).reject_reason.kind == MALFORMED
        broken = replace(golden_event, config_digest=b"x")
        assert verify_evidence(params, keypair.public_key, broken, signed).reject_reason.kind == MALFORMED

    def test_mutating_any_input_ref_byte_names_inputs(self, params, keypair, golden_event):
        signed = generate_evidence(params, keypair, golden_event)
        assert len(golden_event.input_refs) == 2
        for ref_no, ref in enumerate(golden_event.input_refs):
            for pos in range(len(ref)):
                refs = list(golden_event.input_refs)
                refs[ref_no] = ref[:pos] + bytes([ref[pos] ^ 0x01]) + ref[pos + 1:]
                changed = replace(golden_event, input_refs=tuple(refs))
                outcome = verify_evidence(params, keypair.public_key, changed, signed)
                assert outcome.reject_reason.kind == FIELD_MISMATCH
                assert outcome.reject_reason.index == 1

    @pytest.mark.parametrize("change", [
        {"actor": "\ud800"},
        {"extensions": (("\udc00", b""),)},
    ])
    def test_unencodable_text_rejects_without_raising(self, params, keypair, golden_event, change):
        signed = generate_evidence(params, keypair, golden_event)
        outcome = verify_evidence(params, keypair.public_key, replace(golden_event, **change), signed)
        assert outcome.reject_reason.kind == MALFORMED

    def test_accept_carries_no_reason(self):
        with pytest.raises(ValueError):
            VerifyOutcome("accept", reject_reason=VerifyOutcome.reject(MALFORMED).reject_reason)


def _mutate(event: Event, component: str, rng: random.Random) -> Event:
    value = getattr(event, component)
    if component == "timestamp":
        return replace(event, timestamp=value ^ (1 << rng.randrange(48)))
    if component == "actor":
        return replace(event, actor=value + rng.choice("xyz"))
    if component in ("input_refs", "output_refs"):
        refs = list(value)
        j = rng.randrange(len(refs))
        refs[j] = flip_bit(refs[j], rng.randrange(256))
        return replace(event, **{component: tuple(refs)})
    if component == "extensions":
        tag, ext = value[0]
        return replace(event, extensions=((tag, flip_bit(ext, rng.randrange(len(ext) * 8))),) + value[1:])
    return replace(event, **{component: flip_bit(value, rng.randrange(len(value) * 8))})


class TestBinding:
    def test_changing_any_component_changes_the_item(self, params, keypair):
        rng = random.Random(2024)
        components = [f.name for f in fields(Event)]
        for event in random_events(10_000, seed=13):
            other = _mutate(event, rng.choice(components), rng)
            assert other != event
            assert generate_evidence(params, keypair, event).item != generate_evidence(params, keypair, other).item


def _batch(params, keypair, n, seed=0):
    events = random_events(n, seed=seed)
    entries = [(keypair.public_key, e, generate_evidence(params, keypair, e)) for e in events]
    # tamper with every 100th entry: alternate a changed event and a changed signature
    for i in range(0, n, 100):
        pk, event, signed = entries[i]
        if (i // 100) % 2:
            entries[i] = (pk, replace(event, actor=event.actor + "!"), signed)
        else:
            sig = bytes([signed.signature[0] ^ 1]) + signed.signature[1:]
            entries[i] = (pk, event, SignedEvidence(signed.item, sig, signed.signer_fingerprint))
    return entries


class TestVerifyBatch:
    def test_empty_batch(self, params):
        with pytest.raises(EmptySequence):
            verify_batch(params, [])

    def test_small_batch_matches_sequential(self, params, keypair):
        entries = _batch(params, keypair, 300)
        sequential = [verify_evidence(params, *entry) for entry in entries]
        assert verify_batch(params, entries, workers=1) == sequential
        assert verify_batch(params, entries, workers=3, executor="thread") == sequential
        assert sum(not o.accepted for o in sequential) == 3

    @pytest.mark.integration
    def test_ten_thousand_entries_across_parallelism_hints(self, params, keypair):
        entries = _batch(params, keypair, 10_000, seed=42)
        sequential = [verify_evidence(params, *entry) for entry in entries]
        assert sum(not o.accepted for o in sequential) == 100
        for workers in (1, 2, default_workers()):
            assert verify_batch(params, entries, workers=workers) == sequential
