"""
Tests for hash chains, Merkle roots and inclusion proofs.

The Merkle oracle below is an independent recursive (largest power of two
split) construction over hashlib, not the library's level-wise builder.
"""
import hashlib
import math
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from audit_link import (
    LEFT,
    ChainTip,
    MerkleProof,
    expected_sides,
    extend_chain,
    link_chain,
    link_merkle,
    parse_proof,
    prove_inclusion,
    serialize_proof,
    verify_chain,
    verify_inclusion,
)
from core import EvidenceItem, count_hashes, deserialize_item, setup
from errors import EmptySequence, EncodingError, IndexOutOfRange, LengthOverflow, MalformedItem
from tests.helpers import flip_bit, golden


def random_item(rng: random.Random, k: int = 8) -> EvidenceItem:
    return EvidenceItem(tuple(rng.randbytes(32) for _ in range(k)))


def oracle_root(leaves: list[bytes]) -> bytes:
    if len(leaves) == 1:
        return hashlib.sha256(b"\x00" + leaves[0]).digest()
    k = 1 << (len(leaves) - 1).bit_length() - 1
    return hashlib.sha256(b"\x01" + oracle_root(leaves[:k]) + oracle_root(leaves[k:])).digest()


def oracle_tip(items: list[EvidenceItem]) -> bytes:
    tip = bytes(32)
    for item in items:
        tip = hashlib.sha256(tip + b"".join(item.fields)).digest()
    return tip


@pytest.fixture(scope="module")
def golden_items(params):
    return [deserialize_item(golden("item.hex"), params), deserialize_item(golden("item2.hex"), params)]


class TestChain:
    def test_empty_chain_is_zero_tip(self, params):
        tip = link_chain(params, [])
        assert tip == ChainTip(bytes(32), 0)
        assert tip.tip.hex() == "0" * 64

    def test_golden_tips(self, params, golden_items):
        assert link_chain(params, golden_items[:1]) == ChainTip(golden("chain_tip_1.hex"), 1)
        assert link_chain(params, golden_items) == ChainTip(golden("chain_tip_2.hex"), 2)

    def test_extend_matches_fold(self, params, golden_items):
        tip = extend_chain(params, ChainTip.empty(params), golden_items[0])
        assert extend_chain(params, tip, golden_items[1]) == link_chain(params, golden_items)

    def test_hundred_item_fold_matches_oracle(self, params):
        rng = random.Random(100)
        items = [random_item(rng) for _ in range(100)]
        tip = ChainTip.empty(params)
        for item in items:
            tip = extend_chain(params, tip, item)
        assert tip == link_chain(params, items)
        assert tip == ChainTip(oracle_tip(items), 100)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(min_value=0, max_value=1000), st.integers(min_value=0), st.data())
    def test_extending_any_prefix_matches_full_fold(self, n, seed, data):
        params = setup(8)
        rng = random.Random(seed)
        items = [random_item(rng) for _ in range(n)]
        split = data.draw(st.integers(min_value=0, max_value=n))
        tip = link_chain(params, items[:split])
        for item in items[split:]:
            tip = extend_chain(params, tip, item)
        assert tip == link_chain(params, items)
        assert tip == ChainTip(oracle_tip(items), n)

    def test_n_hashes_for_n_items(self, params):
        rng = random.Random(1)
        items = [random_item(rng) for _ in range(37)]
        with count_hashes() as meter:
            link_chain(params, items)
        assert meter.count == 37

    def test_verify_chain(self, params, golden_items):
        tip = link_chain(params, golden_items)
        assert verify_chain(params, golden_items, tip)
        assert not verify_chain(params, golden_items[::-1], tip)

    def test_wrong_width_item(self, params):
        with pytest.raises(MalformedItem):
            extend_chain(params, ChainTip.empty(params), EvidenceItem((bytes(32),) * 7))

    def test_length_limits(self, params, golden_items):
        with pytest.raises(LengthOverflow):
            ChainTip(b"\x01" * 32, 1 << 64)
        with pytest.raises(LengthOverflow):
            extend_chain(params, ChainTip(b"\x01" * 32, (1 << 64) - 1), golden_items[0])

    def test_zero_tip_only_for_empty_chain(self):
        with pytest.raises(ValueError):
            ChainTip(bytes(32), 3)
        with pytest.raises(ValueError):
            ChainTip(b"\x01" * 32, 0)

    @pytest.mark.integration
    def test_ten_thousand_mutations_change_the_tip(self, params):
        rng = random.Random(2024)
        collisions = []
        for trial in range(10_000):
            items = [random_item(rng) for _ in range(rng.randint(2, 100))]
            original = link_chain(params, items).tip
            mutated = list(items)
            kind = trial % 3
            if kind == 0:
                del mutated[rng.randrange(len(mutated))]
            elif kind == 1:
                mutated.insert(rng.randrange(len(mutated) + 1), random_item(rng))
            else:
                j = rng.randrange(len(mutated) - 1)
                mutated[j], mutated[j + 1] = mutated[j + 1], mutated[j]
            if link_chain(params, mutated).tip == original:
                collisions.append(trial)
        assert collisions == []

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.binary(min_size=256, max_size=256), min_size=1, max_size=12, unique=True), st.data())
    def test_any_single_deletion_changes_tip(self, blobs, data):
        params = setup(8)
        items = [deserialize_item(b, params) for b in blobs]
        j = data.draw(st.integers(min_value=0, max_value=len(items) - 1))
        assert link_chain(params, items[:j] + items[j + 1:]).tip != link_chain(params, items).tip


class TestMerkle:
    def test_empty_tree(self, params):
        with pytest.raises(EmptySequence):
            link_merkle(params, [])

    def test_golden_roots(self, params, golden_items):
        assert link_merkle(params, golden_items) == (golden("merkle_root_2.hex"), 2)
        three = [golden_items[0], golden_items[1], golden_items[0]]
        assert link_merkle(params, three)[0] == golden("merkle_root_3_aba.hex")

    def test_roots_match_oracle_for_sizes_1_to_64(self, params):
        rng = random.Random(5)
        items = [random_item(rng) for _ in range(64)]
        blobs = [b"".join(item.fields) for item in items]
        for n in range(1, 65):
            assert link_merkle(params, items[:n]) == (oracle_root(blobs[:n]), n), f"size {n}"

    def test_hash_count(self, params):
        rng = random.Random(6)
        items = [random_item(rng) for _ in range(13)]
        with count_hashes() as meter:
            link_merkle(params, items)
        assert meter.count == 13 + 12

    def test_order_matters(self, params, golden_items):
        assert link_merkle(params, golden_items)[0] != link_merkle(params, golden_items[::-1])[0]


class TestInclusionProofs:
    @pytest.fixture(scope="class")
    def eight(self, params):
        rng = random.Random(8)
        return [random_item(rng) for _ in range(8)]

    def test_all_proofs_of_an_8_leaf_tree_verify(self, params, eight):
        root, _ = link_merkle(params, eight)
        for i in range(8):
            proof = prove_inclusion(params, eight, i)
            assert proof.root == root
            assert len(proof.path) == 3
            assert verify_inclusion(params, eight[i], proof)

    def test_cross_index_rejects(self, params, eight):
        for i in range(8):
            proof = prove_inclusion(params, eight, i)
            for j in range(8):
                if j != i:
                    assert not verify_inclusion(params, eight[j], proof)

    def test_every_bit_flip_of_a_depth_3_proof_rejects(self, params, eight):
        for i in range(8):
            data = serialize_proof(prove_inclusion(params, eight, i))
            for bit in range(len(data) * 8):
                try:
                    corrupted = parse_proof(flip_bit(data, bit))
                except EncodingError:
                    continue
                assert not verify_inclusion(params, eight[i], corrupted), f"leaf {i} bit {bit}"

    def test_proof_codec_round_trip(self, params, eight):
        proof = prove_inclusion(params, eight, 5)
        data = serialize_proof(proof)
        assert len(data) == 4 + 2 + 8 + 8 + 32 + 2 + 3 * 33
        assert parse_proof(data) == proof
        with pytest.raises(EncodingError):
            parse_proof(data[:-1])
        with pytest.raises(EncodingError):
            parse_proof(data + b"\x00")

    @pytest.mark.parametrize("n", [1, 2, 3, 5, 6, 7, 9, 16, 17, 31, 33])
    def test_path_length_bound(self, params, n):
        rng = random.Random(n)
        items = [random_item(rng) for _ in range(n)]
        bound = math.ceil(math.log2(n)) if n > 1 else 0
        for i in range(n):
            proof = prove_inclusion(params, items, i)
            assert len(proof.path) <= bound
            if n & (n - 1) == 0:
                assert len(proof.path) == bound
            assert [side for _, side in proof.path] == expected_sides(i, n)
            assert verify_inclusion(params, items[i], proof)

    def test_index_out_of_range(self, params, eight):
        with pytest.raises(IndexOutOfRange):
            prove_inclusion(params, eight, 8)
        with pytest.raises(EmptySequence):
            prove_inclusion(params, [], 0)

    def test_malformed_proofs_reject(self, params, eight):
        proof = prove_inclusion(params, eight, 2)
        bad = [
            MerkleProof(9, proof.path, proof.root, 8),
            MerkleProof(2, proof.path[:-1], proof.root, 8),
            MerkleProof(2, tuple((d[:-1], s) for d, s in proof.path), proof.root, 8),
            MerkleProof(2, tuple((d, LEFT) for d, _ in proof.path), proof.root, 8),
        ]
        assert not any(verify_inclusion(params, eight[2], p) for p in bad)
        assert not verify_inclusion(params, EvidenceItem(eight[2].fields[:7]), proof)
