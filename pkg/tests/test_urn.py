import random

import pytest
from hypothesis import given, strategies as st

from oraclesim import urn
from oraclesim.urn import Urn, Verdict

from oracles.sha256_ref import sha256 as ref_sha256

ZERO_NONCE = bytes(32)


class FixedBytes:
    def __init__(self, chunks):
        self.chunks = list(chunks)

    def randbytes(self, n):
        return self.chunks.pop(0)


def test_commit_known_vectors():
    # frozen from coreutils sha256sum
    assert urn.commit(b"rent", ZERO_NONCE).hex() == \
        "99f4f4e76322bfc631364708061ff3bb4a4b7184b594d36ef60adaad02426e71"
    assert urn.commit(b"", ZERO_NONCE).hex() == \
        "66687aadf862bd776c8fc18b8e9f8e20089714856ee233b3902a591d0d5f2925"


def test_commit_deterministic():
    nonce = random.Random(3).randbytes(32)
    assert urn.commit(b"m", nonce) == urn.commit(b"m", nonce)


@pytest.mark.parametrize("n", [0, 16, 31, 33, 64])
def test_bad_nonce_length(n):
    with pytest.raises(urn.BadNonceLength):
        urn.commit(b"m", bytes(n))


@given(st.binary(max_size=200), st.binary(min_size=32, max_size=32))
def test_commit_matches_reference_sha256(message, nonce):
    assert urn.commit(message, nonce).digest == ref_sha256(message + nonce)


def test_make_urn_pair_equal_messages():
    pair, openings = urn.make_urn_pair(b"same", b"same", random.Random(1))
    assert pair.gold != pair.silver
    assert openings.gold.nonce != openings.silver.nonce


def test_make_urn_pair_deterministic():
    a = urn.make_urn_pair(b"g", b"s", random.Random(42))
    b = urn.make_urn_pair(b"g", b"s", random.Random(42))
    assert a == b


def test_openings_verify_against_their_commitments():
    pair, openings = urn.make_urn_pair(b"rent", b"fallow", random.Random(5))
    assert urn.commit(openings.gold.message, openings.gold.nonce) == pair.gold
    assert urn.commit(openings.silver.message, openings.silver.nonce) == pair.silver


def test_rng_contract_violations():
    with pytest.raises(urn.RngExhausted):
        urn.make_urn_pair(b"a", b"b", FixedBytes([bytes(31), bytes(32)]))
    with pytest.raises(urn.RngExhausted):
        urn.make_urn_pair(b"a", b"a", FixedBytes([bytes(32), bytes(32)]))


def test_attestation_roundtrip():
    pair, _ = urn.make_urn_pair(b"g", b"s", random.Random(9))
    att = urn.attest("council", b"secret-1", pair, 4)
    assert urn.verify_attestation(att, b"secret-1", pair)
    assert not urn.verify_attestation(att, b"secret-2", pair)


def test_attestation_bound_to_both_digests():
    rng = random.Random(17)
    pair, _ = urn.make_urn_pair(b"g", b"s", rng)
    att = urn.attest("w", b"k", pair, 1)
    for _ in range(200):
        side = rng.choice(["gold", "silver"])
        digest = bytearray(getattr(pair, side).digest)
        digest[rng.randrange(32)] ^= 1 << rng.randrange(8)
        gold = urn.Commitment(bytes(digest)) if side == "gold" else pair.gold
        silver = urn.Commitment(bytes(digest)) if side == "silver" else pair.silver
        assert not urn.verify_attestation(att, b"k", urn.UrnPair(gold, silver))


def test_attestation_bound_to_timestamp():
    pair, _ = urn.make_urn_pair(b"g", b"s", random.Random(2))
    att = urn.attest("w", b"k", pair, 1)
    moved = urn.WitnessAttestation(att.witness_id, att.tag, 2)
    assert not urn.verify_attestation(moved, b"k", pair)


def test_quorum_counts_distinct_valid_witnesses():
    pair, _ = urn.make_urn_pair(b"g", b"s", random.Random(2))
    secrets = {"a": b"1", "b": b"2", "c": b"3"}
    atts = [urn.attest(w, s, pair, 0) for w, s in secrets.items()]
    assert urn.has_quorum(atts, secrets, pair)
    assert not urn.has_quorum(atts[:2] + [atts[0]], secrets, pair)
    forged = urn.WitnessAttestation("c", bytes(32), 0)
    assert not urn.has_quorum(atts[:2] + [forged], secrets, pair)


def test_select_deterministic_and_verifiable():
    pair, _ = urn.make_urn_pair(b"g", b"s", random.Random(0))
    s1 = urn.select(pair, 123456789)
    assert s1 == urn.select(pair, 123456789)
    assert urn.verify_selection(s1)
    assert (s1.chosen is Urn.GOLD) == (s1.draw % 2 == 0)
    forged = urn.Selection(Urn.SILVER if s1.chosen is Urn.GOLD else Urn.GOLD, s1.beacon_seed, s1.draw)
    assert not urn.verify_selection(forged)


def test_select_rejects_out_of_range_seed():
    pair, _ = urn.make_urn_pair(b"g", b"s", random.Random(0))
    with pytest.raises(ValueError):
        urn.select(pair, -1)
    with pytest.raises(ValueError):
        urn.select(pair, 2**64)


@given(st.binary(), st.binary(), st.integers(0, 2**64 - 1))
def test_select_ignores_messages(m0, m1, seed):
    p1, _ = urn.make_urn_pair(m0, m1, random.Random(1))
    p2, _ = urn.make_urn_pair(m1, m0, random.Random(2))
    assert urn.select(p1, seed).chosen is urn.select(p2, seed).chosen


def test_reveal_honest_and_cross_urn():
    pair, openings = urn.make_urn_pair(b"rent", b"fallow", random.Random(8))
    for seed in range(20):
        sel = urn.select(pair, seed)
        good = openings.side(sel.chosen)
        assert urn.reveal_verify(pair, sel, good.message, good.nonce).verdict is Verdict.ACCEPTED
        other = openings.side(Urn.SILVER if sel.chosen is Urn.GOLD else Urn.GOLD)
        out = urn.reveal_verify(pair, sel, other.message, other.nonce)
        assert out.verdict is Verdict.REJECTED
        assert out.expected == pair.side(sel.chosen).digest
        assert out.recomputed == urn.commit(other.message, other.nonce).digest


def test_reveal_wrong_length_nonce_is_rejection():
    pair, openings = urn.make_urn_pair(b"rent", b"fallow", random.Random(8))
    sel = urn.select(pair, 0)
    opening = openings.side(sel.chosen)
    assert urn.reveal_verify(pair, sel, opening.message, opening.nonce[:-1]).verdict is Verdict.REJECTED


def test_tamper_byte():
    assert urn.tamper_byte(b"") == b"\x01"
    assert urn.tamper_byte(b"ab", 1) == b"ac"


def test_round_trip_with_witnesses():
    rng = random.Random(77)
    for i in range(50):
        pair, openings = urn.make_urn_pair(rng.randbytes(10), rng.randbytes(10), rng, created_at=i)
        secrets = {f"w{k}": rng.randbytes(16) for k in range(3)}
        atts = [urn.attest(w, s, pair, i) for w, s in secrets.items()]
        assert urn.has_quorum(atts, secrets, pair, quorum=3)
        sel = urn.select(pair, rng.getrandbits(64))
        opening = openings.side(sel.chosen)
        assert urn.reveal_verify(pair, sel, opening.message, opening.nonce).accepted


def test_hiding_bit_frequency():
    rng = random.Random(2024)
    ones = [0] * 256
    n = 10_000
    for _ in range(n):
        digest = urn.commit(b"the same message", rng.randbytes(32)).digest
        value = int.from_bytes(digest, "big")
        for bit in range(256):
            ones[bit] += (value >> bit) & 1
    assert all(abs(c / n - 0.5) <= 0.03 for c in ones)


def test_binding_randomized_search():
    rng = random.Random(99)
    nonce = rng.randbytes(32)
    target = urn.commit(b"original", nonce)
    seen = set()
    for _ in range(20_000):
        msg = rng.randbytes(rng.randrange(1, 16))
        if msg == b"original":
            continue
        digest = urn.commit(msg, rng.randbytes(32) if rng.random() < 0.5 else nonce).digest
        assert digest != target.digest
        seen.add(digest)
    assert len(seen) > 19_000


def test_demo_transcript():
    t = urn.demo_transcript("rent the land", "leave it fallow", seed=4)
    assert t["verdict"] == "Accepted"
    assert t["quorum"] == {"required": 3, "valid": 3, "met": True}
    assert len(t["commit"]["gold"]) == 64 and t["commit"]["gold"] == t["commit"]["gold"].lower()
    assert t == urn.demo_transcript("rent the land", "leave it fallow", seed=4)

    tampered = urn.demo_transcript("rent the land", "leave it fallow", seed=4, tamper=True)
    assert tampered["verdict"] == "Rejected"
    assert tampered["evidence"]["expected"] != tampered["evidence"]["recomputed"]


def test_demo_without_quorum():
    t = urn.demo_transcript("a", "b", witnesses=2)
    assert t["verdict"] == "Rejected"
    assert "select" not in t
