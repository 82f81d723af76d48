"""Sealed-urn commit-reveal with witness attestation and beacon selection.

A petitioner commits to two messages (gold and silver urns), independent
witnesses attest to the pair of digests, a seeded beacon picks one urn, and
the petitioner's opening of that urn is checked against its commitment.
"""
from __future__ import annotations

import hashlib
import hmac
import random
import struct
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Mapping, Protocol

NONCE_SIZE = 32
DEFAULT_QUORUM = 3
MAX_SEED = 2**64


class BadNonceLength(ValueError):
    pass


class RngExhausted(RuntimeError):
    """The generator returned something other than the requested bytes."""


class ByteSource(Protocol):
    def randbytes(self, n: int) -> bytes: ...


class Urn(str, Enum):
    GOLD = "Gold"
    SILVER = "Silver"


class Verdict(str, Enum):
    ACCEPTED = "Accepted"
    REJECTED = "Rejected"


@dataclass(frozen=True)
class Commitment:
    digest: bytes

    def hex(self) -> str:
        return self.digest.hex()


@dataclass(frozen=True)
class Opening:
    message: bytes
    nonce: bytes


@dataclass(frozen=True)
class UrnPair:
    gold: Commitment
    silver: Commitment
    created_at: int = 0

    def __post_init__(self):
        if self.gold.digest == self.silver.digest:
            raise ValueError("gold and silver commitments must differ")

    def side(self, urn: Urn) -> Commitment:
        return self.gold if urn is Urn.GOLD else self.silver


@dataclass(frozen=True)
class UrnOpenings:
    gold: Opening
    silver: Opening

    def side(self, urn: Urn) -> Opening:
        return self.gold if urn is Urn.GOLD else self.silver


@dataclass(frozen=True)
class WitnessAttestation:
    witness_id: str
    tag: bytes
    timestamp: int


@dataclass(frozen=True)
class Selection:
    chosen: Urn
    beacon_seed: int
    draw: int


@dataclass(frozen=True)
class RevealOutcome:
    verdict: Verdict
    expected: bytes
    recomputed: bytes

    @property
    def accepted(self) -> bool:
        return self.verdict is Verdict.ACCEPTED


def _sha256(*parts: bytes) -> bytes:
    h = hashlib.sha256()
    for p in parts:
        h.update(p)
    return h.digest()


def commit(message: bytes, nonce: bytes) -> Commitment:
    if len(nonce) != NONCE_SIZE:
        raise BadNonceLength(f"nonce must be {NONCE_SIZE} bytes, got {len(nonce)}")
    return Commitment(_sha256(bytes(message), bytes(nonce)))


def draw_nonce(rng: ByteSource) -> bytes:
    nonce = rng.randbytes(NONCE_SIZE)
    if not isinstance(nonce, bytes) or len(nonce) != NONCE_SIZE:
        raise RngExhausted(f"generator did not yield {NONCE_SIZE} bytes")
    return nonce


def make_urn_pair(m_gold: bytes, m_silver: bytes, rng: ByteSource,
                  created_at: int = 0) -> tuple[UrnPair, UrnOpenings]:
    """Commit to both messages under fresh nonces.

    The returned :class:`UrnOpenings` stay with the petitioner; only the
    :class:`UrnPair` is published.
    """
    n_gold = draw_nonce(rng)
    n_silver = draw_nonce(rng)
    if n_gold == n_silver:
        raise RngExhausted("generator repeated a nonce")
    pair = UrnPair(commit(m_gold, n_gold), commit(m_silver, n_silver), created_at)
    return pair, UrnOpenings(Opening(bytes(m_gold), n_gold), Opening(bytes(m_silver), n_silver))


def _timestamp_bytes(t: int) -> bytes:
    return struct.pack(">q", int(t))


def attestation_tag(witness_secret: bytes, pair: UrnPair, t: int) -> bytes:
    return _sha256(witness_secret, pair.gold.digest, pair.silver.digest, _timestamp_bytes(t))


def attest(witness_id: str, witness_secret: bytes, pair: UrnPair, t: int) -> WitnessAttestation:
    return WitnessAttestation(witness_id, attestation_tag(witness_secret, pair, t), int(t))


def verify_attestation(att: WitnessAttestation, witness_secret: bytes, pair: UrnPair) -> bool:
    expected = attestation_tag(witness_secret, pair, att.timestamp)
    return hmac.compare_digest(expected, att.tag)


def count_valid_attestations(attestations: Iterable[WitnessAttestation],
                             secrets: Mapping[str, bytes], pair: UrnPair) -> int:
    """Number of distinct witnesses whose tag verifies against ``pair``."""
    valid = set()
    for att in attestations:
        secret = secrets.get(att.witness_id)
        if secret is not None and verify_attestation(att, secret, pair):
            valid.add(att.witness_id)
    return len(valid)


def has_quorum(attestations: Iterable[WitnessAttestation], secrets: Mapping[str, bytes],
               pair: UrnPair, quorum: int = DEFAULT_QUORUM) -> bool:
    return count_valid_attestations(attestations, secrets, pair) >= quorum


def beacon_stream(beacon_seed: int, nbytes: int = 32) -> bytes:
    """Deterministic byte stream: SHA-256 over (seed, block counter)."""
    if not 0 <= beacon_seed < MAX_SEED:
        raise ValueError("beacon seed must be an unsigned 64-bit integer")
    out = bytearray()
    block = 0
    while len(out) < nbytes:
        out += _sha256(struct.pack(">QQ", beacon_seed, block))
        block += 1
    return bytes(out[:nbytes])


def select(pair: UrnPair, beacon_seed: int) -> Selection:
    # the pair is deliberately not read: the draw must not depend on contents
    draw = beacon_stream(beacon_seed, 1)[0]
    return Selection(Urn.GOLD if draw % 2 == 0 else Urn.SILVER, beacon_seed, draw)


def verify_selection(selection: Selection) -> bool:
    draw = beacon_stream(selection.beacon_seed, 1)[0]
    expected = Urn.GOLD if draw % 2 == 0 else Urn.SILVER
    return draw == selection.draw and expected is selection.chosen


def reveal_verify(pair: UrnPair, selection: Selection, message: bytes, nonce: bytes) -> RevealOutcome:
    expected = pair.side(selection.chosen).digest
    # wrong-length nonces are a rejected reveal, not an error
    recomputed = _sha256(bytes(message), bytes(nonce))
    ok = len(nonce) == NONCE_SIZE and hmac.compare_digest(recomputed, expected)
    return RevealOutcome(Verdict.ACCEPTED if ok else Verdict.REJECTED, expected, recomputed)


def tamper_byte(data: bytes, index: int = 0) -> bytes:
    """Flip the low bit of one byte; an empty input gains a byte instead."""
    if not data:
        return b"\x01"
    index %= len(data)
    return data[:index] + bytes([data[index] ^ 0x01]) + data[index + 1:]


def demo_transcript(m_gold: str, m_silver: str, witnesses: int = DEFAULT_QUORUM,
                    seed: int = 0, tamper: bool = False, quorum: int = DEFAULT_QUORUM) -> dict:
    """Run commit, attest, select and reveal once and return the transcript."""
    rng = random.Random(seed)
    pair, openings = make_urn_pair(m_gold.encode("utf-8"), m_silver.encode("utf-8"), rng, created_at=0)

    secrets = {}
    attestations = []
    for i in range(witnesses):
        wid = f"witness-{i + 1}"
        secrets[wid] = rng.randbytes(32)
        attestations.append(attest(wid, secrets[wid], pair, t=1))
    valid = count_valid_attestations(attestations, secrets, pair)

    transcript: dict = {
        "seed": seed,
        "commit": {
            "gold": pair.gold.hex(),
            "silver": pair.silver.hex(),
            "created_at": pair.created_at,
        },
        "attestations": [
            {"witness_id": a.witness_id, "tag": a.tag.hex(), "timestamp": a.timestamp}
            for a in attestations
        ],
        "quorum": {"required": quorum, "valid": valid, "met": valid >= quorum},
    }
    if valid < quorum:
        transcript["verdict"] = Verdict.REJECTED.value
        transcript["reason"] = "attestation quorum not met"
        return transcript

    beacon_seed = rng.getrandbits(64)
    selection = select(pair, beacon_seed)
    opening = openings.side(selection.chosen)
    message = tamper_byte(opening.message) if tamper else opening.message
    outcome = reveal_verify(pair, selection, message, opening.nonce)

    transcript["select"] = {
        "chosen": selection.chosen.value,
        "beacon_seed": selection.beacon_seed,
        "draw": selection.draw,
    }
    transcript["reveal"] = {
        "message": message.decode("utf-8", errors="replace"),
        "message_hex": message.hex(),
        "nonce": opening.nonce.hex(),
        "tampered": tamper,
    }
    transcript["verdict"] = outcome.verdict.value
    transcript["evidence"] = {
        "expected": outcome.expected.hex(),
        "recomputed": outcome.recomputed.hex(),
    }
    return transcript
