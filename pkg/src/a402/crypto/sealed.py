"""Authenticated encryption bound to witnesses and channel keys.

Witness encryption derives a ChaCha20-Poly1305 key from the witness scalar;
only the party holding ``t`` can open the ciphertext, and any mutation fails
authentication. Nonces are derived from key and plaintext (SIV style) so runs
replay bit-identically; witnesses are fresh per request so nonces never
repeat under one key.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives.ciphers.aead import ChaCha20Poly1305

from ..errors import BadWitnessError
from .group import scalar_to_bytes
from .hashing import tagged_hash

_WITNESS_KEY_TAG = "a402/witness-key"
_WITNESS_NONCE_TAG = "a402/witness-nonce"
_CHANNEL_NONCE_TAG = "a402/frame-nonce"


@dataclass(frozen=True)
class Ciphertext:
    nonce: bytes
    body: bytes

    def to_bytes(self) -> bytes:
        return self.nonce + self.body

    @classmethod
    def from_bytes(cls, data: bytes) -> "Ciphertext":
        if len(data) < 12 + 16:
            raise ValueError("ciphertext too short")
        return cls(data[:12], data[12:])


@lru_cache(maxsize=4096)
def _witness_key(t: int) -> bytes:
    return tagged_hash(_WITNESS_KEY_TAG, scalar_to_bytes(t))


def encrypt_with_witness(t: int, plaintext: bytes) -> Ciphertext:
    if t == 0:
        raise ValueError("witness scalar must be nonzero")
    key = _witness_key(t)
    nonce = tagged_hash(_WITNESS_NONCE_TAG, key, plaintext)[:12]
    return Ciphertext(nonce, ChaCha20Poly1305(key).encrypt(nonce, plaintext, b""))


def decrypt_with_witness(t: int, ct: Ciphertext) -> bytes:
    try:
        return ChaCha20Poly1305(_witness_key(t)).decrypt(ct.nonce, ct.body, b"")
    except InvalidTag as exc:
        raise BadWitnessError("bad witness or tampered ciphertext") from exc


def seal(key: bytes, seq: int, direction: int, plaintext: bytes) -> bytes:
    """Seal a frame under a channel key; unique (direction, seq) per key."""
    nonce = tagged_hash(_CHANNEL_NONCE_TAG, bytes([direction]), seq.to_bytes(8, "big"))[:12]
    return nonce + ChaCha20Poly1305(key).encrypt(nonce, plaintext, b"")


def open_sealed(key: bytes, blob: bytes) -> bytes:
    if len(blob) < 12 + 16:
        raise BadWitnessError("sealed frame too short")
    try:
        return ChaCha20Poly1305(key).decrypt(blob[:12], blob[12:], b"")
    except InvalidTag as exc:
        raise BadWitnessError("frame failed authentication") from exc
