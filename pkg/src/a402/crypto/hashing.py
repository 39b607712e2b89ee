"""Canonical hashing with unambiguous framing.

Every hashed input is a sequence of byte strings, each preceded by an 8-byte
big-endian length, so ``hash(["a", "b"]) != hash(["ab"])`` by construction.
Domain tags are passed as the first part.
"""

from __future__ import annotations

import hashlib
from typing import Iterable

CID_LEN = 16
K_LEN = 8
AMOUNT_LEN = 16
DIGEST_LEN = 32


def frame(parts: Iterable[bytes]) -> bytes:
    out = bytearray()
    for part in parts:
        out += len(part).to_bytes(8, "big")
        out += part
    return bytes(out)


def hash_parts(parts: Iterable[bytes]) -> bytes:
    return hashlib.sha256(frame(parts)).digest()


def tagged_hash(tag: str, *parts: bytes) -> bytes:
    return hash_parts([tag.encode("ascii"), *parts])


def encode_amount(v: int) -> bytes:
    if v < 0:
        raise ValueError("amounts are unsigned")
    return v.to_bytes(AMOUNT_LEN, "big")


def encode_counter(k: int) -> bytes:
    return k.to_bytes(K_LEN, "big")


def encode_rid(cid: bytes, k: int) -> bytes:
    """Request id: channel id followed by the request counter (24 bytes)."""
    if len(cid) != CID_LEN:
        raise ValueError("cid must be 16 bytes")
    return cid + encode_counter(k)


def payment_message(cid: bytes, k: int, delta: int, h: bytes) -> bytes:
    """Canonical payment message binding (cid, rid, amount, result hash)."""
    if len(h) != DIGEST_LEN:
        raise ValueError("result hash must be 32 bytes")
    return hash_parts([cid, encode_rid(cid, k), encode_amount(delta), h])
