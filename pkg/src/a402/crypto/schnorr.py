"""Schnorr signatures and adaptor pre-signatures.

The scheme: a signature is ``(R, s)`` with ``s*G == R + e*pk`` and
``e = H(R || pk || m)``. A pre-signature locked to statement ``T = t*G`` is
``(R_hat, s_hat, T)`` where the challenge folds ``R = R_hat + T``; completion
is ``s = s_hat + t (mod n)`` and the witness is recoverable as
``t = s - s_hat``. Nonces are derived deterministically from
``(sk, m, T)`` so identical inputs replay identically.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Optional

from ..errors import IdentityPointError, WitnessMismatchError
from . import group
from .group import N, Point
from .hashing import tagged_hash

_NONCE_TAG = "a402/nonce"
_CHALLENGE_TAG = "a402/challenge"
_KEYGEN_TAG = "a402/keygen"


@dataclass(frozen=True)
class Keypair:
    sk: int
    pk: Point


@dataclass(frozen=True)
class Witness:
    t: int
    T: Point


@dataclass(frozen=True)
class Signature:
    R: Point
    s: int

    def to_bytes(self) -> bytes:
        return group.point_to_bytes(self.R) + group.scalar_to_bytes(self.s)

    @classmethod
    def from_bytes(cls, data: bytes) -> "Signature":
        if len(data) != 65:
            raise ValueError("signature must be 65 bytes")
        return cls(group.point_from_bytes(data[:33]), group.scalar_from_bytes(data[33:]))


@dataclass(frozen=True)
class AdaptorPreSignature:
    R_hat: Point
    s_hat: int
    T: Point

    def to_bytes(self) -> bytes:
        return (
            group.point_to_bytes(self.R_hat)
            + group.scalar_to_bytes(self.s_hat)
            + group.point_to_bytes(self.T)
        )

    @classmethod
    def from_bytes(cls, data: bytes) -> "AdaptorPreSignature":
        if len(data) != 98:
            raise ValueError("pre-signature must be 98 bytes")
        return cls(
            group.point_from_bytes(data[:33]),
            group.scalar_from_bytes(data[33:65]),
            group.point_from_bytes(data[65:]),
        )


@lru_cache(maxsize=4096)
def keygen(seed: bytes) -> Keypair:
    """Deterministic keypair from a nonempty seed; zero scalars re-derived."""
    if not seed:
        raise ValueError("seed must be nonempty")
    counter = 0
    while True:
        sk = int.from_bytes(tagged_hash(_KEYGEN_TAG, seed, counter.to_bytes(4, "big")), "big") % N
        if sk != 0:
            break
        counter += 1
    return Keypair(sk, group.mul_g(sk))


def witness_from_scalar(t: int) -> Witness:
    t %= N
    if t == 0:
        raise ValueError("witness scalar must be nonzero")
    return Witness(t, group.mul_g(t))


def _nonce(sk: int, m: bytes, t_bytes: bytes) -> int:
    counter = 0
    while True:
        k = int.from_bytes(
            tagged_hash(_NONCE_TAG, group.scalar_to_bytes(sk), m, t_bytes, counter.to_bytes(4, "big")),
            "big",
        ) % N
        if k != 0:
            return k
        counter += 1


def _challenge(R: Point, pk: Point, m: bytes) -> int:
    return int.from_bytes(
        tagged_hash(_CHALLENGE_TAG, group.point_to_bytes(R), group.point_to_bytes(pk), m), "big"
    ) % N


@lru_cache(maxsize=8192)
def sign(sk: int, m: bytes) -> Signature:
    k = _nonce(sk, m, b"")
    R = group.mul_g(k)
    pk = group.mul_g(sk)
    e = _challenge(R, pk, m)
    return Signature(R, (k + e * sk) % N)


@lru_cache(maxsize=16384)
def verify(pk: Point, m: bytes, sig: Signature) -> bool:
    if sig.R is None:
        return False
    e = _challenge(sig.R, pk, m)
    return group.add(group.mul_g(sig.s), group.negate(group.mul(pk, e))) == sig.R


@lru_cache(maxsize=8192)
def pre_sign(sk: int, m: bytes, T: Point) -> AdaptorPreSignature:
    if T is None or not group.is_on_curve(T):
        raise IdentityPointError("statement must be a valid non-identity point")
    k = _nonce(sk, m, group.point_to_bytes(T))
    R_hat = group.mul_g(k)
    R = group.add(R_hat, T)
    if R is None:
        raise IdentityPointError("degenerate nonce/statement combination")
    pk = group.mul_g(sk)
    e = _challenge(R, pk, m)
    return AdaptorPreSignature(R_hat, (k + e * sk) % N, T)


@lru_cache(maxsize=16384)
def pre_verify(pk: Point, m: bytes, T: Point, presig: AdaptorPreSignature) -> bool:
    if T is None or presig.T != T or presig.R_hat is None:
        return False
    R = group.add(presig.R_hat, T)
    if R is None:
        return False
    e = _challenge(R, pk, m)
    return group.add(group.mul_g(presig.s_hat), group.negate(group.mul(pk, e))) == presig.R_hat


def adapt(presig: AdaptorPreSignature, t: int) -> Signature:
    """Complete a pre-signature; with the wrong witness the result simply
    fails verification (callers must check)."""
    R = group.add(presig.R_hat, presig.T)
    if R is None:
        raise IdentityPointError("degenerate pre-signature")
    return Signature(R, (presig.s_hat + t) % N)


def extract(sig: Signature, presig: AdaptorPreSignature, T: Point) -> int:
    t = (sig.s - presig.s_hat) % N
    if group.mul_g(t) != T:
        raise WitnessMismatchError("signature pair does not reveal the witness for T")
    return t
