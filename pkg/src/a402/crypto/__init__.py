"""Cryptographic primitives: group math, Schnorr and adaptor signatures,
witness-bound encryption, and canonical hashing."""

from .group import G, N, Point, mul, mul_g, point_from_bytes, point_to_bytes, scalar_from_bytes, scalar_to_bytes
from .hashing import encode_amount, encode_counter, encode_rid, hash_parts, payment_message, tagged_hash
from .schnorr import (
    AdaptorPreSignature,
    Keypair,
    Signature,
    Witness,
    adapt,
    extract,
    keygen,
    pre_sign,
    pre_verify,
    sign,
    verify,
    witness_from_scalar,
)
from .sealed import Ciphertext, decrypt_with_witness, encrypt_with_witness, open_sealed, seal

__all__ = [
    "G",
    "N",
    "Point",
    "mul",
    "mul_g",
    "point_from_bytes",
    "point_to_bytes",
    "scalar_from_bytes",
    "scalar_to_bytes",
    "hash_parts",
    "tagged_hash",
    "payment_message",
    "encode_rid",
    "encode_amount",
    "encode_counter",
    "Keypair",
    "Witness",
    "Signature",
    "AdaptorPreSignature",
    "keygen",
    "witness_from_scalar",
    "sign",
    "verify",
    "pre_sign",
    "pre_verify",
    "adapt",
    "extract",
    "Ciphertext",
    "encrypt_with_witness",
    "decrypt_with_witness",
    "seal",
    "open_sealed",
]
