"""Crypto primitives: signatures, adaptors, witness encryption, hashing."""

import hashlib
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from a402.crypto import (
    AdaptorPreSignature,
    Ciphertext,
    N,
    Signature,
    adapt,
    decrypt_with_witness,
    encrypt_with_witness,
    extract,
    hash_parts,
    keygen,
    mul_g,
    open_sealed,
    payment_message,
    pre_sign,
    pre_verify,
    seal,
    sign,
    verify,
    witness_from_scalar,
)
from a402.crypto import group
from a402.errors import BadWitnessError, IdentityPointError, WitnessMismatchError


# -- independent oracles -----------------------------------------------------

def affine_mul(pt, k):
    """Textbook affine double-and-add, independent of the Jacobian path."""
    p = group.P

    def aff_add(a, b):
        if a is None:
            return b
        if b is None:
            return a
        if a[0] == b[0] and (a[1] + b[1]) % p == 0:
            return None
        if a == b:
            lam = (3 * a[0] * a[0]) * pow(2 * a[1], p - 2, p) % p
        else:
            lam = (b[1] - a[1]) * pow(b[0] - a[0], p - 2, p) % p
        x3 = (lam * lam - a[0] - b[0]) % p
        return (x3, (lam * (a[0] - x3) - a[1]) % p)

    acc = None
    addend = pt
    k %= N
    while k:
        if k & 1:
            acc = aff_add(acc, addend)
        addend = aff_add(addend, addend)
        k >>= 1
    return acc


def test_keygen_deterministic_and_distinct():
    assert keygen(b"A") == keygen(b"A")
    assert keygen(b"A").sk != keygen(b"B").sk
    with pytest.raises(ValueError):
        keygen(b"")


def test_keygen_matches_group_law_oracle():
    for seed in [b"A", b"B", b"oracle-check"]:
        kp = keygen(seed)
        assert affine_mul(group.G, kp.sk) == kp.pk


def test_jacobian_mul_matches_affine_oracle():
    rng = random.Random(7)
    for _ in range(8):
        k = rng.randrange(1, N)
        assert mul_g(k) == affine_mul(group.G, k)
        base = mul_g(rng.randrange(1, N))
        assert group.mul(base, k) == affine_mul(base, k)


def test_sign_verify_round_trip_and_binding():
    kp = keygen(b"signer")
    sig = sign(kp.sk, b"msg")
    assert verify(kp.pk, b"msg", sig)
    assert not verify(kp.pk, b"msg2", sig)
    assert not verify(keygen(b"other").pk, b"msg", sig)


def test_pre_sign_well_formed_but_incomplete():
    kp = keygen(b"provider")
    wit = witness_from_scalar(99)
    presig = pre_sign(kp.sk, b"m", wit.T)
    assert pre_verify(kp.pk, b"m", wit.T, presig)
    assert not verify(kp.pk, b"m", Signature(presig.R_hat, presig.s_hat))
    with pytest.raises(IdentityPointError):
        pre_sign(kp.sk, b"m", None)


def test_completion_scalar_relation_oracle():
    # s == s_hat + t (mod n), checked with plain modular arithmetic
    rng = random.Random(11)
    for _ in range(20):
        kp = keygen(rng.randbytes(8))
        t = rng.randrange(1, N)
        wit = witness_from_scalar(t)
        m = rng.randbytes(32)
        presig = pre_sign(kp.sk, m, wit.T)
        sig = adapt(presig, t)
        assert sig.s == (presig.s_hat + t) % N


def test_pre_verify_rejects_mutations():
    kp = keygen(b"provider")
    wit = witness_from_scalar(1234)
    presig = pre_sign(kp.sk, b"m", wit.T)
    assert not pre_verify(kp.pk, b"m", wit.T, AdaptorPreSignature(presig.R_hat, (presig.s_hat + 1) % N, wit.T))
    wrong_T = witness_from_scalar(5678).T
    assert not pre_verify(kp.pk, b"m", wrong_T, presig)


def test_pre_verify_single_bit_mutation_fuzz():
    kp = keygen(b"provider")
    wit = witness_from_scalar(777)
    presig = pre_sign(kp.sk, b"fuzz", wit.T)
    blob = presig.to_bytes()
    rng = random.Random(3)
    flipped = 0
    for _ in range(64):
        i = rng.randrange(len(blob) * 8)
        mutated = bytearray(blob)
        mutated[i // 8] ^= 1 << (i % 8)
        try:
            cand = AdaptorPreSignature.from_bytes(bytes(mutated))
        except ValueError:
            flipped += 1
            continue
        assert not pre_verify(kp.pk, b"fuzz", wit.T, cand)
        flipped += 1
    assert flipped == 64


def test_adapt_and_extract_inverse():
    kp = keygen(b"p2")
    wit = witness_from_scalar(31337)
    presig = pre_sign(kp.sk, b"pay", wit.T)
    sig = adapt(presig, wit.t)
    assert verify(kp.pk, b"pay", sig)
    assert not verify(kp.pk, b"pay", adapt(presig, wit.t + 1))
    assert extract(sig, presig, wit.T) == wit.t
    unrelated = sign(kp.sk, b"pay")
    with pytest.raises(WitnessMismatchError):
        extract(unrelated, presig, wit.T)


def test_adapt_property_fuzz_100():
    rng = random.Random(42)
    for _ in range(100):
        kp = keygen(rng.randbytes(8))
        t = rng.randrange(1, N)
        m = rng.randbytes(24)
        wit = witness_from_scalar(t)
        sig = adapt(pre_sign(kp.sk, m, wit.T), t)
        assert verify(kp.pk, m, sig)


def test_extracted_witness_decrypts():
    kp = keygen(b"p3")
    wit = witness_from_scalar(2468)
    ct = encrypt_with_witness(wit.t, b"the result")
    presig = pre_sign(kp.sk, b"m", wit.T)
    t = extract(adapt(presig, wit.t), presig, wit.T)
    assert decrypt_with_witness(t, ct) == b"the result"


def test_witness_encryption_round_trip_and_auth():
    wit = witness_from_scalar(5)
    assert decrypt_with_witness(5, encrypt_with_witness(5, b"")) == b""
    ct = encrypt_with_witness(wit.t, b"secret")
    with pytest.raises(BadWitnessError):
        decrypt_with_witness(wit.t + 1, ct)


def test_witness_encryption_large_payload():
    blob = random.Random(9).randbytes(1 << 20)
    assert decrypt_with_witness(321, encrypt_with_witness(321, blob)) == blob


def test_witness_encryption_rejects_bit_flips():
    ct = encrypt_with_witness(7, b"payload-under-test")
    raw = ct.to_bytes()
    rng = random.Random(1)
    for _ in range(32):
        i = rng.randrange(len(raw) * 8)
        mutated = bytearray(raw)
        mutated[i // 8] ^= 1 << (i % 8)
        with pytest.raises(BadWitnessError):
            decrypt_with_witness(7, Ciphertext.from_bytes(bytes(mutated)))


def test_hash_framing():
    assert hash_parts([]) == hash_parts([])
    assert hash_parts([b"a", b"b"]) != hash_parts([b"ab"])
    assert hash_parts([b"ab", b""]) != hash_parts([b"a", b"b"])


def test_hash_matches_streaming_oracle():
    parts = [b"alpha", b"", b"gamma" * 100]
    h = hashlib.sha256()
    for part in parts:
        h.update(len(part).to_bytes(8, "big"))
        h.update(part)
    assert hash_parts(parts) == h.digest()


def test_payment_message_widths():
    cid = bytes(16)
    h = bytes(32)
    assert payment_message(cid, 0, 10, h) != payment_message(cid, 1, 10, h)
    assert payment_message(cid, 0, 10, h) != payment_message(cid, 0, 11, h)
    with pytest.raises(ValueError):
        payment_message(cid, 0, 10, bytes(31))


def test_sealed_frames():
    key = bytes(32)
    blob = seal(key, 1, 0, b"frame")
    assert open_sealed(key, blob) == b"frame"
    with pytest.raises(BadWitnessError):
        open_sealed(key, blob[:-1] + bytes([blob[-1] ^ 1]))
    with pytest.raises(BadWitnessError):
        open_sealed(bytes(31) + b"x", blob)


@settings(max_examples=30, deadline=None)
@given(st.integers(min_value=1, max_value=N - 1), st.binary(min_size=0, max_size=64), st.integers(min_value=1, max_value=N - 1))
def test_adaptor_round_trip_property(sk, m, t):
    pk = mul_g(sk)
    T = mul_g(t)
    presig = pre_sign(sk, m, T)
    sig = adapt(presig, t)
    assert verify(pk, m, sig)
    assert extract(sig, presig, T) == t
    assert not verify(pk, m, Signature(presig.R_hat, presig.s_hat))


@settings(max_examples=30, deadline=None)
@given(st.integers(min_value=1, max_value=N - 1), st.binary(min_size=0, max_size=128))
def test_witness_encryption_bijection_property(t, payload):
    assert decrypt_with_witness(t, encrypt_with_witness(t, payload)) == payload
