"""Hex test vectors for cross-implementation checks.

One vector per line: ``sk m t presig sig``, all hex. The generator derives
everything from a seed so vector files are reproducible.
"""

from __future__ import annotations

from typing import Iterator, List, Tuple

from . import group, schnorr
from .hashing import tagged_hash

Vector = Tuple[int, bytes, int, schnorr.AdaptorPreSignature, schnorr.Signature]


def generate(count: int, seed: int = 0) -> Iterator[Vector]:
    for i in range(count):
        label = f"{seed}:{i}".encode()
        kp = schnorr.keygen(tagged_hash("a402/vector-key", label))
        m = tagged_hash("a402/vector-msg", label)
        t = int.from_bytes(tagged_hash("a402/vector-wit", label), "big") % group.N or 1
        wit = schnorr.witness_from_scalar(t)
        presig = schnorr.pre_sign(kp.sk, m, wit.T)
        sig = schnorr.adapt(presig, t)
        yield kp.sk, m, t, presig, sig


def format_vector(vec: Vector) -> str:
    sk, m, t, presig, sig = vec
    return " ".join(
        [
            group.scalar_to_bytes(sk).hex(),
            m.hex(),
            group.scalar_to_bytes(t).hex(),
            presig.to_bytes().hex(),
            sig.to_bytes().hex(),
        ]
    )


def parse_line(line: str) -> Vector:
    sk_h, m_h, t_h, presig_h, sig_h = line.split()
    return (
        group.scalar_from_bytes(bytes.fromhex(sk_h)),
        bytes.fromhex(m_h),
        group.scalar_from_bytes(bytes.fromhex(t_h)),
        schnorr.AdaptorPreSignature.from_bytes(bytes.fromhex(presig_h)),
        schnorr.Signature.from_bytes(bytes.fromhex(sig_h)),
    )


def check_line(line: str) -> bool:
    """Verify one vector end to end: pre-verify, adapt, verify, extract."""
    sk, m, t, presig, sig = parse_line(line)
    kp = schnorr.Keypair(sk, group.mul_g(sk))
    T = group.mul_g(t)
    if not schnorr.pre_verify(kp.pk, m, T, presig):
        return False
    if schnorr.adapt(presig, t) != sig:
        return False
    if not schnorr.verify(kp.pk, m, sig):
        return False
    return schnorr.extract(sig, presig, T) == t


def write_file(path: str, count: int, seed: int = 0) -> List[str]:
    lines = [format_vector(v) for v in generate(count, seed)]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    return lines
