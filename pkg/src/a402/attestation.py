"""Mock TEE attestation: authority, participant registry, secure channels.

A single well-known authority keypair stands in for vendor attestation
infrastructure. Reports bind a participant public key to a code measurement;
registration admits only verified reports whose measurement is on the
approved list. Registered vault/provider pairs establish symmetric channel
keys via an ephemeral Diffie-Hellman exchange with signed transcripts.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Set, Tuple

from .crypto import group, schnorr
from .crypto.hashing import tagged_hash
from .errors import DuplicateIdentity, RegistrationRejected, UnknownParty

_ATTEST_TAG = "a402/attest"
_DH_TRANSCRIPT_TAG = "a402/secure-channel"
_CHANNEL_KEY_TAG = "a402/channel-key"

MEASUREMENT_LEN = 32


@dataclass(frozen=True)
class AttestationReport:
    pk: group.Point
    h_code: bytes
    authority_sig: schnorr.Signature


@dataclass(frozen=True)
class SecureChannelKey:
    key: bytes
    peer_ids: Tuple[str, str]
    epoch: int


class MockAuthority:
    """Issues attestation reports; one instance per harness run."""

    def __init__(self, seed: bytes = b"a402-mock-authority"):
        self.keypair = schnorr.keygen(seed)

    def attest(self, pk: group.Point, h_code: bytes) -> AttestationReport:
        if len(h_code) != MEASUREMENT_LEN:
            raise ValueError("measurement must be 32 bytes")
        msg = tagged_hash(_ATTEST_TAG, group.point_to_bytes(pk), h_code)
        return AttestationReport(pk, h_code, schnorr.sign(self.keypair.sk, msg))


def verify_att(
    report: AttestationReport,
    pk: group.Point,
    h_code: bytes,
    authority_pk: group.Point,
    approved: Set[bytes],
) -> bool:
    if report.pk != pk or report.h_code != h_code:
        return False
    if h_code not in approved:
        return False
    msg = tagged_hash(_ATTEST_TAG, group.point_to_bytes(pk), h_code)
    return schnorr.verify(authority_pk, msg, report.authority_sig)


def load_allowlist(path: str) -> Set[bytes]:
    """One hex measurement per line; blank lines and '#' comments ignored."""
    approved = set()
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line and not line.startswith("#"):
                approved.add(bytes.fromhex(line))
    return approved


def dump_allowlist(path: str, approved: Set[bytes]) -> None:
    with open(path, "w") as fh:
        for measurement in sorted(approved):
            fh.write(measurement.hex() + "\n")


@dataclass
class Registry:
    """Participant registry kept by each party, synchronized by the harness."""

    authority_pk: group.Point
    approved: Set[bytes]
    providers: Dict[str, Tuple[group.Point, bytes]] = field(default_factory=dict)
    vaults: Dict[str, Tuple[group.Point, bytes]] = field(default_factory=dict)
    channels: Dict[Tuple[str, str], SecureChannelKey] = field(default_factory=dict)
    _reports: Dict[str, AttestationReport] = field(default_factory=dict)
    _seen_pks: Set[group.Point] = field(default_factory=set)

    def register(self, role: str, pk: group.Point, h_code: bytes, report: AttestationReport) -> str:
        if not verify_att(report, pk, h_code, self.authority_pk, self.approved):
            raise RegistrationRejected("attestation did not verify")
        if pk in self._seen_pks:
            raise DuplicateIdentity("public key already registered")
        if role == "provider":
            ident = f"sid-{len(self.providers) + 1}"
            self.providers[ident] = (pk, h_code)
        elif role == "vault":
            ident = f"uid-{len(self.vaults) + 1}"
            self.vaults[ident] = (pk, h_code)
        else:
            raise ValueError(f"unknown role: {role}")
        self._seen_pks.add(pk)
        self._reports[ident] = report
        return ident

    def provider_pk(self, sid: str) -> group.Point:
        if sid not in self.providers:
            raise UnknownParty(sid)
        return self.providers[sid][0]

    def vault_pk(self, uid: str) -> group.Point:
        if uid not in self.vaults:
            raise UnknownParty(uid)
        return self.vaults[uid][0]

    def audit(self) -> bool:
        """Re-verify the stored report behind every registry entry."""
        for ident, (pk, h_code) in list(self.providers.items()) + list(self.vaults.items()):
            report = self._reports.get(ident)
            if report is None or not verify_att(report, pk, h_code, self.authority_pk, self.approved):
                return False
        return True

    def dump(self) -> str:
        lines = []
        for sid in sorted(self.providers):
            pk, h_code = self.providers[sid]
            lines.append(f"provider {sid} {group.point_to_bytes(pk).hex()} {h_code.hex()}")
        for uid in sorted(self.vaults):
            pk, h_code = self.vaults[uid]
            lines.append(f"vault {uid} {group.point_to_bytes(pk).hex()} {h_code.hex()}")
        for pair in sorted(self.channels):
            ck = self.channels[pair]
            lines.append(f"channel {pair[0]} {pair[1]} epoch={ck.epoch}")
        return "\n".join(lines)


@dataclass(frozen=True)
class ChannelTranscript:
    """The bytes an eavesdropper sees during channel establishment."""

    messages: Tuple[bytes, ...]


def establish_secure_channel(
    registry: Registry,
    uid: str,
    sid: str,
    vault_keypair: schnorr.Keypair,
    provider_keypair: schnorr.Keypair,
    eph_seed: bytes,
) -> Tuple[SecureChannelKey, ChannelTranscript]:
    """Ephemeral DH bound to both long-term keys via signed transcripts.

    Both endpoints run in-process here; the returned transcript is what the
    network adversary observes (no secret material).
    """
    vault_pk = registry.vault_pk(uid)
    provider_pk = registry.provider_pk(sid)
    if vault_pk != vault_keypair.pk or provider_pk != provider_keypair.pk:
        raise UnknownParty("long-term keys do not match registry entries")

    prior = registry.channels.get((uid, sid))
    epoch = (prior.epoch + 1) if prior else 1

    eph_u = schnorr.keygen(tagged_hash("a402/eph-u", eph_seed, epoch.to_bytes(4, "big")))
    eph_s = schnorr.keygen(tagged_hash("a402/eph-s", eph_seed, epoch.to_bytes(4, "big")))

    transcript = tagged_hash(
        _DH_TRANSCRIPT_TAG,
        uid.encode(),
        sid.encode(),
        group.point_to_bytes(eph_u.pk),
        group.point_to_bytes(eph_s.pk),
        epoch.to_bytes(8, "big"),
    )
    sig_u = schnorr.sign(vault_keypair.sk, transcript)
    sig_s = schnorr.sign(provider_keypair.sk, transcript)
    if not schnorr.verify(vault_pk, transcript, sig_u) or not schnorr.verify(provider_pk, transcript, sig_s):
        raise RegistrationRejected("transcript signature failed")

    shared_u = group.mul(eph_s.pk, eph_u.sk)
    shared_s = group.mul(eph_u.pk, eph_s.sk)
    assert shared_u == shared_s
    key = tagged_hash(_CHANNEL_KEY_TAG, group.point_to_bytes(shared_u), transcript)

    ck = SecureChannelKey(key=key, peer_ids=(uid, sid), epoch=epoch)
    registry.channels[(uid, sid)] = ck
    wire = ChannelTranscript(
        messages=(
            group.point_to_bytes(eph_u.pk) + sig_u.to_bytes(),
            group.point_to_bytes(eph_s.pk) + sig_s.to_bytes(),
        )
    )
    return ck, wire
