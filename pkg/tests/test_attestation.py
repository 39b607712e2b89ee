"""Mock attestation authority, registry admission, secure channels."""

import pytest

from a402.attestation import (
    ChannelTranscript,
    MockAuthority,
    Registry,
    establish_secure_channel,
    load_allowlist,
    verify_att,
)
from a402.crypto import keygen, open_sealed, seal, tagged_hash
from a402.errors import BadWitnessError, DuplicateIdentity, RegistrationRejected, UnknownParty

MEASUREMENT = tagged_hash("test/code", b"provider-v1")
OTHER_MEASUREMENT = tagged_hash("test/code", b"provider-v2")


@pytest.fixture
def authority():
    return MockAuthority(b"authority-seed")


@pytest.fixture
def registry(authority):
    return Registry(authority_pk=authority.keypair.pk, approved={MEASUREMENT})


def test_attest_then_verify(authority, registry):
    kp = keygen(b"prov")
    report = authority.attest(kp.pk, MEASUREMENT)
    assert verify_att(report, kp.pk, MEASUREMENT, authority.keypair.pk, {MEASUREMENT})


def test_verify_rejects_flipped_measurement(authority):
    kp = keygen(b"prov")
    report = authority.attest(kp.pk, MEASUREMENT)
    assert not verify_att(report, kp.pk, OTHER_MEASUREMENT, authority.keypair.pk, {MEASUREMENT, OTHER_MEASUREMENT})


def test_verify_rejects_rogue_authority(authority):
    rogue = MockAuthority(b"rogue")
    kp = keygen(b"prov")
    report = rogue.attest(kp.pk, MEASUREMENT)
    assert not verify_att(report, kp.pk, MEASUREMENT, authority.keypair.pk, {MEASUREMENT})


def test_verify_rejects_unapproved_measurement(authority):
    kp = keygen(b"prov")
    report = authority.attest(kp.pk, OTHER_MEASUREMENT)
    assert not verify_att(report, kp.pk, OTHER_MEASUREMENT, authority.keypair.pk, {MEASUREMENT})


def test_replayed_report_for_other_pk(authority):
    kp = keygen(b"prov")
    other = keygen(b"imposter")
    report = authority.attest(kp.pk, MEASUREMENT)
    assert not verify_att(report, other.pk, MEASUREMENT, authority.keypair.pk, {MEASUREMENT})


def test_register_provider_and_vault(authority, registry):
    prov = keygen(b"prov")
    vault = keygen(b"vault")
    sid = registry.register("provider", prov.pk, MEASUREMENT, authority.attest(prov.pk, MEASUREMENT))
    uid = registry.register("vault", vault.pk, MEASUREMENT, authority.attest(vault.pk, MEASUREMENT))
    assert sid in registry.providers and uid in registry.vaults
    assert registry.audit()


def test_register_rejects_bad_report(authority, registry):
    prov = keygen(b"prov")
    bad = MockAuthority(b"rogue").attest(prov.pk, MEASUREMENT)
    with pytest.raises(RegistrationRejected):
        registry.register("provider", prov.pk, MEASUREMENT, bad)
    assert not registry.providers


def test_register_rejects_duplicate_pk(authority, registry):
    prov = keygen(b"prov")
    report = authority.attest(prov.pk, MEASUREMENT)
    registry.register("provider", prov.pk, MEASUREMENT, report)
    with pytest.raises(DuplicateIdentity):
        registry.register("provider", prov.pk, MEASUREMENT, report)


def test_secure_channel_key_agreement(authority, registry):
    prov = keygen(b"prov")
    vault = keygen(b"vault")
    sid = registry.register("provider", prov.pk, MEASUREMENT, authority.attest(prov.pk, MEASUREMENT))
    uid = registry.register("vault", vault.pk, MEASUREMENT, authority.attest(vault.pk, MEASUREMENT))
    ck, wire = establish_secure_channel(registry, uid, sid, vault, prov, b"eph")
    assert registry.channels[(uid, sid)] is ck
    assert ck.epoch == 1

    # eavesdropper sees the transcript but cannot decrypt a probe message
    probe = seal(ck.key, 0, 0, b"probe")
    for observed in wire.messages:
        assert ck.key not in observed
        with pytest.raises(BadWitnessError):
            open_sealed(tagged_hash("adversary/guess", observed), probe)
    assert open_sealed(ck.key, probe) == b"probe"


def test_secure_channel_reestablish_bumps_epoch(authority, registry):
    prov = keygen(b"prov")
    vault = keygen(b"vault")
    sid = registry.register("provider", prov.pk, MEASUREMENT, authority.attest(prov.pk, MEASUREMENT))
    uid = registry.register("vault", vault.pk, MEASUREMENT, authority.attest(vault.pk, MEASUREMENT))
    first, _ = establish_secure_channel(registry, uid, sid, vault, prov, b"eph")
    second, _ = establish_secure_channel(registry, uid, sid, vault, prov, b"eph")
    assert second.epoch == 2
    assert first.key != second.key
    assert registry.channels[(uid, sid)].epoch == 2


def test_secure_channel_unknown_party(authority, registry):
    vault = keygen(b"vault")
    uid = registry.register("vault", vault.pk, MEASUREMENT, authority.attest(vault.pk, MEASUREMENT))
    with pytest.raises(UnknownParty):
        establish_secure_channel(registry, uid, "sid-404", vault, keygen(b"x"), b"eph")


def test_allowlist_file_round_trip(tmp_path):
    path = tmp_path / "allow.txt"
    path.write_text(f"# approved measurements\n{MEASUREMENT.hex()}\n\n{OTHER_MEASUREMENT.hex()}\n")
    assert load_allowlist(str(path)) == {MEASUREMENT, OTHER_MEASUREMENT}


def test_registry_dump_deterministic(authority, registry):
    prov = keygen(b"prov")
    vault = keygen(b"vault")
    registry.register("provider", prov.pk, MEASUREMENT, authority.attest(prov.pk, MEASUREMENT))
    registry.register("vault", vault.pk, MEASUREMENT, authority.attest(vault.pk, MEASUREMENT))
    d1 = registry.dump()
    d2 = registry.dump()
    assert d1 == d2
    assert "provider sid-1" in d1 and "vault uid-1" in d1
