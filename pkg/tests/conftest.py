"""Shared fixtures: keypairs, funded ledgers, signed-state builders."""

import pytest

from a402 import channel as ch
from a402.crypto import keygen
from a402.ledger import Ledger, TxKind


@pytest.fixture
def vault_kp():
    return keygen(b"vault-key")


@pytest.fixture
def provider_kp():
    return keygen(b"provider-key")


@pytest.fixture
def client_kp():
    return keygen(b"client-key")


@pytest.fixture
def addrs(vault_kp, provider_kp, client_kp):
    return {
        "vault": ch.address_of(vault_kp.pk),
        "provider": ch.address_of(provider_kp.pk),
        "client": ch.address_of(client_kp.pk),
    }


@pytest.fixture
def ledger():
    return Ledger()


class ChannelFixture:
    """A standard-mode channel escrowed on a ledger, with evidence helpers."""

    def __init__(self, ledger, vault_kp, provider_kp, client_kp, capacity=100):
        self.ledger = ledger
        self.vault_kp = vault_kp
        self.provider_kp = provider_kp
        self.client_kp = client_kp
        self.capacity = capacity
        self.client_addr = ch.address_of(client_kp.pk)
        self.provider_addr = ch.address_of(provider_kp.pk)
        self.vault_addr = ch.address_of(vault_kp.pk)
        self.cid = ch.derive_cid(self.client_addr, "sid-1", b"nonce")
        self.state = ch.initial_state(
            self.cid, self.client_addr, "sid-1", self.provider_addr, capacity, ch.Mode.STANDARD
        )
        ledger.mint(self.client_addr, capacity)
        receipt = ledger.submit(
            TxKind.CREATE_ASC,
            {
                "cid": self.cid.hex(),
                "addr_c": self.client_addr,
                "addr_s": self.provider_addr,
                "addr_u": self.vault_addr,
                "pk_s": self._hex_pk(provider_kp),
                "pk_u": self._hex_pk(vault_kp),
                "v": capacity,
            },
        )
        assert receipt.accepted, receipt

    @staticmethod
    def _hex_pk(kp):
        from a402.crypto import point_to_bytes

        return point_to_bytes(kp.pk).hex()

    def signed_state(self, k, b_free, b_locked, b_s):
        snapshot = ch.ChannelState(
            cid=self.cid,
            client_addr=self.client_addr,
            provider_sid="sid-1",
            provider_addr=self.provider_addr,
            balances=ch.Balances(b_free, b_locked, b_s),
            status=ch.Status.OPEN,
            k=k,
            mode=ch.Mode.STANDARD,
        )
        return ch.sign_state(self.vault_kp.sk, snapshot)

    def state_hex(self, k, b_free, b_locked, b_s):
        return ch.signed_state_to_wire(self.signed_state(k, b_free, b_locked, b_s)).hex()

    def coop_close_payload(self, k, b_c, b_s):
        from a402.crypto import sign

        digest = ch.coop_close_digest(self.cid, k, b_c, b_s)
        return {
            "cid": self.cid.hex(),
            "k": k,
            "b_c": b_c,
            "b_s": b_s,
            "sig": sign(self.vault_kp.sk, digest).to_bytes().hex(),
        }


@pytest.fixture
def channel_fixture(ledger, vault_kp, provider_kp, client_kp):
    return ChannelFixture(ledger, vault_kp, provider_kp, client_kp)
