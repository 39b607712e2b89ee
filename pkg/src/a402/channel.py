"""Atomic service channel state: balances, status machine, signed evidence.

The vault owns channel state; the provider and client mirror the latest
vault-signed copy, which doubles as on-chain dispute evidence. Balances track
three buckets (client free, client locked for the in-flight request, provider
revenue) whose sum equals the channel capacity until closure.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from typing import Dict, Optional, Tuple

from .crypto import group, schnorr
from .crypto.hashing import CID_LEN, encode_amount, encode_counter, hash_parts, tagged_hash
from .errors import DuplicateChannel, InsufficientChannelFunds

_STATE_TAG = "a402/channel-state"
_COOP_CLOSE_TAG = "a402/coop-close"
_CID_TAG = "a402/cid"
_ACK_TAG = "a402/ack-receipt"
_ADDR_TAG = "a402/address"


def address_of(pk: group.Point) -> str:
    """On-chain address: truncated hash of the public key, hex encoded."""
    return tagged_hash(_ADDR_TAG, group.point_to_bytes(pk))[:20].hex()


class Status(enum.Enum):
    OPEN = "OPEN"
    LOCKED = "LOCKED"
    PENDING = "PENDING"
    CLOSED = "CLOSED"


class Mode(enum.Enum):
    STANDARD = "STANDARD"
    VAULT = "VAULT"


# allowed status transitions; CLOSED is terminal
_TRANSITIONS = {
    (Status.OPEN, Status.LOCKED),
    (Status.LOCKED, Status.PENDING),
    (Status.LOCKED, Status.OPEN),     # lock timeout revert
    (Status.PENDING, Status.OPEN),    # reveal completed
    (Status.OPEN, Status.CLOSED),
    (Status.LOCKED, Status.CLOSED),
    (Status.PENDING, Status.CLOSED),
}


@dataclass
class Balances:
    b_free: int
    b_locked: int
    b_s: int

    @property
    def capacity(self) -> int:
        return self.b_free + self.b_locked + self.b_s

    def lock(self, delta: int) -> None:
        if delta > self.b_free:
            raise InsufficientChannelFunds(f"lock {delta} > free {self.b_free}")
        self.b_free -= delta
        self.b_locked += delta

    def unlock(self, delta: int) -> None:
        assert delta <= self.b_locked
        self.b_locked -= delta
        self.b_free += delta

    def settle_to_provider(self, delta: int) -> None:
        assert delta <= self.b_locked
        self.b_locked -= delta
        self.b_s += delta

    def copy(self) -> "Balances":
        return Balances(self.b_free, self.b_locked, self.b_s)


@dataclass
class ChannelState:
    cid: bytes
    client_addr: str
    provider_sid: str
    provider_addr: str
    balances: Balances
    status: Status
    k: int
    mode: Mode
    vault_id: str = ""

    @property
    def capacity(self) -> int:
        return self.balances.capacity

    def transition(self, new: Status) -> None:
        if (self.status, new) not in _TRANSITIONS:
            raise ValueError(f"illegal transition {self.status.value} -> {new.value}")
        self.status = new


def derive_cid(client_addr: str, provider_sid: str, nonce: bytes) -> bytes:
    return tagged_hash(_CID_TAG, client_addr.encode(), provider_sid.encode(), nonce)[:CID_LEN]


def initial_state(
    cid: bytes,
    client_addr: str,
    provider_sid: str,
    provider_addr: str,
    capacity: int,
    mode: Mode,
    vault_id: str = "",
) -> ChannelState:
    return ChannelState(
        cid=cid,
        client_addr=client_addr,
        provider_sid=provider_sid,
        provider_addr=provider_addr,
        balances=Balances(capacity, 0, 0),
        status=Status.OPEN,
        k=0,
        mode=mode,
        vault_id=vault_id,
    )


# -- vault-signed state evidence ----------------------------------------------


@dataclass(frozen=True)
class SignedState:
    """Dispute evidence: a balance snapshot at version k under the vault key."""

    cid: bytes
    mode: str
    vault_id: str
    client_addr: str
    provider_addr: str
    k: int
    b_free: int
    b_locked: int
    b_s: int
    sig: schnorr.Signature

    @property
    def total(self) -> int:
        return self.b_free + self.b_locked + self.b_s

    def payload_bytes(self) -> bytes:
        return _state_digest(
            self.cid, self.mode, self.vault_id, self.client_addr,
            self.provider_addr, self.k, self.b_free, self.b_locked, self.b_s,
        )


def _state_digest(cid, mode, vault_id, client_addr, provider_addr, k, b_free, b_locked, b_s) -> bytes:
    return hash_parts(
        [
            _STATE_TAG.encode(),
            cid,
            mode.encode(),
            vault_id.encode(),
            client_addr.encode(),
            provider_addr.encode(),
            encode_counter(k),
            encode_amount(b_free),
            encode_amount(b_locked),
            encode_amount(b_s),
        ]
    )


def sign_state(vault_sk: int, state: ChannelState) -> SignedState:
    digest = _state_digest(
        state.cid, state.mode.value, state.vault_id, state.client_addr,
        state.provider_addr, state.k,
        state.balances.b_free, state.balances.b_locked, state.balances.b_s,
    )
    return SignedState(
        cid=state.cid,
        mode=state.mode.value,
        vault_id=state.vault_id,
        client_addr=state.client_addr,
        provider_addr=state.provider_addr,
        k=state.k,
        b_free=state.balances.b_free,
        b_locked=state.balances.b_locked,
        b_s=state.balances.b_s,
        sig=schnorr.sign(vault_sk, digest),
    )


def verify_state(vault_pk: group.Point, signed: SignedState) -> bool:
    return schnorr.verify(vault_pk, signed.payload_bytes(), signed.sig)


def signed_state_to_wire(signed: SignedState) -> bytes:
    parts = [
        signed.cid,
        signed.mode.encode(),
        signed.vault_id.encode(),
        signed.client_addr.encode(),
        signed.provider_addr.encode(),
        encode_counter(signed.k),
        encode_amount(signed.b_free),
        encode_amount(signed.b_locked),
        encode_amount(signed.b_s),
        signed.sig.to_bytes(),
    ]
    out = bytearray()
    for part in parts:
        out += len(part).to_bytes(4, "big")
        out += part
    return bytes(out)


def signed_state_from_wire(data: bytes) -> SignedState:
    parts = []
    i = 0
    while i < len(data):
        n = int.from_bytes(data[i : i + 4], "big")
        i += 4
        parts.append(data[i : i + n])
        i += n
    if len(parts) != 10:
        raise ValueError("malformed signed state")
    return SignedState(
        cid=parts[0],
        mode=parts[1].decode(),
        vault_id=parts[2].decode(),
        client_addr=parts[3].decode(),
        provider_addr=parts[4].decode(),
        k=int.from_bytes(parts[5], "big"),
        b_free=int.from_bytes(parts[6], "big"),
        b_locked=int.from_bytes(parts[7], "big"),
        b_s=int.from_bytes(parts[8], "big"),
        sig=schnorr.Signature.from_bytes(parts[9]),
    )


# -- cooperative close message --------------------------------------------------


def coop_close_digest(cid: bytes, k: int, b_c: int, b_s: int) -> bytes:
    return hash_parts([_COOP_CLOSE_TAG.encode(), cid, encode_counter(k), encode_amount(b_c), encode_amount(b_s)])


def ack_receipt_digest(cid: bytes, k: int) -> bytes:
    return hash_parts([_ACK_TAG.encode(), cid, encode_counter(k)])


# -- channel table ---------------------------------------------------------------


class ChannelTable:
    """The vault's channel book: one live channel per (client, provider)."""

    def __init__(self):
        self.channels: Dict[bytes, ChannelState] = {}

    def add(self, state: ChannelState) -> None:
        if self.find_active(state.client_addr, state.provider_sid) is not None:
            raise DuplicateChannel(f"{state.client_addr}<->{state.provider_sid}")
        self.channels[state.cid] = state

    def get(self, cid: bytes) -> Optional[ChannelState]:
        return self.channels.get(cid)

    def find_active(self, client_addr: str, provider_sid: str) -> Optional[ChannelState]:
        for ch in self.channels.values():
            if (
                ch.client_addr == client_addr
                and ch.provider_sid == provider_sid
                and ch.status is not Status.CLOSED
            ):
                return ch
        return None

    def inspect(self, cid: bytes) -> str:
        ch = self.channels[cid]
        b = ch.balances
        return (
            f"cid={ch.cid.hex()} client={ch.client_addr} provider={ch.provider_sid} "
            f"mode={ch.mode.value} status={ch.status.value} k={ch.k} "
            f"b_free={b.b_free} b_locked={b.b_locked} b_s={b.b_s}"
        )
