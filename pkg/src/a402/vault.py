"""Liquidity vault accounts: deposits, private channel funding, settlement.

Each participant has a (free, locked) balance held inside the vault. Opening
a private channel reserves capacity from the owner's free balance without any
on-chain transaction; closing credits final balances back; settlement drains
the full free balance into a single on-chain payout. Signed account snapshots
give participants force-settle evidence that survives vault unavailability.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Optional

from .channel import ChannelState, Mode
from .crypto import group, schnorr
from .crypto.hashing import encode_amount, encode_counter, hash_parts
from .errors import InsufficientVaultBalance, ZeroBalance

_SNAPSHOT_TAG = "a402/vault-snapshot"
_SETTLE_TAG = "a402/vault-settle"


@dataclass(frozen=True)
class VaultSnapshot:
    """Vault-signed (owner, v_free, epoch) receipt used as dispute evidence."""

    vault_id: str
    owner: str
    v_free: int
    epoch: int
    sig: schnorr.Signature

    def digest(self) -> bytes:
        return snapshot_digest(self.vault_id, self.owner, self.v_free, self.epoch)


def snapshot_digest(vault_id: str, owner: str, v_free: int, epoch: int) -> bytes:
    return hash_parts(
        [_SNAPSHOT_TAG.encode(), vault_id.encode(), owner.encode(), encode_amount(v_free), encode_counter(epoch)]
    )


def settle_digest(vault_id: str, payee: str, amount: int, epoch: int) -> bytes:
    return hash_parts(
        [_SETTLE_TAG.encode(), vault_id.encode(), payee.encode(), encode_amount(amount), encode_counter(epoch)]
    )


def verify_snapshot(vault_pk: group.Point, snap: VaultSnapshot) -> bool:
    return schnorr.verify(vault_pk, snap.digest(), snap.sig)


@dataclass
class VaultAccount:
    owner: str
    v_free: int = 0
    v_locked: int = 0
    epoch: int = 0


@dataclass(frozen=True)
class CommitteePolicy:
    """Threshold descriptor; recorded at init, only (1, 1) is executable."""

    m: int = 1
    n: int = 1
    members: tuple = ()


class VaultAccounts:
    """Account book of a single vault instance."""

    def __init__(self, vault_id: str, keypair: schnorr.Keypair, policy: CommitteePolicy = CommitteePolicy()):
        if (policy.m, policy.n) != (1, 1):
            raise ValueError("only a 1-of-1 committee is executable")
        self.vault_id = vault_id
        self.keypair = keypair
        self.policy = policy
        self.accounts: Dict[str, VaultAccount] = {}
        self.latest_snapshots: Dict[str, VaultSnapshot] = {}

    def account(self, owner: str) -> VaultAccount:
        if owner not in self.accounts:
            self.accounts[owner] = VaultAccount(owner)
        return self.accounts[owner]

    def _bump(self, acct: VaultAccount) -> VaultSnapshot:
        acct.epoch += 1
        snap = VaultSnapshot(
            vault_id=self.vault_id,
            owner=acct.owner,
            v_free=acct.v_free,
            epoch=acct.epoch,
            sig=schnorr.sign(self.keypair.sk, snapshot_digest(self.vault_id, acct.owner, acct.v_free, acct.epoch)),
        )
        self.latest_snapshots[acct.owner] = snap
        return snap

    def credit_deposit(self, owner: str, amount: int) -> VaultSnapshot:
        acct = self.account(owner)
        acct.v_free += amount
        return self._bump(acct)

    def reserve(self, owner: str, capacity: int) -> VaultSnapshot:
        acct = self.account(owner)
        if acct.v_free < capacity:
            raise InsufficientVaultBalance(f"free {acct.v_free} < requested {capacity}")
        acct.v_free -= capacity
        acct.v_locked += capacity
        return self._bump(acct)

    def credit_close(self, channel: ChannelState) -> None:
        """Cooperative off-chain closure: final balances return to accounts."""
        assert channel.mode is Mode.VAULT
        owner = self.account(channel.client_addr)
        owner.v_locked -= channel.capacity
        owner.v_free += channel.balances.b_free + channel.balances.b_locked
        self._bump(owner)
        provider = self.account(channel.provider_addr)
        provider.v_free += channel.balances.b_s
        self._bump(provider)

    def reconcile_onchain_close(self, channel: ChannelState, paid_total: int) -> None:
        """An on-chain force path spent channel funds from the vault escrow;
        the ledger outcome is authoritative, so only the reservation unwinds."""
        assert channel.mode is Mode.VAULT
        owner = self.account(channel.client_addr)
        owner.v_locked -= paid_total
        self._bump(owner)

    def settle_amount(self, owner: str) -> int:
        acct = self.account(owner)
        if acct.v_free <= 0:
            raise ZeroBalance(owner)
        return acct.v_free

    def mark_settled(self, owner: str) -> VaultSnapshot:
        acct = self.account(owner)
        acct.v_free = 0
        return self._bump(acct)

    def rebase_force_settle(self, owner: str, paid: int) -> None:
        """Account rebased after an on-chain force settle paid `paid` out."""
        acct = self.account(owner)
        acct.v_free = max(0, acct.v_free - paid)
        self._bump(acct)

    def snapshot(self, owner: str) -> VaultSnapshot:
        if owner not in self.latest_snapshots:
            return self._bump(self.account(owner))
        return self.latest_snapshots[owner]

    def sign_settle(self, payee: str, amount: int, epoch: int) -> schnorr.Signature:
        return schnorr.sign(self.keypair.sk, settle_digest(self.vault_id, payee, amount, epoch))

    def total_liabilities(self) -> int:
        return sum(a.v_free + a.v_locked for a in self.accounts.values())

    def inspect(self) -> str:
        lines = []
        for owner in sorted(self.accounts):
            acct = self.accounts[owner]
            lines.append(f"{owner} v_free={acct.v_free} v_locked={acct.v_locked} epoch={acct.epoch}")
        return "\n".join(lines)
