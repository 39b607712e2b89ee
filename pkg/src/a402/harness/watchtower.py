"""Watchtowers: challenge stale unilateral closures with fresher evidence.

The provider tower answers channel force-closes; if the provider holds an
authorized in-flight payment it settles with the adapted signature instead,
otherwise it challenges with its latest mirrored state and finalizes once the
window expires. The vault tower answers force-settle claims with the newest
signed account snapshot.
"""

from __future__ import annotations

from typing import Optional, Set

from .. import channel as ch
from ..exchange import ProviderEngine, VaultEngine
from ..ledger import Ledger, TxKind


class ProviderWatchtower:
    """Monitors force-close attempts on channels the provider participates in."""

    def __init__(self, ledger: Ledger, provider: ProviderEngine, enabled: bool = True):
        self.ledger = ledger
        self.provider = provider
        self.enabled = enabled
        self.challenged: Set[str] = set()
        self.responses = 0

    def on_tx(self, tx) -> None:
        if not self.enabled or tx.kind != TxKind.INIT_FORCE_CLOSE:
            return
        claimed = ch.signed_state_from_wire(bytes.fromhex(tx.payload["state"]))
        cid = claimed.cid
        mirror = self.provider.mirrors.get(cid)
        if mirror is None:
            return
        # an authorized unpaid request settles immediately via the adaptor path
        for (rec_cid, rid_k), rec in self.provider.reveals.items():
            if rec_cid == cid and rec.sigma_u is not None and rec.outcome is None:
                held = self.provider.mirrors.get(cid)
                if held is not None and held.b_locked == rec.delta:
                    self.provider.force_close(cid, rid_k)
                    self.responses += 1
                    return
        if mirror.k > claimed.k:
            receipt = self.ledger.submit(
                TxKind.CHALLENGE, {"state": ch.signed_state_to_wire(mirror).hex()}
            )
            if receipt.accepted:
                self.challenged.add(cid.hex())
                self.responses += 1

    def on_block(self, height: int) -> None:
        if not self.enabled:
            return
        for cid_hex in list(self.challenged):
            dispute = self.ledger.pending_disputes.get(cid_hex)
            if dispute is None:
                self.challenged.discard(cid_hex)
                continue
            if dispute.expired(height):
                self.ledger.submit(TxKind.FINAL_FORCE_CLOSE, {"cid": cid_hex})
                self.challenged.discard(cid_hex)


class VaultWatchtower:
    """Monitors force-settle claims against the vault's account book."""

    def __init__(self, ledger: Ledger, vault: VaultEngine, enabled: bool = True):
        self.ledger = ledger
        self.vault = vault
        self.enabled = enabled
        self.challenged: Set[str] = set()
        self.responses = 0

    def on_tx(self, tx) -> None:
        if not self.enabled or self.vault.offline or tx.kind != TxKind.INIT_FORCE_SETTLE:
            return
        accounts = self.vault.accounts
        if accounts is None or tx.payload["vault_id"] != accounts.vault_id:
            return
        owner = tx.payload["owner"]
        latest = accounts.latest_snapshots.get(owner)
        if latest is None or latest.epoch <= tx.payload["epoch"]:
            return
        receipt = self.ledger.submit(
            TxKind.CHALLENGE,
            {
                "target": "vault",
                "vault_id": latest.vault_id,
                "owner": latest.owner,
                "v_free": latest.v_free,
                "epoch": latest.epoch,
                "sig": latest.sig.to_bytes().hex(),
            },
        )
        if receipt.accepted:
            self.challenged.add(f"vault:{accounts.vault_id}:{owner}")
            self.responses += 1

    def on_block(self, height: int) -> None:
        if not self.enabled or self.vault.offline:
            return
        for key in list(self.challenged):
            dispute = self.ledger.pending_disputes.get(key)
            if dispute is None:
                self.challenged.discard(key)
                continue
            if dispute.expired(height):
                _, vault_id, owner = key.split(":", 2)
                self.ledger.submit(TxKind.FINAL_FORCE_SETTLE, {"vault_id": vault_id, "owner": owner})
                self.challenged.discard(key)
