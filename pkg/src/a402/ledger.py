"""Deterministic mock blockchain: escrows, disputes, cost metering.

Transactions apply atomically in submission order through a single writer.
Rejections come back as coded receipts and leave state untouched. Per-kind
costs are read from a calibration table (gas units and vbytes) and converted
to USD at the fixed rates the table was calibrated with.
"""

from __future__ import annotations

import enum
import json
import importlib.resources
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Tuple

from . import channel as ch
from . import vault as vt
from .crypto import group, schnorr
from .crypto.hashing import hash_parts, payment_message
from .errors import LedgerRejection, Reject

GAS_PRICE_GWEI = 20
ETH_USD = 2000
SAT_PER_VBYTE = 10
BTC_USD = 50_000

DEFAULT_DISPUTE_WINDOW = 10
DEFAULT_SETTLE_WINDOW = 20


class TxKind:
    CREATE_ASC = "createASC"
    CLOSE_ASC = "closeASC"
    INIT_FORCE_CLOSE = "initForceClose"
    CHALLENGE = "challenge"
    FINAL_FORCE_CLOSE = "finalForceClose"
    FORCE_CLOSE_ASIG = "forceCloseASig"
    INIT_VAULT = "initVault"
    SETTLE_VAULT = "settleVault"
    INIT_FORCE_SETTLE = "initForceSettle"
    FINAL_FORCE_SETTLE = "finalForceSettle"
    X402_APPROVE = "x402Approve"
    X402_TRANSFER = "x402Transfer"


def gas_to_usd(gas: int) -> float:
    return gas * GAS_PRICE_GWEI * 1e-9 * ETH_USD


def vbytes_to_usd(vbytes: int) -> float:
    return vbytes * SAT_PER_VBYTE * 1e-8 * BTC_USD


class CostTable:
    """Per-kind (eth gas, btc vbytes) weights loaded from a text table."""

    def __init__(self, entries: Dict[Tuple[str, str], int]):
        self.entries = entries

    @classmethod
    def parse(cls, text: str) -> "CostTable":
        entries: Dict[Tuple[str, str], int] = {}
        for line in text.splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            kind, chain, cost = line.split()
            entries[(kind, chain)] = int(cost)
        return cls(entries)

    @classmethod
    def default(cls) -> "CostTable":
        text = importlib.resources.files("a402.data").joinpath("eth_btc_costs.txt").read_text()
        return cls.parse(text)

    def cost(self, kind: str, chain: str) -> int:
        return self.entries[(kind, chain)]

    def dump(self) -> str:
        lines = [f"{kind} {chain} {cost}" for (kind, chain), cost in sorted(self.entries.items())]
        return "\n".join(lines)


@dataclass(frozen=True)
class Receipt:
    accepted: bool
    height: int
    code: Optional[str] = None


@dataclass
class LedgerTx:
    kind: str
    payload: dict
    height: int = 0
    eth_gas: int = 0
    btc_vbytes: int = 0

    def payload_digest(self) -> str:
        return hash_parts([json.dumps(self.payload, sort_keys=True).encode()]).hex()[:16]


class EscrowStatus(enum.Enum):
    ACTIVE = "ACTIVE"
    DISPUTED = "DISPUTED"
    SETTLED = "SETTLED"


@dataclass
class EscrowRecord:
    cid: str
    addr_c: str
    addr_s: str
    addr_u: str
    pk_s: group.Point
    pk_u: group.Point
    amount: int
    status: EscrowStatus = EscrowStatus.ACTIVE
    latest_settled_k: int = -1


@dataclass
class VaultEscrow:
    vault_id: str
    vault_pk: group.Point
    amount: int = 0
    settle_epochs: Dict[str, int] = field(default_factory=dict)


@dataclass
class DisputeRecord:
    opened_at: int
    window: int
    claimed_channel: Optional[ch.SignedState] = None
    challenger_channel: Optional[ch.SignedState] = None
    claimed_snapshot: Optional[vt.VaultSnapshot] = None
    challenger_snapshot: Optional[vt.VaultSnapshot] = None

    def best_channel_state(self) -> ch.SignedState:
        return self.challenger_channel or self.claimed_channel

    def best_snapshot(self) -> vt.VaultSnapshot:
        return self.challenger_snapshot or self.claimed_snapshot

    def expired(self, height: int) -> bool:
        return height >= self.opened_at + self.window


class Ledger:
    """Single-writer mock chain with observer hooks for watchtowers."""

    def __init__(
        self,
        cost_table: Optional[CostTable] = None,
        dispute_window: int = DEFAULT_DISPUTE_WINDOW,
        settle_window: int = DEFAULT_SETTLE_WINDOW,
    ):
        self.cost_table = cost_table or CostTable.default()
        self.dispute_window = dispute_window
        self.settle_window = settle_window
        self.height = 0
        self.minted = 0
        self.balances: Dict[str, int] = {}
        self.escrows: Dict[str, EscrowRecord] = {}
        self.vaults: Dict[str, VaultEscrow] = {}
        self.pending_disputes: Dict[str, DisputeRecord] = {}
        self.log: List[LedgerTx] = []
        self.tx_observers: List[Callable[[LedgerTx], None]] = []
        self.block_observers: List[Callable[[int], None]] = []
        self._handlers = {
            TxKind.CREATE_ASC: self._apply_create_asc,
            TxKind.CLOSE_ASC: self._apply_cooperative_close,
            TxKind.INIT_FORCE_CLOSE: self._apply_init_force_close,
            TxKind.CHALLENGE: self._apply_challenge,
            TxKind.FINAL_FORCE_CLOSE: self._apply_final_force_close,
            TxKind.FORCE_CLOSE_ASIG: self._apply_force_close_asig,
            TxKind.INIT_VAULT: self._apply_init_vault,
            TxKind.SETTLE_VAULT: self._apply_settle_vault,
            TxKind.INIT_FORCE_SETTLE: self._apply_init_force_settle,
            TxKind.FINAL_FORCE_SETTLE: self._apply_final_force_settle,
            TxKind.X402_APPROVE: self._apply_x402_approve,
            TxKind.X402_TRANSFER: self._apply_x402_transfer,
        }

    # -- faucet / queries ------------------------------------------------

    def mint(self, addr: str, amount: int) -> None:
        self.balances[addr] = self.balances.get(addr, 0) + amount
        self.minted += amount

    def balance(self, addr: str) -> int:
        return self.balances.get(addr, 0)

    def escrowed_total(self) -> int:
        held = sum(e.amount for e in self.escrows.values() if e.status is not EscrowStatus.SETTLED)
        held += sum(v.amount for v in self.vaults.values())
        return held

    def total_supply(self) -> int:
        return sum(self.balances.values()) + self.escrowed_total()

    # -- submission ------------------------------------------------------

    def submit(self, kind: str, payload: dict) -> Receipt:
        handler = self._handlers.get(kind)
        if handler is None:
            return Receipt(False, self.height, Reject.BAD_PAYLOAD)
        try:
            handler(payload)
        except LedgerRejection as rej:
            return Receipt(False, self.height, rej.code)
        tx = LedgerTx(
            kind=kind,
            payload=payload,
            height=self.height,
            eth_gas=self.cost_table.cost(kind, "eth"),
            btc_vbytes=self.cost_table.cost(kind, "btc"),
        )
        self.log.append(tx)
        for observer in list(self.tx_observers):
            observer(tx)
        return Receipt(True, self.height)

    def advance_blocks(self, n: int) -> int:
        if n < 1:
            raise ValueError("must advance at least one block")
        self.height += n
        for observer in list(self.block_observers):
            observer(self.height)
        return self.height

    # -- helpers -----------------------------------------------------------

    def _debit(self, addr: str, amount: int) -> None:
        if self.balances.get(addr, 0) < amount:
            raise LedgerRejection(Reject.INSUFFICIENT_FUNDS)
        self.balances[addr] -= amount

    def _credit(self, addr: str, amount: int) -> None:
        self.balances[addr] = self.balances.get(addr, 0) + amount

    def _escrow(self, cid_hex: str) -> EscrowRecord:
        rec = self.escrows.get(cid_hex)
        if rec is None:
            raise LedgerRejection(Reject.UNKNOWN_CHANNEL)
        return rec

    def _vault(self, vault_id: str) -> VaultEscrow:
        rec = self.vaults.get(vault_id)
        if rec is None:
            raise LedgerRejection(Reject.UNKNOWN_VAULT)
        return rec

    def _decode_state(self, payload: dict) -> ch.SignedState:
        try:
            return ch.signed_state_from_wire(bytes.fromhex(payload["state"]))
        except (KeyError, ValueError) as exc:
            raise LedgerRejection(Reject.BAD_PAYLOAD, str(exc))

    def _state_authority_pk(self, state: ch.SignedState) -> group.Point:
        """The vault key that must have signed this state."""
        if state.mode == ch.Mode.VAULT.value:
            return self._vault(state.vault_id).vault_pk
        return self._escrow(state.cid.hex()).pk_u

    def _check_state(self, state: ch.SignedState) -> None:
        if not ch.verify_state(self._state_authority_pk(state), state):
            raise LedgerRejection(Reject.BAD_SIGNATURE)
        if state.mode == ch.Mode.VAULT.value:
            if state.total > self._vault(state.vault_id).amount:
                raise LedgerRejection(Reject.INSUFFICIENT_FUNDS)
        else:
            if state.total != self._escrow(state.cid.hex()).amount:
                raise LedgerRejection(Reject.SUM_MISMATCH)

    def _payout_channel(self, state: ch.SignedState, pay_c: int, pay_s: int, settled_k: int) -> None:
        cid_hex = state.cid.hex()
        if state.mode == ch.Mode.VAULT.value:
            vault = self._vault(state.vault_id)
            vault.amount -= pay_c + pay_s
        else:
            rec = self._escrow(cid_hex)
            rec.status = EscrowStatus.SETTLED
            rec.amount = 0
            rec.latest_settled_k = settled_k
        self._credit(state.client_addr, pay_c)
        self._credit(state.provider_addr, pay_s)
        self.pending_disputes.pop(cid_hex, None)

    # -- channel lifecycle -------------------------------------------------

    def _apply_create_asc(self, p: dict) -> None:
        if p["v"] <= 0:
            raise LedgerRejection(Reject.ZERO_AMOUNT)
        cid_hex = p["cid"]
        if cid_hex in self.escrows:
            raise LedgerRejection(Reject.DUPLICATE_CID)
        self._debit(p["addr_c"], p["v"])
        self.escrows[cid_hex] = EscrowRecord(
            cid=cid_hex,
            addr_c=p["addr_c"],
            addr_s=p["addr_s"],
            addr_u=p["addr_u"],
            pk_s=group.point_from_bytes(bytes.fromhex(p["pk_s"])),
            pk_u=group.point_from_bytes(bytes.fromhex(p["pk_u"])),
            amount=p["v"],
        )

    def _apply_cooperative_close(self, p: dict) -> None:
        rec = self._escrow(p["cid"])
        if rec.status is EscrowStatus.SETTLED:
            raise LedgerRejection(Reject.ALREADY_SETTLED)
        if rec.status is EscrowStatus.DISPUTED:
            raise LedgerRejection(Reject.DISPUTE_OPEN)
        if p["b_c"] + p["b_s"] != rec.amount:
            raise LedgerRejection(Reject.SUM_MISMATCH)
        digest = ch.coop_close_digest(bytes.fromhex(p["cid"]), p["k"], p["b_c"], p["b_s"])
        sig = schnorr.Signature.from_bytes(bytes.fromhex(p["sig"]))
        if not schnorr.verify(rec.pk_u, digest, sig):
            raise LedgerRejection(Reject.BAD_SIGNATURE)
        rec.status = EscrowStatus.SETTLED
        rec.amount = 0
        rec.latest_settled_k = p["k"]
        self._credit(rec.addr_c, p["b_c"])
        self._credit(rec.addr_s, p["b_s"])

    def _apply_init_force_close(self, p: dict) -> None:
        state = self._decode_state(p)
        cid_hex = state.cid.hex()
        if cid_hex in self.pending_disputes:
            raise LedgerRejection(Reject.DISPUTE_OPEN)
        if state.mode == ch.Mode.STANDARD.value:
            rec = self._escrow(cid_hex)
            if rec.status is EscrowStatus.SETTLED:
                raise LedgerRejection(Reject.ALREADY_SETTLED)
        self._check_state(state)
        if state.mode == ch.Mode.STANDARD.value:
            self.escrows[cid_hex].status = EscrowStatus.DISPUTED
        self.pending_disputes[cid_hex] = DisputeRecord(
            opened_at=self.height, window=self.dispute_window, claimed_channel=state
        )

    def _apply_challenge(self, p: dict) -> None:
        if p.get("target") == "vault":
            self._apply_challenge_settle(p)
            return
        state = self._decode_state(p)
        dispute = self.pending_disputes.get(state.cid.hex())
        if dispute is None or dispute.claimed_channel is None:
            raise LedgerRejection(Reject.NO_DISPUTE)
        if dispute.expired(self.height):
            raise LedgerRejection(Reject.WINDOW_CLOSED)
        self._check_state(state)
        if state.k <= dispute.best_channel_state().k:
            raise LedgerRejection(Reject.STALE_CHALLENGE)
        dispute.challenger_channel = state

    def _apply_final_force_close(self, p: dict) -> None:
        cid_hex = p["cid"]
        dispute = self.pending_disputes.get(cid_hex)
        if dispute is None or dispute.claimed_channel is None:
            raise LedgerRejection(Reject.NO_DISPUTE)
        if not dispute.expired(self.height):
            raise LedgerRejection(Reject.WINDOW_OPEN)
        winning = dispute.best_channel_state()
        self._payout_channel(winning, winning.b_free + winning.b_locked, winning.b_s, winning.k)
        # applied effects, recorded for observers
        p["paid_c"] = winning.b_free + winning.b_locked
        p["paid_s"] = winning.b_s
        p["settled_k"] = winning.k

    def _apply_force_close_asig(self, p: dict) -> None:
        state = self._decode_state(p)
        cid_hex = state.cid.hex()
        if state.mode == ch.Mode.STANDARD.value:
            rec = self._escrow(cid_hex)
            if rec.status is EscrowStatus.SETTLED:
                raise LedgerRejection(Reject.ALREADY_SETTLED)
        self._check_state(state)
        if "sigma_s" in p:
            # settlement of the in-flight request: the adapted signature must
            # verify over the pending payment message
            if p["delta"] != state.b_locked:
                raise LedgerRejection(Reject.SUM_MISMATCH)
            try:
                sigma = schnorr.Signature.from_bytes(bytes.fromhex(p["sigma_s"]))
                h = bytes.fromhex(p["h"])
                m = payment_message(state.cid, p["rid_k"], p["delta"], h)
            except (KeyError, ValueError) as exc:
                raise LedgerRejection(Reject.BAD_PAYLOAD, str(exc))
            if state.mode == ch.Mode.VAULT.value:
                pk_s = group.point_from_bytes(bytes.fromhex(p["pk_s"]))
                if ch.address_of(pk_s) != state.provider_addr:
                    raise LedgerRejection(Reject.BAD_PAYLOAD, "provider key does not match state")
            else:
                pk_s = self._escrow(cid_hex).pk_s
            if not schnorr.verify(pk_s, m, sigma):
                raise LedgerRejection(Reject.BAD_ADAPTED_SIG)
            self._payout_channel(state, state.b_free, state.b_s + state.b_locked, state.k)
        else:
            # no adapted signature: locked funds return to the client
            self._payout_channel(state, state.b_free + state.b_locked, state.b_s, state.k)

    # -- liquidity vault ----------------------------------------------------

    def _apply_init_vault(self, p: dict) -> None:
        if p["amount"] <= 0:
            raise LedgerRejection(Reject.ZERO_AMOUNT)
        vault_pk = group.point_from_bytes(bytes.fromhex(p["vault_pk"]))
        existing = self.vaults.get(p["vault_id"])
        if existing is not None and existing.vault_pk != vault_pk:
            raise LedgerRejection(Reject.BAD_PAYLOAD, "vault key mismatch")
        self._debit(p["depositor"], p["amount"])
        if existing is None:
            self.vaults[p["vault_id"]] = VaultEscrow(p["vault_id"], vault_pk, p["amount"])
        else:
            existing.amount += p["amount"]

    def _apply_settle_vault(self, p: dict) -> None:
        vault = self._vault(p["vault_id"])
        if p["amount"] <= 0:
            raise LedgerRejection(Reject.ZERO_AMOUNT)
        if p["amount"] > vault.amount:
            raise LedgerRejection(Reject.INSUFFICIENT_FUNDS)
        if p["epoch"] <= vault.settle_epochs.get(p["payee"], 0):
            raise LedgerRejection(Reject.STALE_SETTLE)
        digest = vt.settle_digest(p["vault_id"], p["payee"], p["amount"], p["epoch"])
        sig = schnorr.Signature.from_bytes(bytes.fromhex(p["sig"]))
        if not schnorr.verify(vault.vault_pk, digest, sig):
            raise LedgerRejection(Reject.BAD_SIGNATURE)
        vault.amount -= p["amount"]
        vault.settle_epochs[p["payee"]] = p["epoch"]
        self._credit(p["payee"], p["amount"])

    def _decode_snapshot(self, p: dict) -> vt.VaultSnapshot:
        try:
            return vt.VaultSnapshot(
                vault_id=p["vault_id"],
                owner=p["owner"],
                v_free=p["v_free"],
                epoch=p["epoch"],
                sig=schnorr.Signature.from_bytes(bytes.fromhex(p["sig"])),
            )
        except (KeyError, ValueError) as exc:
            raise LedgerRejection(Reject.BAD_PAYLOAD, str(exc))

    @staticmethod
    def _settle_key(vault_id: str, owner: str) -> str:
        return f"vault:{vault_id}:{owner}"

    def _apply_init_force_settle(self, p: dict) -> None:
        snap = self._decode_snapshot(p)
        vault = self._vault(snap.vault_id)
        key = self._settle_key(snap.vault_id, snap.owner)
        if key in self.pending_disputes:
            raise LedgerRejection(Reject.DISPUTE_OPEN)
        if not vt.verify_snapshot(vault.vault_pk, snap):
            raise LedgerRejection(Reject.BAD_SIGNATURE)
        if snap.v_free > vault.amount:
            raise LedgerRejection(Reject.INSUFFICIENT_FUNDS)
        self.pending_disputes[key] = DisputeRecord(
            opened_at=self.height, window=self.settle_window, claimed_snapshot=snap
        )

    def _apply_challenge_settle(self, p: dict) -> None:
        snap = self._decode_snapshot(p)
        key = self._settle_key(snap.vault_id, snap.owner)
        dispute = self.pending_disputes.get(key)
        if dispute is None or dispute.claimed_snapshot is None:
            raise LedgerRejection(Reject.NO_DISPUTE)
        if dispute.expired(self.height):
            raise LedgerRejection(Reject.WINDOW_CLOSED)
        vault = self._vault(snap.vault_id)
        if not vt.verify_snapshot(vault.vault_pk, snap):
            raise LedgerRejection(Reject.BAD_SIGNATURE)
        if snap.epoch <= dispute.best_snapshot().epoch:
            raise LedgerRejection(Reject.STALE_CHALLENGE)
        dispute.challenger_snapshot = snap

    def _apply_final_force_settle(self, p: dict) -> None:
        key = self._settle_key(p["vault_id"], p["owner"])
        dispute = self.pending_disputes.get(key)
        if dispute is None or dispute.claimed_snapshot is None:
            raise LedgerRejection(Reject.NO_DISPUTE)
        if not dispute.expired(self.height):
            raise LedgerRejection(Reject.WINDOW_OPEN)
        winning = dispute.best_snapshot()
        vault = self._vault(p["vault_id"])
        paid = min(winning.v_free, vault.amount)
        vault.amount -= paid
        self._credit(winning.owner, paid)
        del self.pending_disputes[key]
        p["paid"] = paid
        p["settled_epoch"] = winning.epoch

    # -- x402 baseline -------------------------------------------------------

    def _apply_x402_approve(self, p: dict) -> None:
        if p["payer"] not in self.balances:
            raise LedgerRejection(Reject.INSUFFICIENT_FUNDS)

    def _apply_x402_transfer(self, p: dict) -> None:
        if p["amount"] <= 0:
            raise LedgerRejection(Reject.ZERO_AMOUNT)
        self._debit(p["payer"], p["amount"])
        self._credit(p["payee"], p["amount"])

    # -- reporting --------------------------------------------------------------

    def tx_counts(self) -> Dict[str, int]:
        counts: Dict[str, int] = {}
        for tx in self.log:
            counts[tx.kind] = counts.get(tx.kind, 0) + 1
        return counts

    def cost_report(self) -> "CostReport":
        gas = sum(tx.eth_gas for tx in self.log)
        vbytes = sum(tx.btc_vbytes for tx in self.log)
        per_kind = {}
        for tx in self.log:
            g, b = per_kind.get(tx.kind, (0, 0))
            per_kind[tx.kind] = (g + tx.eth_gas, b + tx.btc_vbytes)
        return CostReport(
            eth_gas=gas,
            usd_eth=gas_to_usd(gas),
            btc_vbytes=vbytes,
            usd_btc=vbytes_to_usd(vbytes),
            per_kind=per_kind,
            tx_count=len(self.log),
        )

    def export_log(self) -> str:
        lines = [
            f"{tx.height} {tx.kind} {tx.payload_digest()} {tx.eth_gas} {tx.btc_vbytes}"
            for tx in self.log
        ]
        return "\n".join(lines)

    def serialize_log(self) -> str:
        """Full payload serialization, used by privacy scans and debugging."""
        return "\n".join(
            json.dumps({"height": tx.height, "kind": tx.kind, "payload": tx.payload}, sort_keys=True)
            for tx in self.log
        )


@dataclass(frozen=True)
class CostReport:
    eth_gas: int
    usd_eth: float
    btc_vbytes: int
    usd_btc: float
    per_kind: Dict[str, Tuple[int, int]]
    tx_count: int
