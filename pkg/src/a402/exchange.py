"""The four-phase atomic exchange: lock, execute+commit, authorize, reveal.

Message flow per request: the client's EXEC reaches the vault, which locks
the amount and forwards EXEC to the provider; the provider executes inside
its trusted boundary and replies with an execution-bound commitment
(result hash, statement, pre-signature, encrypted result); the vault verifies
and answers AUTH with a payment signature; the provider reveals the witness
off-chain, falling back to an on-chain adaptor-signature close if the ack
never arrives. Every frame travels sealed under an established channel key.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Tuple

from . import channel as ch
from .crypto import group, schnorr, sealed
from .crypto.hashing import encode_amount, encode_counter, hash_parts, payment_message, tagged_hash
from .errors import (
    AlreadyClosed,
    BadWitnessError,
    ChannelBusy,
    DuplicateChannel,
    InsufficientChannelFunds,
    A402Error,
)
from .ledger import TxKind
from .vault import VaultAccounts


class MsgKind:
    EXEC = "EXEC"
    REPLY = "REPLY"
    AUTH = "AUTH"
    REVEAL = "REVEAL"
    ACK = "ACK"
    STATE_SYNC = "STATE_SYNC"
    RESULT = "RESULT"


_KIND_BYTES = {
    MsgKind.EXEC: 1,
    MsgKind.REPLY: 2,
    MsgKind.AUTH: 3,
    MsgKind.REVEAL: 4,
    MsgKind.ACK: 5,
    MsgKind.STATE_SYNC: 6,
    MsgKind.RESULT: 7,
}
_BYTE_KINDS = {v: k for k, v in _KIND_BYTES.items()}


def encode_frame(kind: str, cid: bytes, rid_k: int, body: bytes) -> bytes:
    """Plaintext frame: 1-byte kind, 16-byte cid, 24-byte rid, 4-byte length, body."""
    if len(cid) != 16:
        raise ValueError("cid must be 16 bytes")
    rid = cid + encode_counter(rid_k)
    return bytes([_KIND_BYTES[kind]]) + cid + rid + len(body).to_bytes(4, "big") + body


def decode_frame(data: bytes) -> Tuple[str, bytes, int, bytes]:
    if len(data) < 1 + 16 + 24 + 4:
        raise ValueError("frame too short")
    kind = _BYTE_KINDS[data[0]]
    cid = data[1:17]
    rid = data[17:41]
    if rid[:16] != cid:
        raise ValueError("rid does not embed cid")
    rid_k = int.from_bytes(rid[16:], "big")
    n = int.from_bytes(data[41:45], "big")
    body = data[45 : 45 + n]
    if len(body) != n:
        raise ValueError("truncated body")
    return kind, cid, rid_k, body


def _pack(parts: List[bytes]) -> bytes:
    out = bytearray()
    for part in parts:
        out += len(part).to_bytes(4, "big")
        out += part
    return bytes(out)


def _unpack(data: bytes, expected: int) -> List[bytes]:
    parts = []
    i = 0
    while i < len(data):
        n = int.from_bytes(data[i : i + 4], "big")
        i += 4
        parts.append(data[i : i + n])
        i += n
    if len(parts) != expected:
        raise ValueError(f"expected {expected} parts, got {len(parts)}")
    return parts


class SecureLink:
    """Seals frames to one peer under an established channel key."""

    def __init__(self, key: bytes, direction: int):
        self.key = key
        self.direction = direction
        self._seq = 0

    def seal(self, kind: str, cid: bytes, rid_k: int, body: bytes) -> bytes:
        blob = sealed.seal(self.key, self._seq, self.direction, encode_frame(kind, cid, rid_k, body))
        self._seq += 1
        return blob

    def open(self, blob: bytes) -> Tuple[str, bytes, int, bytes]:
        return decode_frame(sealed.open_sealed(self.key, blob))


@dataclass
class PendingRequest:
    """In-flight exchange record kept by the vault, keyed by (cid, rid)."""

    cid: bytes
    rid_k: int
    delta: int
    req: bytes
    locked_at: int
    deadline: int
    enc_res: Optional[sealed.Ciphertext] = None
    presig: Optional[schnorr.AdaptorPreSignature] = None
    T: Optional[group.Point] = None
    h: Optional[bytes] = None
    m: Optional[bytes] = None


@dataclass
class ExchangeConfig:
    lock_timeout_ms: int = 2000
    ack_timeout_ms: int = 500
    close_giveup_ms: int = 8000


# ---------------------------------------------------------------------------
# Vault engine
# ---------------------------------------------------------------------------


class VaultEngine:
    """Vault-side protocol logic: channel lifecycle and exchange handling.

    All mutations for one cid run on the single activity that delivers this
    engine's frames and timers, so per-channel state is never shared.
    """

    def __init__(
        self,
        name: str,
        uid: str,
        keypair: schnorr.Keypair,
        runtime,
        ledger,
        config: Optional[ExchangeConfig] = None,
        accounts: Optional[VaultAccounts] = None,
        rng: Optional[random.Random] = None,
    ):
        self.name = name
        self.uid = uid
        self.keypair = keypair
        self.addr = ch.address_of(keypair.pk)
        self.runtime = runtime
        self.ledger = ledger
        self.config = config or ExchangeConfig()
        self.accounts = accounts
        self.rng = rng or random.Random(0)
        self.channels = ch.ChannelTable()
        self.pending: Dict[Tuple[bytes, int], PendingRequest] = {}
        self.results: Dict[Tuple[bytes, int], bytes] = {}
        self.close_intents: Dict[bytes, str] = {}
        self.provider_links: Dict[str, SecureLink] = {}
        self.provider_names: Dict[str, str] = {}
        self.provider_pks: Dict[str, group.Point] = {}
        self.client_links: Dict[str, SecureLink] = {}
        self.client_names: Dict[str, str] = {}
        self.offline = False
        self.censor_inbound: set = set()
        self.censor_outbound: set = set()
        self.disputed: set = set()
        self.events: List[Tuple] = []
        self.escalate_close: Optional[Callable[[bytes, str], None]] = None
        self._lock_timers: Dict[bytes, object] = {}
        self._frames_rejected = 0

    # -- wiring -----------------------------------------------------------

    def attach_provider(self, sid: str, node_name: str, pk: group.Point, key: bytes) -> None:
        self.provider_links[sid] = SecureLink(key, direction=0)
        self.provider_names[sid] = node_name
        self.provider_pks[sid] = pk

    def attach_client(self, client_addr: str, node_name: str, key: bytes) -> None:
        self.client_links[client_addr] = SecureLink(key, direction=0)
        self.client_names[client_addr] = node_name

    def _event(self, *items) -> None:
        self.events.append((self.runtime.now_ms(), *items))

    def _send_provider(self, sid: str, kind: str, cid: bytes, rid_k: int, body: bytes) -> None:
        blob = self.provider_links[sid].seal(kind, cid, rid_k, body)
        if kind in self.censor_outbound:
            self._event("CENSORED_OUTBOUND", kind, cid, rid_k)
            return
        self.runtime.send(self.name, self.provider_names[sid], kind, blob)

    def _send_client(self, client_addr: str, kind: str, cid: bytes, rid_k: int, body: bytes) -> None:
        blob = self.client_links[client_addr].seal(kind, cid, rid_k, body)
        if kind in self.censor_outbound:
            self._event("CENSORED_OUTBOUND", kind, cid, rid_k)
            return
        self.runtime.send(self.name, self.client_names[client_addr], kind, blob)

    def signed_state(self, cid: bytes) -> ch.SignedState:
        return ch.sign_state(self.keypair.sk, self.channels.channels[cid])

    # -- channel lifecycle ---------------------------------------------------

    def open_asc(self, client_addr: str, sid: str, capacity: int, mode: ch.Mode) -> Tuple[bytes, ch.SignedState]:
        if self.channels.find_active(client_addr, sid) is not None:
            raise DuplicateChannel(f"{client_addr}<->{sid}")
        if sid not in self.provider_links:
            raise A402Error(f"no secure channel with {sid}")
        if mode is ch.Mode.VAULT and self.accounts is None:
            raise A402Error("vault mode requires a liquidity vault")
        nonce = self.rng.randbytes(16)
        cid = ch.derive_cid(client_addr, sid, nonce)
        provider_addr = ch.address_of(self.provider_pks[sid])
        state = ch.initial_state(
            cid, client_addr, sid, provider_addr, capacity, mode,
            vault_id=self.accounts.vault_id if mode is ch.Mode.VAULT else "",
        )
        if mode is ch.Mode.STANDARD:
            receipt = self.ledger.submit(
                TxKind.CREATE_ASC,
                {
                    "cid": cid.hex(),
                    "addr_c": client_addr,
                    "addr_s": provider_addr,
                    "addr_u": self.addr,
                    "pk_s": group.point_to_bytes(self.provider_pks[sid]).hex(),
                    "pk_u": group.point_to_bytes(self.keypair.pk).hex(),
                    "v": capacity,
                },
            )
            if not receipt.accepted:
                raise A402Error(f"ledger rejected channel creation: {receipt.code}")
        else:
            self.accounts.reserve(client_addr, capacity)
        self.channels.add(state)
        signed = self.signed_state(cid)
        self._send_provider(sid, MsgKind.STATE_SYNC, cid, state.k, ch.signed_state_to_wire(signed))
        self._event("OPEN", cid, mode.value)
        return cid, signed

    def req_close_asc(self, cid: bytes, requester: str) -> str:
        state = self.channels.get(cid)
        if state is None:
            raise A402Error("unknown channel")
        if state.status is ch.Status.CLOSED:
            raise AlreadyClosed(cid.hex())
        if state.status is ch.Status.OPEN:
            self._do_close(cid)
            return "closed"
        self.close_intents[cid] = requester
        if self.escalate_close is not None:
            def give_up():
                if cid in self.close_intents and self.channels.channels[cid].status is not ch.Status.CLOSED:
                    self.escalate_close(cid, self.close_intents.pop(cid))

            self.runtime.schedule(self.config.close_giveup_ms, give_up)
        return "deferred"

    def _do_close(self, cid: bytes) -> None:
        state = self.channels.channels[cid]
        assert state.balances.b_locked == 0
        if state.mode is ch.Mode.STANDARD:
            digest = ch.coop_close_digest(cid, state.k, state.balances.b_free, state.balances.b_s)
            receipt = self.ledger.submit(
                TxKind.CLOSE_ASC,
                {
                    "cid": cid.hex(),
                    "k": state.k,
                    "b_c": state.balances.b_free,
                    "b_s": state.balances.b_s,
                    "sig": schnorr.sign(self.keypair.sk, digest).to_bytes().hex(),
                },
            )
            if not receipt.accepted:
                raise A402Error(f"ledger rejected cooperative close: {receipt.code}")
        else:
            self.accounts.credit_close(state)
        state.transition(ch.Status.CLOSED)
        self._sync_both(cid)
        self._event("CLOSED", cid, state.mode.value)

    def _sync_both(self, cid: bytes) -> None:
        state = self.channels.channels[cid]
        signed = ch.signed_state_to_wire(self.signed_state(cid))
        self._send_provider(state.provider_sid, MsgKind.STATE_SYNC, cid, state.k, signed)
        self._send_client(state.client_addr, MsgKind.STATE_SYNC, cid, state.k, signed)

    def _maybe_resume_close(self, cid: bytes) -> None:
        if cid in self.close_intents and self.channels.channels[cid].status is ch.Status.OPEN:
            self.close_intents.pop(cid)
            self._do_close(cid)

    # -- frame handling ----------------------------------------------------------

    def handle_frame(self, frame) -> None:
        if self.offline or frame.kind in self.censor_inbound:
            return
        for client_addr, link in self.client_links.items():
            if self.client_names[client_addr] == frame.src:
                try:
                    kind, cid, rid_k, body = link.open(frame.payload)
                    if kind == MsgKind.EXEC:
                        req, delta = self._parse_exec(body)
                        try:
                            self.send_request(cid, req, delta)
                        except (ChannelBusy, InsufficientChannelFunds, A402Error) as exc:
                            self._event("REQUEST_REFUSED", cid, getattr(exc, "code", str(exc)))
                except (BadWitnessError, ValueError, KeyError):
                    self._frames_rejected += 1
                return
        for sid, link in self.provider_links.items():
            if self.provider_names[sid] == frame.src:
                try:
                    kind, cid, rid_k, body = link.open(frame.payload)
                    if kind == MsgKind.REPLY:
                        self._handle_reply(cid, rid_k, body)
                    elif kind == MsgKind.REVEAL:
                        (t_bytes,) = _unpack(body, 1)
                        self.on_secret_reveal(cid, rid_k, group.scalar_from_bytes(t_bytes))
                except (BadWitnessError, ValueError, KeyError):
                    self._frames_rejected += 1
                return
        self._frames_rejected += 1

    # -- phase 1: request submission and asset locking ------------------------

    @staticmethod
    def _parse_exec(body: bytes) -> Tuple[bytes, int]:
        req, delta = _unpack(body, 2)
        return req, int.from_bytes(delta, "big")

    def send_request(self, cid: bytes, req: bytes, delta: int) -> Tuple[bytes, int]:
        state = self.channels.get(cid)
        if state is None:
            raise A402Error("unknown channel")
        if cid in self.disputed:
            raise ChannelBusy("channel is under on-chain dispute")
        if state.status is not ch.Status.OPEN:
            raise ChannelBusy(f"channel is {state.status.value}")
        if state.balances.b_free < delta:
            raise InsufficientChannelFunds(f"{delta} > {state.balances.b_free}")
        rid_k = state.k
        state.balances.lock(delta)
        now = self.runtime.now_ms()
        pend = PendingRequest(
            cid=cid,
            rid_k=rid_k,
            delta=delta,
            req=req,
            locked_at=now,
            deadline=now + self.config.lock_timeout_ms,
        )
        self.pending[(cid, rid_k)] = pend
        state.transition(ch.Status.LOCKED)
        state.k += 1
        body = _pack([req, encode_amount(delta)])
        self._send_provider(state.provider_sid, MsgKind.EXEC, cid, rid_k, body)
        self._lock_timers[cid] = self.runtime.schedule(
            self.config.lock_timeout_ms + 1, lambda: self.lock_timeout(cid, rid_k)
        )
        self._event("LOCKED", cid, rid_k, delta)
        return cid, rid_k

    def lock_timeout(self, cid: bytes, rid_k: int) -> None:
        state = self.channels.get(cid)
        pend = self.pending.get((cid, rid_k))
        if state is None or pend is None or state.status is not ch.Status.LOCKED:
            return
        if self.runtime.now_ms() <= pend.deadline:
            return
        state.balances.unlock(pend.delta)
        del self.pending[(cid, rid_k)]
        state.transition(ch.Status.OPEN)
        self._event("LOCK_REVERT", cid, rid_k)
        self._maybe_resume_close(cid)

    # -- phase 3: execution verification and conditional payment ----------------

    def _handle_reply(self, cid: bytes, rid_k: int, body: bytes) -> None:
        try:
            h, T_b, presig_b, enc_b = _unpack(body, 4)
            T = group.point_from_bytes(T_b)
            presig = schnorr.AdaptorPreSignature.from_bytes(presig_b)
            enc = sealed.Ciphertext.from_bytes(enc_b)
        except (ValueError, KeyError):
            self._frames_rejected += 1
            return
        self.on_exec_reply(cid, rid_k, h, T, presig, enc)

    def on_exec_reply(
        self,
        cid: bytes,
        rid_k: int,
        h: bytes,
        T: group.Point,
        presig: schnorr.AdaptorPreSignature,
        enc: sealed.Ciphertext,
    ) -> None:
        state = self.channels.get(cid)
        pend = self.pending.get((cid, rid_k))
        if state is None or pend is None or state.status is not ch.Status.LOCKED:
            self._event("REPLY_DISCARDED", cid, rid_k, "no matching in-flight request")
            return
        if self.runtime.now_ms() > pend.deadline:
            self._event("REPLY_DISCARDED", cid, rid_k, "deadline passed")
            return
        m = payment_message(cid, rid_k, pend.delta, h)
        sid = state.provider_sid
        if not schnorr.pre_verify(self.provider_pks[sid], m, T, presig):
            self._event("PRE_VERIFY_FAILED", cid, rid_k)
            return
        pend.enc_res = enc
        pend.presig = presig
        pend.T = T
        pend.h = h
        pend.m = m
        state.transition(ch.Status.PENDING)
        timer = self._lock_timers.pop(cid, None)
        if timer is not None:
            timer.cancel()
        sigma_u = schnorr.sign(self.keypair.sk, m)
        body = _pack([sigma_u.to_bytes(), ch.signed_state_to_wire(self.signed_state(cid))])
        self._send_provider(sid, MsgKind.AUTH, cid, rid_k, body)
        self._event("PENDING", cid, rid_k)

    # -- phase 4: reveal handling and result delivery ---------------------------

    def on_secret_reveal(self, cid: bytes, rid_k: int, t: int) -> None:
        state = self.channels.get(cid)
        if state is None:
            return
        if (cid, rid_k) in self.results:
            # duplicate reveal after completion: idempotent ack re-send
            self._send_ack(cid, rid_k)
            return
        pend = self.pending.get((cid, rid_k))
        if pend is None or state.status is not ch.Status.PENDING:
            self._event("REVEAL_DISCARDED", cid, rid_k)
            return
        if group.mul_g(t) != pend.T:
            self._event("BAD_WITNESS", cid, rid_k)
            return
        try:
            res = sealed.decrypt_with_witness(t, pend.enc_res)
        except BadWitnessError:
            self._event("BAD_WITNESS", cid, rid_k)
            return
        if tagged_hash("a402/result", res) != pend.h:
            self._event("RESULT_HASH_MISMATCH", cid, rid_k)
            return
        self._complete(cid, rid_k, res, "OFFCHAIN_REVEAL")
        self._send_ack(cid, rid_k)

    def _complete(self, cid: bytes, rid_k: int, res: bytes, outcome: str) -> None:
        state = self.channels.channels[cid]
        pend = self.pending.pop((cid, rid_k))
        state.balances.settle_to_provider(pend.delta)
        state.transition(ch.Status.OPEN)
        self.results[(cid, rid_k)] = res
        self._event(outcome, cid, rid_k)
        body = _pack([res, ch.signed_state_to_wire(self.signed_state(cid))])
        self._send_client(state.client_addr, MsgKind.RESULT, cid, rid_k, body)
        self._event("RESULT_DELIVERED", cid, rid_k)
        self._maybe_resume_close(cid)

    def _send_ack(self, cid: bytes, rid_k: int) -> None:
        state = self.channels.channels[cid]
        receipt = schnorr.sign(self.keypair.sk, ch.ack_receipt_digest(cid, rid_k))
        body = _pack([receipt.to_bytes(), ch.signed_state_to_wire(self.signed_state(cid))])
        self._send_provider(state.provider_sid, MsgKind.ACK, cid, rid_k, body)

    # -- ledger observation --------------------------------------------------------

    def on_ledger_tx(self, tx) -> None:
        """Reconcile channel state to authoritative on-chain outcomes."""
        if self.offline:
            return
        if tx.kind == TxKind.INIT_FORCE_CLOSE:
            state_w = ch.signed_state_from_wire(bytes.fromhex(tx.payload["state"]))
            if self.channels.get(state_w.cid) is not None:
                self.disputed.add(state_w.cid)
            return
        if tx.kind == TxKind.FINAL_FORCE_SETTLE:
            if self.accounts is not None and tx.payload.get("vault_id") == self.accounts.vault_id:
                self.accounts.rebase_force_settle(tx.payload["owner"], tx.payload.get("paid", 0))
            return
        if tx.kind == TxKind.FORCE_CLOSE_ASIG:
            state_w = ch.signed_state_from_wire(bytes.fromhex(tx.payload["state"]))
            cid = state_w.cid
            state = self.channels.get(cid)
            if state is None or state.status is ch.Status.CLOSED:
                return
            if "sigma_s" in tx.payload:
                rid_k = tx.payload["rid_k"]
                pend = self.pending.get((cid, rid_k))
                if pend is not None and pend.presig is not None:
                    sigma = schnorr.Signature.from_bytes(bytes.fromhex(tx.payload["sigma_s"]))
                    try:
                        t = schnorr.extract(sigma, pend.presig, pend.T)
                    except Exception:
                        t = None
                    if t is not None:
                        try:
                            res = sealed.decrypt_with_witness(t, pend.enc_res)
                        except BadWitnessError:
                            res = None
                        if res is not None:
                            self._finish_onchain(cid, rid_k, res, state_w)
                            return
            self._close_from_chain(cid, state_w.total)
        elif tx.kind == TxKind.FINAL_FORCE_CLOSE:
            cid = bytes.fromhex(tx.payload["cid"])
            state = self.channels.get(cid)
            if state is None or state.status is ch.Status.CLOSED:
                return
            paid = tx.payload.get("paid_c", 0) + tx.payload.get("paid_s", 0)
            self._close_from_chain(cid, paid)

    def _finish_onchain(self, cid: bytes, rid_k: int, res: bytes, state_w: ch.SignedState) -> None:
        """Provider settled the pending request on-chain; witness extracted."""
        state = self.channels.channels[cid]
        pend = self.pending.pop((cid, rid_k))
        self.results[(cid, rid_k)] = res
        self._event("ONCHAIN_REVEAL", cid, rid_k)
        if state.mode is ch.Mode.VAULT and self.accounts is not None:
            self.accounts.reconcile_onchain_close(state, state_w.total)
        state.balances.settle_to_provider(pend.delta)
        state.transition(ch.Status.CLOSED)
        self.close_intents.pop(cid, None)
        body = _pack([res, ch.signed_state_to_wire(self.signed_state(cid))])
        self._send_client(state.client_addr, MsgKind.RESULT, cid, rid_k, body)
        self._event("RESULT_DELIVERED", cid, rid_k)

    def _close_from_chain(self, cid: bytes, paid_total: int) -> None:
        state = self.channels.channels[cid]
        for key in [k for k in self.pending if k[0] == cid]:
            self.pending.pop(key)
        if state.mode is ch.Mode.VAULT and self.accounts is not None:
            self.accounts.reconcile_onchain_close(state, paid_total)
        timer = self._lock_timers.pop(cid, None)
        if timer is not None:
            timer.cancel()
        state.transition(ch.Status.CLOSED)
        self.close_intents.pop(cid, None)
        self._event("CLOSED_ONCHAIN", cid)

    # -- liquidity vault operations -------------------------------------------------

    def init_vault_deposit(self, depositor: str, amount: int) -> None:
        receipt = self.ledger.submit(
            TxKind.INIT_VAULT,
            {
                "vault_id": self.accounts.vault_id,
                "vault_pk": group.point_to_bytes(self.keypair.pk).hex(),
                "depositor": depositor,
                "amount": amount,
            },
        )
        if not receipt.accepted:
            raise A402Error(f"deposit rejected: {receipt.code}")
        self.accounts.credit_deposit(depositor, amount)

    def req_settle_vault(self, owner: str) -> None:
        amount = self.accounts.settle_amount(owner)
        snap = self.accounts.snapshot(owner)
        epoch = snap.epoch + 1
        receipt = self.ledger.submit(
            TxKind.SETTLE_VAULT,
            {
                "vault_id": self.accounts.vault_id,
                "payee": owner,
                "amount": amount,
                "epoch": epoch,
                "sig": self.accounts.sign_settle(owner, amount, epoch).to_bytes().hex(),
            },
        )
        if not receipt.accepted:
            raise A402Error(f"settle rejected: {receipt.code}")
        self.accounts.mark_settled(owner)


# ---------------------------------------------------------------------------
# Provider engine
# ---------------------------------------------------------------------------


@dataclass
class RevealRecord:
    rid_k: int
    delta: int
    witness: schnorr.Witness
    h: bytes
    m: bytes
    presig: schnorr.AdaptorPreSignature
    sigma_u: Optional[schnorr.Signature] = None
    acked: bool = False
    fallback_timer: object = None
    outcome: Optional[str] = None


@dataclass
class ProviderFlags:
    """Scripted host-level misbehavior; TEE-protected steps stay exempt."""

    abort_exec: bool = False
    abort_after_auth: bool = False
    claim_without_exec: bool = False


class ProviderEngine:
    """Provider-side logic: trusted execute-and-commit, reveal, fallback."""

    def __init__(
        self,
        name: str,
        sid: str,
        keypair: schnorr.Keypair,
        runtime,
        ledger,
        vault_pk: group.Point,
        link_key: bytes,
        vault_name: str,
        execute: Optional[Callable[[bytes], bytes]] = None,
        exec_delay_ms: int = 200,
        config: Optional[ExchangeConfig] = None,
        rng: Optional[random.Random] = None,
        flags: Optional[ProviderFlags] = None,
    ):
        self.name = name
        self.sid = sid
        self.keypair = keypair
        self.addr = ch.address_of(keypair.pk)
        self.runtime = runtime
        self.ledger = ledger
        self.vault_pk = vault_pk
        self.link = SecureLink(link_key, direction=1)
        self.vault_name = vault_name
        self.execute = execute or (lambda req: req)
        self.exec_delay_ms = exec_delay_ms
        self.config = config or ExchangeConfig()
        self.rng = rng or random.Random(1)
        self.flags = flags or ProviderFlags()
        self.mirrors: Dict[bytes, ch.SignedState] = {}
        self.reveals: Dict[Tuple[bytes, int], RevealRecord] = {}
        self.served: set = set()
        self.events: List[Tuple] = []
        self.revenue_offchain: Dict[bytes, int] = {}
        self._frames_rejected = 0

    def _event(self, *items) -> None:
        self.events.append((self.runtime.now_ms(), *items))

    def _send(self, kind: str, cid: bytes, rid_k: int, body: bytes) -> None:
        self.runtime.send(self.name, self.vault_name, kind, self.link.seal(kind, cid, rid_k, body))

    def handle_frame(self, frame) -> None:
        try:
            kind, cid, rid_k, body = self.link.open(frame.payload)
            if kind == MsgKind.EXEC:
                req, delta_b = _unpack(body, 2)
                self.exec_request(cid, rid_k, req, int.from_bytes(delta_b, "big"))
            elif kind == MsgKind.AUTH:
                sigma_b, state_b = _unpack(body, 2)
                self.on_auth(cid, rid_k, schnorr.Signature.from_bytes(sigma_b), ch.signed_state_from_wire(state_b))
            elif kind == MsgKind.ACK:
                receipt_b, state_b = _unpack(body, 2)
                self.on_ack(cid, rid_k, schnorr.Signature.from_bytes(receipt_b), ch.signed_state_from_wire(state_b))
            elif kind == MsgKind.STATE_SYNC:
                self._store_state(ch.signed_state_from_wire(body))
        except (BadWitnessError, ValueError, KeyError):
            self._frames_rejected += 1

    def _store_state(self, state: ch.SignedState) -> None:
        if not ch.verify_state(self.vault_pk, state):
            self._frames_rejected += 1
            return
        held = self.mirrors.get(state.cid)
        if held is None or state.k >= held.k:
            self.mirrors[state.cid] = state

    # -- phase 2: trusted execution and payment commitment ---------------------

    def exec_request(self, cid: bytes, rid_k: int, req: bytes, delta: int) -> None:
        if (cid, rid_k) in self.served:
            self._event("REPLAYED_RID_IGNORED", cid, rid_k)
            return
        self.served.add((cid, rid_k))
        if self.flags.claim_without_exec:
            # host tries to fabricate a commitment without running the TEE
            # step; it cannot seal a valid frame, so the vault discards this
            self.runtime.send(self.name, self.vault_name, MsgKind.REPLY, b"forged-claim" + cid)
            self._event("CLAIM_WITHOUT_EXEC_ATTEMPTED", cid, rid_k)
            return
        if self.flags.abort_exec:
            self._event("EXEC_ABORTED", cid, rid_k)
            return

        def trusted_execute_and_commit():
            # Single uninterruptible trusted step: a commitment exists only
            # if the execution ran. Faults may drop the REPLY frame but can
            # never produce one without this body having run.
            res = self.execute(req)
            wit = schnorr.witness_from_scalar(self.rng.randrange(1, group.N))
            h = tagged_hash("a402/result", res)
            m = payment_message(cid, rid_k, delta, h)
            presig = schnorr.pre_sign(self.keypair.sk, m, wit.T)
            enc = sealed.encrypt_with_witness(wit.t, res)
            self.reveals[(cid, rid_k)] = RevealRecord(
                rid_k=rid_k, delta=delta, witness=wit, h=h, m=m, presig=presig
            )
            body = _pack(
                [h, group.point_to_bytes(wit.T), presig.to_bytes(), enc.to_bytes()]
            )
            self._send(MsgKind.REPLY, cid, rid_k, body)
            self._event("EXECUTED", cid, rid_k)

        self.runtime.schedule(self.exec_delay_ms, trusted_execute_and_commit)

    # -- phase 4: reveal or fall back on-chain -----------------------------------

    def on_auth(self, cid: bytes, rid_k: int, sigma_u: schnorr.Signature, state: ch.SignedState) -> None:
        rec = self.reveals.get((cid, rid_k))
        if rec is None:
            return
        if not schnorr.verify(self.vault_pk, rec.m, sigma_u):
            self._event("BAD_AUTH", cid, rid_k)
            return
        rec.sigma_u = sigma_u
        self._store_state(state)
        if self.flags.abort_after_auth:
            self._event("REVEAL_WITHHELD", cid, rid_k)
            return
        self.reveal_secret(cid, rid_k)

    def reveal_secret(self, cid: bytes, rid_k: int) -> None:
        rec = self.reveals[(cid, rid_k)]
        self._send(MsgKind.REVEAL, cid, rid_k, _pack([group.scalar_to_bytes(rec.witness.t)]))
        rec.fallback_timer = self.runtime.schedule(
            self.config.ack_timeout_ms, lambda: self._ack_timeout(cid, rid_k)
        )
        self._event("REVEALED", cid, rid_k)

    def on_ack(self, cid: bytes, rid_k: int, receipt: schnorr.Signature, state: ch.SignedState) -> None:
        rec = self.reveals.get((cid, rid_k))
        if rec is None or rec.acked:
            return
        if not schnorr.verify(self.vault_pk, ch.ack_receipt_digest(cid, rid_k), receipt):
            self._event("BAD_ACK", cid, rid_k)
            return
        rec.acked = True
        rec.outcome = "OFFCHAIN_REVEAL"
        if rec.fallback_timer is not None:
            rec.fallback_timer.cancel()
        self._store_state(state)
        self.revenue_offchain[cid] = self.revenue_offchain.get(cid, 0) + rec.delta
        self._event("OFFCHAIN_REVEAL", cid, rid_k)

    def _ack_timeout(self, cid: bytes, rid_k: int) -> None:
        rec = self.reveals.get((cid, rid_k))
        if rec is None or rec.acked or rec.outcome is not None:
            return
        self._event("ACK_TIMEOUT", cid, rid_k)
        self.force_close(cid, rid_k)

    # -- unilateral closure -------------------------------------------------------

    def force_close(self, cid: bytes, rid_k: Optional[int] = None) -> None:
        state = self.mirrors.get(cid)
        if state is None:
            self._event("FORCE_CLOSE_NO_STATE", cid)
            return
        payload = {"state": ch.signed_state_to_wire(state).hex()}
        rec = self.reveals.get((cid, rid_k)) if rid_k is not None else None
        if rec is not None and rec.sigma_u is not None and state.b_locked == rec.delta:
            sigma_s = schnorr.adapt(rec.presig, rec.witness.t)
            payload.update(
                {
                    "rid_k": rid_k,
                    "delta": rec.delta,
                    "h": rec.h.hex(),
                    "sigma_s": sigma_s.to_bytes().hex(),
                    "pk_s": group.point_to_bytes(self.keypair.pk).hex(),
                }
            )
        receipt = self.ledger.submit(TxKind.FORCE_CLOSE_ASIG, payload)
        if receipt.accepted and rec is not None and "sigma_s" in payload:
            rec.outcome = "ONCHAIN_REVEAL"
            self._event("ONCHAIN_REVEAL", cid, rid_k)
        else:
            self._event("FORCE_CLOSE", cid, receipt.code if not receipt.accepted else "ok")
