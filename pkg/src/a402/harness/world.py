"""World assembly: parties, links, ledger, watchtowers, invariant hooks.

A world is one fully wired deployment: a vault, one or more providers, a set
of clients, the mock ledger, and the simulated network. The same seed and
scenario always assemble bit-identical worlds.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

from .. import attestation as att
from .. import channel as ch
from ..crypto import group, schnorr, sealed
from ..crypto.hashing import tagged_hash
from ..errors import A402Error, InvariantViolation
from ..exchange import (
    ExchangeConfig,
    MsgKind,
    ProviderEngine,
    ProviderFlags,
    SecureLink,
    VaultEngine,
    _pack,
    _unpack,
)
from ..ledger import Ledger, TxKind
from ..net import SimClock, SimNetwork, SimRuntime
from ..vault import CommitteePolicy, VaultAccounts
from .scenario import MODE_VAULT, AdversaryFlags, Scenario
from .watchtower import ProviderWatchtower, VaultWatchtower

MEASUREMENT = tagged_hash("a402/measurement", b"attested-build-v1")


def _seed(base: int, label: str) -> bytes:
    return tagged_hash("a402/seed", base.to_bytes(8, "big"), label.encode())


class ClientNode:
    """Untrusted client: delegates to the vault, recovers on-chain alone."""

    def __init__(
        self,
        name: str,
        keypair: schnorr.Keypair,
        runtime,
        ledger: Ledger,
        vault_name: str,
        link_key: bytes,
        scenario: Scenario,
    ):
        self.name = name
        self.keypair = keypair
        self.addr = ch.address_of(keypair.pk)
        self.runtime = runtime
        self.ledger = ledger
        self.vault_name = vault_name
        self.link = SecureLink(link_key, direction=1)
        self.scenario = scenario
        self.cid: Optional[bytes] = None
        self.states: List[ch.SignedState] = []
        self.results: Dict[int, bytes] = {}
        self.latencies: List[float] = []
        self.issued = 0
        self.completed = 0
        self.gave_up = 0
        self._awaiting: Optional[Tuple[int, float]] = None  # (attempt counter, sent at)
        self._retries_left = 0
        self._timeout_handle = None
        self._force_closed = False
        self.events: List[Tuple] = []

    # -- state custody ------------------------------------------------------

    def hold_state(self, state: ch.SignedState) -> None:
        if not self.states or state.k >= self.states[-1].k:
            self.states.append(state)

    def latest_state(self) -> ch.SignedState:
        return self.states[-1]

    # -- request loop ----------------------------------------------------------

    def start(self) -> None:
        if self.scenario.requests > 0:
            self.runtime.schedule(0, self._issue_next)

    def _issue_next(self) -> None:
        if self.issued >= self.scenario.requests or self.cid is None or self._force_closed:
            return
        req = f"ping:{self.name}:{self.issued}".encode()
        self.issued += 1
        self._retries_left = self.scenario.retries
        self._send_request(req)

    def _send_request(self, req: bytes) -> None:
        body = _pack([req, self.scenario.delta.to_bytes(16, "big")])
        blob = self.link.seal(MsgKind.EXEC, self.cid, 0, body)
        self._awaiting = (self.issued, self.runtime.now_ms())
        self.runtime.send(self.name, self.vault_name, MsgKind.EXEC, blob)
        timeout = self.scenario.derived_response_timeout()
        self._timeout_handle = self.runtime.schedule(timeout, lambda: self._on_timeout(req))

    def _on_timeout(self, req: bytes) -> None:
        if self._awaiting is None:
            return
        if self._retries_left > 0:
            self._retries_left -= 1
            self.events.append((self.runtime.now_ms(), "RETRY", self.issued))
            self._send_request(req)
            return
        self._awaiting = None
        self.gave_up += 1
        self.events.append((self.runtime.now_ms(), "GAVE_UP", self.issued))
        if self.scenario.client_force_close_on_timeout and not self._force_closed:
            self.force_close()
            return
        self._issue_next()

    def handle_frame(self, frame) -> None:
        try:
            kind, cid, rid_k, body = self.link.open(frame.payload)
        except (A402Error, ValueError, KeyError):
            return
        if kind == MsgKind.RESULT:
            try:
                res, state_b = _unpack(body, 2)
                self.hold_state(ch.signed_state_from_wire(state_b))
            except ValueError:
                return
            if rid_k in self.results:
                return
            self.results[rid_k] = res
            self.completed += 1
            if self._awaiting is not None:
                self.latencies.append(self.runtime.now_ms() - self._awaiting[1])
                self._awaiting = None
            if self._timeout_handle is not None:
                self._timeout_handle.cancel()
            self._issue_next()
        elif kind == MsgKind.STATE_SYNC:
            try:
                self.hold_state(ch.signed_state_from_wire(body))
            except ValueError:
                return

    # -- on-chain escape hatch ----------------------------------------------------

    def force_close(self, stale: bool = False) -> None:
        if self._force_closed or not self.states:
            return
        self._force_closed = True
        state = self.states[0] if stale else self.states[-1]
        receipt = self.ledger.submit(
            TxKind.INIT_FORCE_CLOSE, {"state": ch.signed_state_to_wire(state).hex()}
        )
        self.events.append((self.runtime.now_ms(), "FORCE_CLOSE_INIT", receipt.code or "ok"))
        if receipt.accepted:
            self.ledger.block_observers.append(self._try_finalize)

    def _try_finalize(self, height: int) -> None:
        if self.cid is None:
            return
        dispute = self.ledger.pending_disputes.get(self.cid.hex())
        if dispute is None or not dispute.expired(height):
            return
        receipt = self.ledger.submit(TxKind.FINAL_FORCE_CLOSE, {"cid": self.cid.hex()})
        self.events.append((self.runtime.now_ms(), "FORCE_CLOSE_FINAL", receipt.code or "ok"))


@dataclass
class World:
    scenario: Scenario
    clock: SimClock
    net: SimNetwork
    runtime: SimRuntime
    ledger: Ledger
    authority: att.MockAuthority
    registry: att.Registry
    vault: VaultEngine
    providers: Dict[str, ProviderEngine]
    clients: List[ClientNode]
    provider_watchtowers: List[ProviderWatchtower] = field(default_factory=list)
    vault_watchtower: Optional[VaultWatchtower] = None
    channel_transcripts: List[att.ChannelTranscript] = field(default_factory=list)
    violations: List[str] = field(default_factory=list)

    # -- invariants -------------------------------------------------------------

    def check_invariants(self) -> None:
        if self.ledger.total_supply() != self.ledger.minted:
            raise InvariantViolation(
                "ledger-conservation",
                f"supply {self.ledger.total_supply()} != minted {self.ledger.minted}",
            )
        for cid, state in self.vault.channels.channels.items():
            if state.status is ch.Status.CLOSED:
                continue
            b = state.balances
            if b.b_free < 0 or b.b_locked < 0 or b.b_s < 0:
                raise InvariantViolation("channel-balances-nonnegative", state.cid.hex())
            if cid in self.vault.disputed:
                continue
            expected = self.scenario.channel_capacity()
            if b.capacity != expected:
                raise InvariantViolation(
                    "channel-conservation", f"{cid.hex()} sum {b.capacity} != {expected}"
                )
        if self.vault.accounts is not None:
            vault_escrow = self.ledger.vaults.get(self.vault.accounts.vault_id)
            onchain = vault_escrow.amount if vault_escrow else 0
            if self.vault.accounts.total_liabilities() != onchain:
                raise InvariantViolation(
                    "vault-solvency",
                    f"liabilities {self.vault.accounts.total_liabilities()} != escrow {onchain}",
                )

    def _invariant_hook(self) -> None:
        try:
            self.check_invariants()
        except InvariantViolation as exc:
            self.violations.append(str(exc))
            raise

    # -- lifecycle ------------------------------------------------------------------

    def open_all(self) -> None:
        scenario = self.scenario
        capacity = scenario.channel_capacity()
        mode = ch.Mode.VAULT if scenario.mode == MODE_VAULT else ch.Mode.STANDARD
        for i, client in enumerate(self.clients):
            sid = f"sid-{(i % scenario.providers) + 1}"
            if mode is ch.Mode.VAULT:
                self.ledger.mint(client.addr, capacity)
                self.vault.init_vault_deposit(client.addr, capacity)
            else:
                self.ledger.mint(client.addr, capacity)
            cid, signed = self.vault.open_asc(client.addr, sid, capacity, mode)
            client.cid = cid
            client.hold_state(signed)
        if scenario.adversary.client_double_spend and self.clients:
            # the same funds cannot back a second channel
            client = self.clients[0]
            try:
                self.vault.open_asc(client.addr, f"sid-{scenario.providers}", capacity, mode)
                self.violations.append("double-spend-accepted")
            except A402Error as exc:
                client.events.append((self.runtime.now_ms(), "DOUBLE_SPEND_REFUSED", exc.code))

    def run_requests(self, max_sim_time: int = 10_000_000) -> None:
        for client in self.clients:
            client.start()
        self.settle_quiescent(max_sim_time)

    def settle_quiescent(self, max_sim_time: int = 10_000_000, max_blocks: int = 200) -> None:
        """Alternate event processing and block production until nothing is
        pending: disputes expire, watchtowers react, finalizations land."""
        self.clock.run_until_quiescent(max_sim_time)
        blocks = 0
        while self.ledger.pending_disputes and blocks < max_blocks:
            self.ledger.advance_blocks(1)
            blocks += 1
            self.clock.run_until_quiescent(max_sim_time)

    def close_all(self) -> None:
        if self.scenario.adversary.client_stale_force_close and self.clients:
            self.clients[0].force_close(stale=True)
            self.settle_quiescent()
        for client in self.clients:
            if client.cid is None:
                continue
            state = self.vault.channels.get(client.cid)
            if state is None or state.status is ch.Status.CLOSED:
                continue
            if self.vault.offline:
                client.force_close()
                continue
            try:
                self.vault.req_close_asc(client.cid, requester=client.addr)
            except A402Error:
                pass
        self.settle_quiescent()
        if self.scenario.mode == MODE_VAULT and not self.vault.offline:
            for owner in sorted(self.vault.accounts.accounts):
                acct = self.vault.accounts.accounts[owner]
                if acct.v_free > 0:
                    self.vault.req_settle_vault(owner)
        self.settle_quiescent()

    def outcome_digest(self) -> str:
        from ..crypto.hashing import hash_parts

        balance_lines = [f"{addr}={amt}" for addr, amt in sorted(self.ledger.balances.items())]
        parts = [
            self.net.transcript_digest().encode(),
            self.ledger.export_log().encode(),
            ";".join(balance_lines).encode(),
        ]
        return hash_parts(parts).hex()


def build_world(scenario: Scenario, check_every_event: bool = False) -> World:
    rng = random.Random(scenario.seed)
    clock = SimClock()
    faults = scenario.fault_script()
    net = SimNetwork(clock, base_delay_ms=scenario.net_delay_ms, faults=faults)
    runtime = SimRuntime(clock, net)
    ledger = Ledger(dispute_window=scenario.dispute_window, settle_window=scenario.settle_window)
    authority = att.MockAuthority(_seed(scenario.seed, "authority"))
    registry = att.Registry(authority_pk=authority.keypair.pk, approved={MEASUREMENT})

    config = ExchangeConfig(
        lock_timeout_ms=scenario.lock_timeout_ms,
        ack_timeout_ms=scenario.ack_timeout_ms,
        close_giveup_ms=scenario.close_giveup_ms,
    )

    vault_kp = schnorr.keygen(_seed(scenario.seed, "vault"))
    uid = registry.register("vault", vault_kp.pk, MEASUREMENT, authority.attest(vault_kp.pk, MEASUREMENT))
    accounts = VaultAccounts("vault-1", vault_kp, CommitteePolicy(1, 1, (uid,)))
    vault = VaultEngine(
        name="U",
        uid=uid,
        keypair=vault_kp,
        runtime=runtime,
        ledger=ledger,
        config=config,
        accounts=accounts,
        rng=random.Random(rng.getrandbits(64)),
    )
    if scenario.adversary.vault_censor_reveal:
        vault.censor_inbound.add(MsgKind.REVEAL)
    if scenario.adversary.vault_censor_ack:
        vault.censor_outbound.add(MsgKind.ACK)
    net.register("U", vault.handle_frame)

    providers: Dict[str, ProviderEngine] = {}
    transcripts: List[att.ChannelTranscript] = []
    flags = ProviderFlags(
        abort_exec=scenario.adversary.provider_abort_exec,
        abort_after_auth=scenario.adversary.provider_abort_after_auth,
        claim_without_exec=scenario.adversary.provider_claim_without_exec,
    )
    for i in range(1, scenario.providers + 1):
        name = f"S{i}"
        kp = schnorr.keygen(_seed(scenario.seed, f"provider-{i}"))
        sid = registry.register("provider", kp.pk, MEASUREMENT, authority.attest(kp.pk, MEASUREMENT))
        key, wire = att.establish_secure_channel(
            registry, uid, sid, vault_kp, kp, _seed(scenario.seed, f"eph-{i}")
        )
        transcripts.append(wire)
        engine = ProviderEngine(
            name=name,
            sid=sid,
            keypair=kp,
            runtime=runtime,
            ledger=ledger,
            vault_pk=vault_kp.pk,
            link_key=key.key,
            vault_name="U",
            execute=lambda req: req,
            exec_delay_ms=scenario.exec_delay_ms,
            config=config,
            rng=random.Random(rng.getrandbits(64)),
            flags=flags,
        )
        providers[sid] = engine
        vault.attach_provider(sid, name, kp.pk, key.key)
        net.register(name, engine.handle_frame)

    clients: List[ClientNode] = []
    for i in range(1, scenario.channels + 1):
        name = f"C{i}"
        kp = schnorr.keygen(_seed(scenario.seed, f"client-{i}"))
        session_key = tagged_hash("a402/client-session", _seed(scenario.seed, f"session-{i}"))
        client = ClientNode(
            name=name,
            keypair=kp,
            runtime=runtime,
            ledger=ledger,
            vault_name="U",
            link_key=session_key,
            scenario=scenario,
        )
        vault.attach_client(client.addr, name, session_key)
        net.register(name, client.handle_frame)
        clients.append(client)

    world = World(
        scenario=scenario,
        clock=clock,
        net=net,
        runtime=runtime,
        ledger=ledger,
        authority=authority,
        registry=registry,
        vault=vault,
        providers=providers,
        clients=clients,
        channel_transcripts=transcripts,
    )

    ledger.tx_observers.append(vault.on_ledger_tx)
    if scenario.adversary.watchtower_provider:
        for engine in providers.values():
            tower = ProviderWatchtower(ledger, engine)
            ledger.tx_observers.append(tower.on_tx)
            ledger.block_observers.append(tower.on_block)
            world.provider_watchtowers.append(tower)
    if scenario.adversary.watchtower_vault:
        tower = VaultWatchtower(ledger, vault)
        ledger.tx_observers.append(tower.on_tx)
        ledger.block_observers.append(tower.on_block)
        world.vault_watchtower = tower

    if check_every_event:
        # after each simulator event; ledger submissions happen inside event
        # handlers, so every check sees a consistent post-step state
        clock.after_event_hooks.append(world._invariant_hook)
    return world
