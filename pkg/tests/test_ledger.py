"""Mock ledger: escrows, disputes, vault settlement, cost metering."""

import random

import pytest

from a402 import channel as ch
from a402.crypto import (
    adapt,
    extract,
    keygen,
    payment_message,
    point_to_bytes,
    pre_sign,
    sign,
    tagged_hash,
    witness_from_scalar,
)
from a402.errors import Reject
from a402.ledger import (
    CostTable,
    Ledger,
    TxKind,
    gas_to_usd,
    vbytes_to_usd,
)
from a402.vault import VaultAccounts, VaultSnapshot, snapshot_digest
from tests.conftest import ChannelFixture


def test_create_asc_escrows_funds(channel_fixture):
    led = channel_fixture.ledger
    assert led.balance(channel_fixture.client_addr) == 0
    rec = led.escrows[channel_fixture.cid.hex()]
    assert rec.amount == 100
    assert rec.status.value == "ACTIVE"


def test_create_asc_rejections(ledger, vault_kp, provider_kp, client_kp):
    fx = ChannelFixture(ledger, vault_kp, provider_kp, client_kp)
    dup = ledger.submit(
        TxKind.CREATE_ASC,
        {
            "cid": fx.cid.hex(),
            "addr_c": fx.client_addr,
            "addr_s": fx.provider_addr,
            "addr_u": fx.vault_addr,
            "pk_s": point_to_bytes(provider_kp.pk).hex(),
            "pk_u": point_to_bytes(vault_kp.pk).hex(),
            "v": 10,
        },
    )
    assert not dup.accepted and dup.code == Reject.DUPLICATE_CID

    broke = ledger.submit(
        TxKind.CREATE_ASC,
        {
            "cid": "aa" * 16,
            "addr_c": "nobody",
            "addr_s": fx.provider_addr,
            "addr_u": fx.vault_addr,
            "pk_s": point_to_bytes(provider_kp.pk).hex(),
            "pk_u": point_to_bytes(vault_kp.pk).hex(),
            "v": 10,
        },
    )
    assert broke.code == Reject.INSUFFICIENT_FUNDS

    zero = ledger.submit(
        TxKind.CREATE_ASC,
        {
            "cid": "bb" * 16,
            "addr_c": fx.client_addr,
            "addr_s": fx.provider_addr,
            "addr_u": fx.vault_addr,
            "pk_s": point_to_bytes(provider_kp.pk).hex(),
            "pk_u": point_to_bytes(vault_kp.pk).hex(),
            "v": 0,
        },
    )
    assert zero.code == Reject.ZERO_AMOUNT


def test_close_unknown_channel(ledger):
    receipt = ledger.submit(TxKind.CLOSE_ASC, {"cid": "00" * 16, "k": 0, "b_c": 1, "b_s": 0, "sig": "00"})
    assert not receipt.accepted and receipt.code == Reject.UNKNOWN_CHANNEL
    assert not ledger.log


def test_cooperative_close_pays_fig2_split(channel_fixture):
    led = channel_fixture.ledger
    receipt = led.submit(TxKind.CLOSE_ASC, channel_fixture.coop_close_payload(1, 90, 10))
    assert receipt.accepted
    assert led.balance(channel_fixture.client_addr) == 90
    assert led.balance(channel_fixture.provider_addr) == 10
    assert led.escrows[channel_fixture.cid.hex()].status.value == "SETTLED"


def test_cooperative_close_full_refund_at_b0(channel_fixture):
    led = channel_fixture.ledger
    assert led.submit(TxKind.CLOSE_ASC, channel_fixture.coop_close_payload(0, 100, 0)).accepted
    assert led.balance(channel_fixture.client_addr) == 100


def test_cooperative_close_sum_mismatch(channel_fixture):
    receipt = channel_fixture.ledger.submit(TxKind.CLOSE_ASC, channel_fixture.coop_close_payload(1, 91, 10))
    assert receipt.code == Reject.SUM_MISMATCH


def test_cooperative_close_bad_signature(channel_fixture):
    payload = channel_fixture.coop_close_payload(1, 90, 10)
    payload["sig"] = sign(keygen(b"rogue").sk, b"junk").to_bytes().hex()
    assert channel_fixture.ledger.submit(TxKind.CLOSE_ASC, payload).code == Reject.BAD_SIGNATURE


def test_settled_escrow_is_terminal(channel_fixture):
    led = channel_fixture.ledger
    assert led.submit(TxKind.CLOSE_ASC, channel_fixture.coop_close_payload(1, 90, 10)).accepted
    again = led.submit(TxKind.CLOSE_ASC, channel_fixture.coop_close_payload(2, 80, 20))
    assert again.code == Reject.ALREADY_SETTLED
    forced = led.submit(TxKind.INIT_FORCE_CLOSE, {"state": channel_fixture.state_hex(3, 70, 0, 30)})
    assert forced.code == Reject.ALREADY_SETTLED


def test_dispute_window_boundaries(channel_fixture):
    led = channel_fixture.ledger
    assert led.submit(TxKind.INIT_FORCE_CLOSE, {"state": channel_fixture.state_hex(3, 70, 0, 30)}).accepted
    led.advance_blocks(9)
    early = led.submit(TxKind.FINAL_FORCE_CLOSE, {"cid": channel_fixture.cid.hex()})
    assert early.code == Reject.WINDOW_OPEN
    led.advance_blocks(1)
    final = led.submit(TxKind.FINAL_FORCE_CLOSE, {"cid": channel_fixture.cid.hex()})
    assert final.accepted
    assert led.balance(channel_fixture.client_addr) == 70
    assert led.balance(channel_fixture.provider_addr) == 30


def test_challenge_higher_k_wins(channel_fixture):
    led = channel_fixture.ledger
    assert led.submit(TxKind.INIT_FORCE_CLOSE, {"state": channel_fixture.state_hex(3, 70, 0, 30)}).accepted
    assert led.submit(TxKind.CHALLENGE, {"state": channel_fixture.state_hex(5, 50, 0, 50)}).accepted
    led.advance_blocks(10)
    assert led.submit(TxKind.FINAL_FORCE_CLOSE, {"cid": channel_fixture.cid.hex()}).accepted
    assert led.balance(channel_fixture.provider_addr) == 50
    assert led.escrows[channel_fixture.cid.hex()].latest_settled_k == 5


def test_stale_challenge_rejected(channel_fixture):
    led = channel_fixture.ledger
    assert led.submit(TxKind.INIT_FORCE_CLOSE, {"state": channel_fixture.state_hex(5, 50, 0, 50)}).accepted
    stale = led.submit(TxKind.CHALLENGE, {"state": channel_fixture.state_hex(3, 70, 0, 30)})
    assert stale.code == Reject.STALE_CHALLENGE
    equal = led.submit(TxKind.CHALLENGE, {"state": channel_fixture.state_hex(5, 50, 0, 50)})
    assert equal.code == Reject.STALE_CHALLENGE
    led.advance_blocks(10)
    assert led.submit(TxKind.FINAL_FORCE_CLOSE, {"cid": channel_fixture.cid.hex()}).accepted
    assert led.balance(channel_fixture.provider_addr) == 50


def test_late_challenge_rejected(channel_fixture):
    led = channel_fixture.ledger
    assert led.submit(TxKind.INIT_FORCE_CLOSE, {"state": channel_fixture.state_hex(3, 70, 0, 30)}).accepted
    led.advance_blocks(10)
    late = led.submit(TxKind.CHALLENGE, {"state": channel_fixture.state_hex(5, 50, 0, 50)})
    assert late.code == Reject.WINDOW_CLOSED


def test_independent_dispute_timers(channel_fixture, vault_kp, provider_kp):
    led = channel_fixture.ledger
    short = Ledger(dispute_window=3)
    # two disputes opened at different heights expire independently
    fx2 = ChannelFixture(short, vault_kp, provider_kp, keygen(b"client-2"))
    assert short.submit(TxKind.INIT_FORCE_CLOSE, {"state": fx2.state_hex(1, 90, 0, 10)}).accepted
    short.advance_blocks(2)
    fx3 = ChannelFixture(short, vault_kp, provider_kp, keygen(b"client-3"))
    assert short.submit(TxKind.INIT_FORCE_CLOSE, {"state": fx3.state_hex(1, 80, 0, 20)}).accepted
    short.advance_blocks(1)
    assert short.submit(TxKind.FINAL_FORCE_CLOSE, {"cid": fx2.cid.hex()}).accepted
    assert short.submit(TxKind.FINAL_FORCE_CLOSE, {"cid": fx3.cid.hex()}).code == Reject.WINDOW_OPEN
    short.advance_blocks(2)
    assert short.submit(TxKind.FINAL_FORCE_CLOSE, {"cid": fx3.cid.hex()}).accepted


def test_force_close_asig_reveals_witness(channel_fixture, provider_kp):
    led = channel_fixture.ledger
    wit = witness_from_scalar(424242)
    h = tagged_hash("test/result", b"res")
    m = payment_message(channel_fixture.cid, 3, 10, h)
    presig = pre_sign(provider_kp.sk, m, wit.T)
    sigma = adapt(presig, wit.t)
    receipt = led.submit(
        TxKind.FORCE_CLOSE_ASIG,
        {
            "state": channel_fixture.state_hex(4, 70, 10, 20),
            "rid_k": 3,
            "delta": 10,
            "h": h.hex(),
            "sigma_s": sigma.to_bytes().hex(),
        },
    )
    assert receipt.accepted
    assert led.balance(channel_fixture.provider_addr) == 30
    assert led.balance(channel_fixture.client_addr) == 70
    # any observer holding the pre-signature can extract the witness
    logged = [tx for tx in led.log if tx.kind == TxKind.FORCE_CLOSE_ASIG][0]
    from a402.crypto import Signature

    revealed = Signature.from_bytes(bytes.fromhex(logged.payload["sigma_s"]))
    assert extract(revealed, presig, wit.T) == wit.t


def test_force_close_asig_rejects_presignature(channel_fixture, provider_kp):
    led = channel_fixture.ledger
    wit = witness_from_scalar(5150)
    h = tagged_hash("test/result", b"res")
    m = payment_message(channel_fixture.cid, 3, 10, h)
    presig = pre_sign(provider_kp.sk, m, wit.T)
    from a402.crypto import Signature

    unadapted = Signature(presig.R_hat, presig.s_hat)
    receipt = led.submit(
        TxKind.FORCE_CLOSE_ASIG,
        {
            "state": channel_fixture.state_hex(4, 70, 10, 20),
            "rid_k": 3,
            "delta": 10,
            "h": h.hex(),
            "sigma_s": unadapted.to_bytes().hex(),
        },
    )
    assert receipt.code == Reject.BAD_ADAPTED_SIG


def test_force_close_asig_rejects_wrong_message(channel_fixture, provider_kp):
    led = channel_fixture.ledger
    wit = witness_from_scalar(999)
    h = tagged_hash("test/result", b"res")
    wrong_m = payment_message(channel_fixture.cid, 7, 10, h)
    sigma = adapt(pre_sign(provider_kp.sk, wrong_m, wit.T), wit.t)
    receipt = led.submit(
        TxKind.FORCE_CLOSE_ASIG,
        {
            "state": channel_fixture.state_hex(4, 70, 10, 20),
            "rid_k": 3,
            "delta": 10,
            "h": h.hex(),
            "sigma_s": sigma.to_bytes().hex(),
        },
    )
    assert receipt.code == Reject.BAD_ADAPTED_SIG


def test_force_close_asig_without_sigma_refunds_locked(channel_fixture):
    led = channel_fixture.ledger
    receipt = led.submit(TxKind.FORCE_CLOSE_ASIG, {"state": channel_fixture.state_hex(4, 70, 10, 20)})
    assert receipt.accepted
    assert led.balance(channel_fixture.client_addr) == 80
    assert led.balance(channel_fixture.provider_addr) == 20


# -- liquidity vault --------------------------------------------------------


def vault_deposit(ledger, accounts, depositor, amount):
    receipt = ledger.submit(
        TxKind.INIT_VAULT,
        {
            "vault_id": accounts.vault_id,
            "vault_pk": point_to_bytes(accounts.keypair.pk).hex(),
            "depositor": depositor,
            "amount": amount,
        },
    )
    assert receipt.accepted, receipt
    accounts.credit_deposit(depositor, amount)


def test_vault_deposit_and_aggregated_settle(ledger, vault_kp):
    accounts = VaultAccounts("vault-1", vault_kp)
    ledger.mint("alice", 500)
    vault_deposit(ledger, accounts, "alice", 500)
    assert ledger.vaults["vault-1"].amount == 500

    # aggregate payout: one tx paying the whole free balance
    amount = accounts.settle_amount("alice")
    snap = accounts.snapshot("alice")
    receipt = ledger.submit(
        TxKind.SETTLE_VAULT,
        {
            "vault_id": "vault-1",
            "payee": "alice",
            "amount": amount,
            "epoch": snap.epoch,
            "sig": accounts.sign_settle("alice", amount, snap.epoch).to_bytes().hex(),
        },
    )
    assert receipt.accepted
    accounts.mark_settled("alice")
    assert ledger.balance("alice") == 500
    assert ledger.vaults["vault-1"].amount == 0
    replay = ledger.submit(
        TxKind.SETTLE_VAULT,
        {
            "vault_id": "vault-1",
            "payee": "alice",
            "amount": amount,
            "epoch": snap.epoch,
            "sig": accounts.sign_settle("alice", amount, snap.epoch).to_bytes().hex(),
        },
    )
    assert not replay.accepted


def test_force_settle_without_challenge(ledger, vault_kp):
    accounts = VaultAccounts("vault-1", vault_kp)
    ledger.mint("alice", 300)
    vault_deposit(ledger, accounts, "alice", 300)
    snap = accounts.snapshot("alice")
    payload = {
        "vault_id": snap.vault_id,
        "owner": snap.owner,
        "v_free": snap.v_free,
        "epoch": snap.epoch,
        "sig": snap.sig.to_bytes().hex(),
    }
    assert ledger.submit(TxKind.INIT_FORCE_SETTLE, payload).accepted
    assert ledger.submit(TxKind.FINAL_FORCE_SETTLE, {"vault_id": "vault-1", "owner": "alice"}).code == Reject.WINDOW_OPEN
    ledger.advance_blocks(20)
    assert ledger.submit(TxKind.FINAL_FORCE_SETTLE, {"vault_id": "vault-1", "owner": "alice"}).accepted
    assert ledger.balance("alice") == 300


def test_force_settle_challenge_corrects_overclaim(ledger, vault_kp):
    accounts = VaultAccounts("vault-1", vault_kp)
    ledger.mint("alice", 300)
    vault_deposit(ledger, accounts, "alice", 300)
    stale = accounts.snapshot("alice")          # epoch 1, v_free 300
    accounts.reserve("alice", 200)              # epoch 2, v_free 100
    fresh = accounts.snapshot("alice")
    payload_stale = {
        "vault_id": stale.vault_id,
        "owner": stale.owner,
        "v_free": stale.v_free,
        "epoch": stale.epoch,
        "sig": stale.sig.to_bytes().hex(),
    }
    assert ledger.submit(TxKind.INIT_FORCE_SETTLE, payload_stale).accepted
    challenge = {
        "target": "vault",
        "vault_id": fresh.vault_id,
        "owner": fresh.owner,
        "v_free": fresh.v_free,
        "epoch": fresh.epoch,
        "sig": fresh.sig.to_bytes().hex(),
    }
    assert ledger.submit(TxKind.CHALLENGE, challenge).accepted
    ledger.advance_blocks(20)
    assert ledger.submit(TxKind.FINAL_FORCE_SETTLE, {"vault_id": "vault-1", "owner": "alice"}).accepted
    assert ledger.balance("alice") == 100


def test_force_settle_requires_vault_signature(ledger, vault_kp):
    accounts = VaultAccounts("vault-1", vault_kp)
    ledger.mint("alice", 300)
    vault_deposit(ledger, accounts, "alice", 300)
    rogue = keygen(b"rogue")
    forged = VaultSnapshot(
        "vault-1", "alice", 300, 99, sign(rogue.sk, snapshot_digest("vault-1", "alice", 300, 99))
    )
    payload = {
        "vault_id": forged.vault_id,
        "owner": forged.owner,
        "v_free": forged.v_free,
        "epoch": forged.epoch,
        "sig": forged.sig.to_bytes().hex(),
    }
    assert ledger.submit(TxKind.INIT_FORCE_SETTLE, payload).code == Reject.BAD_SIGNATURE


# -- conservation and cost accounting ------------------------------------------


def test_conservation_fuzz_10000_txs(vault_kp, provider_kp):
    led = Ledger()
    rng = random.Random(1234)
    actors = [f"actor-{i}" for i in range(8)]
    for a in actors:
        led.mint(a, 10_000)
    accepted = 0
    fixtures = []
    while accepted < 10_000:
        roll = rng.random()
        if roll < 0.9:
            receipt = led.submit(
                TxKind.X402_TRANSFER,
                {
                    "payer": rng.choice(actors),
                    "payee": rng.choice(actors),
                    "amount": rng.randint(1, 50),
                },
            )
        elif roll < 0.95 or not fixtures:
            fx = ChannelFixture(led, vault_kp, provider_kp, keygen(b"fuzz-%d" % accepted), capacity=rng.randint(1, 60))
            fixtures.append(fx)
            receipt = None
            accepted += 1  # the create inside the fixture
        else:
            fx = fixtures.pop(rng.randrange(len(fixtures)))
            pay_s = rng.randint(0, fx.capacity)
            receipt = led.submit(TxKind.CLOSE_ASC, fx.coop_close_payload(1, fx.capacity - pay_s, pay_s))
        if receipt is not None and receipt.accepted:
            accepted += 1
        assert led.total_supply() == led.minted
    assert led.total_supply() == led.minted


def test_cost_report_standard_lifecycle_matches_tables(channel_fixture):
    led = channel_fixture.ledger
    assert led.submit(TxKind.CLOSE_ASC, channel_fixture.coop_close_payload(1, 90, 10)).accepted
    report = led.cost_report()
    assert report.eth_gas == 26_050 + 57_637 == 83_687
    assert round(report.usd_eth, 2) == 3.35
    assert report.btc_vbytes == 153 + 155 == 308
    assert round(report.usd_btc, 2) == 1.54


def test_cost_report_x402_100_requests():
    led = Ledger()
    led.mint("payer", 10_000)
    assert led.submit(TxKind.X402_APPROVE, {"payer": "payer", "facilitator": "fac"}).accepted
    for _ in range(100):
        assert led.submit(TxKind.X402_TRANSFER, {"payer": "payer", "payee": "srv", "amount": 1}).accepted
    report = led.cost_report()
    assert report.eth_gas == 22_580 + 23_530 * 100 == 2_375_580
    assert round(report.usd_eth, 2) == 95.02
    assert report.btc_vbytes == 291 * 100 == 29_100
    assert round(report.usd_btc, 2) == 145.50


def test_cost_table_round_trip(tmp_path):
    table = CostTable.default()
    path = tmp_path / "costs.txt"
    path.write_text(table.dump())
    again = CostTable.parse(path.read_text())
    assert again.entries == table.entries
    assert table.cost("createASC", "eth") == 26_050


def test_usd_rates():
    assert gas_to_usd(1_000_000) == pytest.approx(40.0)
    assert vbytes_to_usd(200) == pytest.approx(1.0)


def test_log_export_format(channel_fixture):
    led = channel_fixture.ledger
    lines = led.export_log().splitlines()
    assert len(lines) == 1
    height, kind, digest, gas, vb = lines[0].split()
    assert kind == "createASC" and int(gas) == 26_050 and int(vb) == 153
