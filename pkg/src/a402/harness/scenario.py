"""Scenario definitions and the key-value scenario file format.

A scenario file is plain text: ``key value`` lines for scalar fields,
``adversary.<flag> true|false`` lines for misbehavior toggles, and
``fault <link> <kind> <index> <action> [param]`` lines for network faults.
Identical scenarios with identical seeds reproduce identical outcomes.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields as dc_fields
from typing import List, Optional

from ..net import FaultRule, FaultScript

MODE_STANDARD = "standard"
MODE_VAULT = "vault"
MODE_X402 = "x402"


@dataclass
class AdversaryFlags:
    client_double_spend: bool = False
    client_stale_force_close: bool = False
    provider_abort_exec: bool = False
    provider_abort_after_auth: bool = False
    provider_claim_without_exec: bool = False
    vault_censor_reveal: bool = False
    vault_censor_ack: bool = False
    vault_offline_after_open: bool = False
    watchtower_provider: bool = True
    watchtower_vault: bool = True


@dataclass
class Scenario:
    mode: str = MODE_STANDARD
    channels: int = 1
    providers: int = 1
    requests: int = 1
    delta: int = 10
    capacity: int = 0              # 0 derives requests * delta
    exec_delay_ms: int = 200
    net_delay_ms: int = 10
    lock_timeout_ms: int = 2000
    ack_timeout_ms: int = 500
    close_giveup_ms: int = 8000
    dispute_window: int = 10
    settle_window: int = 20
    confirm_ms: int = 12000        # x402 confirmation delay
    response_timeout_ms: int = 0   # 0 derives from the other delays
    retries: int = 0
    client_force_close_on_timeout: bool = False
    seed: int = 0
    adversary: AdversaryFlags = field(default_factory=AdversaryFlags)
    fault_rules: List[FaultRule] = field(default_factory=list)

    def channel_capacity(self) -> int:
        return self.capacity if self.capacity > 0 else self.requests * self.delta

    def derived_response_timeout(self) -> int:
        if self.response_timeout_ms > 0:
            return self.response_timeout_ms
        return self.lock_timeout_ms + self.exec_delay_ms + 10 * self.net_delay_ms + 200

    def fault_script(self) -> FaultScript:
        return FaultScript(list(self.fault_rules))

    def dump(self) -> str:
        lines = []
        for f in dc_fields(self):
            if f.name in ("adversary", "fault_rules"):
                continue
            lines.append(f"{f.name} {getattr(self, f.name)}")
        for f in dc_fields(self.adversary):
            value = getattr(self.adversary, f.name)
            lines.append(f"adversary.{f.name} {'true' if value else 'false'}")
        for rule in self.fault_rules:
            suffix = f" {rule.param}" if rule.param else ""
            lines.append(f"fault {rule.link} {rule.kind} {rule.index} {rule.action}{suffix}")
        return "\n".join(lines) + "\n"


_BOOL_FIELDS = {"client_force_close_on_timeout"}
_STR_FIELDS = {"mode"}


def _parse_bool(raw: str) -> bool:
    if raw.lower() in ("true", "1", "yes", "on"):
        return True
    if raw.lower() in ("false", "0", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {raw!r}")


def parse_scenario(text: str) -> Scenario:
    scenario = Scenario()
    flag_names = {f.name for f in dc_fields(AdversaryFlags)}
    scalar_names = {f.name for f in dc_fields(Scenario)} - {"adversary", "fault_rules"}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        key = parts[0]
        if key == "fault":
            if len(parts) not in (5, 6):
                raise ValueError(f"line {lineno}: malformed fault rule")
            param = int(parts[5]) if len(parts) == 6 else 0
            scenario.fault_rules.append(FaultRule(parts[1], parts[2], int(parts[3]), parts[4], param))
            continue
        if key.startswith("adversary."):
            flag = key.split(".", 1)[1]
            if flag not in flag_names:
                raise ValueError(f"line {lineno}: unknown adversary flag {flag!r}")
            setattr(scenario.adversary, flag, _parse_bool(parts[1]))
            continue
        if key not in scalar_names:
            raise ValueError(f"line {lineno}: unknown key {key!r}")
        raw = parts[1]
        if key in _STR_FIELDS:
            setattr(scenario, key, raw)
        elif key in _BOOL_FIELDS:
            setattr(scenario, key, _parse_bool(raw))
        else:
            setattr(scenario, key, int(raw))
    if scenario.mode not in (MODE_STANDARD, MODE_VAULT, MODE_X402):
        raise ValueError(f"unknown mode {scenario.mode!r}")
    return scenario


def load_scenario(path: str) -> Scenario:
    with open(path) as fh:
        return parse_scenario(fh.read())
