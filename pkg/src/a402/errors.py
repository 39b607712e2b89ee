"""Shared error types and rejection codes.

Ledger rejections are reported as codes on receipts (submissions from
adversarial parties must not crash the world); everything else raises.
"""

from __future__ import annotations


class A402Error(Exception):
    """Base class for all protocol errors."""

    code = "A402_ERROR"

    def __init__(self, message: str = ""):
        super().__init__(message or self.code)


# -- crypto ----------------------------------------------------------------

class IdentityPointError(A402Error):
    """A group operation produced or received the identity element."""

    code = "IDENTITY_POINT"


class WitnessMismatchError(A402Error):
    """Extraction produced a scalar whose statement does not match."""

    code = "WITNESS_MISMATCH"


class BadWitnessError(A402Error):
    """Decryption key does not authenticate the ciphertext."""

    code = "BAD_WITNESS"


# -- attestation -----------------------------------------------------------

class RegistrationRejected(A402Error):
    code = "REGISTRATION_REJECTED"


class DuplicateIdentity(A402Error):
    code = "DUPLICATE_IDENTITY"


class UnknownParty(A402Error):
    code = "UNKNOWN_PARTY"


# -- channel / exchange ----------------------------------------------------

class DuplicateChannel(A402Error):
    code = "DUPLICATE_ASC"


class ChannelBusy(A402Error):
    code = "CHANNEL_BUSY"


class InsufficientChannelFunds(A402Error):
    code = "INSUFFICIENT_CHANNEL_FUNDS"


class AlreadyClosed(A402Error):
    code = "ALREADY_CLOSED"


# -- vault accounts ----------------------------------------------------------

class InsufficientVaultBalance(A402Error):
    code = "INSUFFICIENT_VAULT_BALANCE"


class ZeroBalance(A402Error):
    code = "ZERO_BALANCE"


# -- ledger rejection codes (carried on receipts, not raised to callers) ----

class Reject:
    """Rejection codes attached to ledger receipts."""

    INSUFFICIENT_FUNDS = "INSUFFICIENT_FUNDS"
    DUPLICATE_CID = "DUPLICATE_CID"
    UNKNOWN_CHANNEL = "UNKNOWN_CHANNEL"
    UNKNOWN_VAULT = "UNKNOWN_VAULT"
    BAD_SIGNATURE = "BAD_SIGNATURE"
    SUM_MISMATCH = "SUM_MISMATCH"
    STALE_CHALLENGE = "STALE_CHALLENGE"
    WINDOW_OPEN = "WINDOW_OPEN"
    WINDOW_CLOSED = "WINDOW_CLOSED"
    BAD_ADAPTED_SIG = "BAD_ADAPTED_SIG"
    ALREADY_SETTLED = "ALREADY_SETTLED"
    NO_DISPUTE = "NO_DISPUTE"
    DISPUTE_OPEN = "DISPUTE_OPEN"
    ZERO_AMOUNT = "ZERO_AMOUNT"
    BAD_PAYLOAD = "BAD_PAYLOAD"
    STALE_SETTLE = "STALE_SETTLE"


class LedgerRejection(A402Error):
    """Internal signal converted into a rejected receipt by Ledger.submit."""

    def __init__(self, code: str, message: str = ""):
        self.code = code
        super().__init__(message or code)


# -- harness -----------------------------------------------------------------

class InvariantViolation(A402Error):
    """A run-level safety invariant failed; names the invariant."""

    code = "INVARIANT_VIOLATION"

    def __init__(self, invariant: str, detail: str = ""):
        self.invariant = invariant
        super().__init__(f"{invariant}: {detail}" if detail else invariant)
