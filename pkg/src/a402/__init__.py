"""A402: atomic service channels binding payments to service execution,
simulated end to end over a deterministic network and mock ledger."""

__version__ = "0.1.0"
