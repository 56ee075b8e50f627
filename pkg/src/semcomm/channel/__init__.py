"""Payload codec and symbol-level wireless channel."""
