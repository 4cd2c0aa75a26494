"""Consortium ledger simulation."""
