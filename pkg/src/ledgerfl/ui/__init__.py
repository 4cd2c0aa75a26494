"""Command-line interface for ledgerfl."""
