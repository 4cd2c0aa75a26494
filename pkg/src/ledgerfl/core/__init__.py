"""Core federated learning pipeline for ledgerfl."""
