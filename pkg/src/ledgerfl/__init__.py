"""ledgerfl: ledger-coordinated, privacy-preserving federated learning simulator."""

__all__ = ["__version__"]

__version__ = "0.1.0"
