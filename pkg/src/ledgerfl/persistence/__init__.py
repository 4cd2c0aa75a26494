"""Persistence layer for experiment outputs."""

from ledgerfl.persistence.result_storage import ResultStorage

__all__ = ["ResultStorage"]
