"""Exception hierarchy shared by every ledgerfl module."""

from __future__ import annotations


class FederationError(Exception):
    """Base class for all ledgerfl errors."""

    pass


class SchemaError(FederationError, ValueError):
    """Raised when parameter or batch shapes do not match a model schema."""

    pass


class DomainError(FederationError, ValueError):
    """Raised when an input lies outside the domain of an operation."""

    pass


class NumericalError(FederationError, ArithmeticError):
    """Raised when a computation produces non-finite values."""

    pass


class FormatError(FederationError):
    """Raised when a binary or text file does not follow its format."""

    def __init__(self, message: str, offset: int | None = None) -> None:
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class ParameterError(FederationError, ValueError):
    """Raised for unsupported encryption parameters."""

    pass


class CapacityError(FederationError):
    """Raised when a plaintext vector does not fit in the ciphertext slots."""

    pass


class PolicyError(FederationError, PermissionError):
    """Raised when a key is used outside its decryption scope."""

    pass


class CompatibilityError(FederationError):
    """Raised when ciphertexts cannot be combined (backend, level, scale or length)."""

    pass


class LevelError(FederationError):
    """Raised when a ciphertext has no multiplicative level left."""

    pass


class RegistryError(FederationError, KeyError):
    """Raised when an enterprise id is unknown or no longer registered."""

    pass


class ChainVerificationError(FederationError):
    """Raised when the ledger hash chain is broken."""

    def __init__(self, height: int, message: str = "") -> None:
        super().__init__(message or f"ledger verification failed at height {height}")
        self.height = height


class PlanError(FederationError):
    """Raised when an attack plan cannot be executed this round."""

    pass


class AuditError(FederationError):
    """Raised when a boundary trace is malformed."""

    pass


class ProtocolHaltError(FederationError):
    """Raised when no enterprise is left to run a round."""

    pass


class ConfigError(FederationError, ValueError):
    """Raised when a configuration is invalid."""

    pass


class StorageError(FederationError, OSError):
    """Raised when an output artifact cannot be written or read."""

    def __init__(self, path: object, message: str = "") -> None:
        super().__init__(f"{message or 'storage failure'}: {path}")
        self.path = path
