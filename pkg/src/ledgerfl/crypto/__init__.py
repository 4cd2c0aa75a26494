"""Homomorphic encryption backends."""

from ledgerfl.crypto.base import (
    Ciphertext,
    EncryptedVector,
    HeParams,
    KeyMaterial,
    KeyScope,
    Layout,
    add,
    decrypt,
    decrypt_vector,
    encrypt,
    encrypt_vector,
    get_backend,
    keygen,
    plain_dot,
    plain_mul,
    sum_squares,
)
from ledgerfl.crypto import exact, lattice  # noqa: F401,E402  (register built-in backends)

__all__ = [
    "Ciphertext",
    "EncryptedVector",
    "HeParams",
    "KeyMaterial",
    "KeyScope",
    "Layout",
    "add",
    "decrypt",
    "decrypt_vector",
    "encrypt",
    "encrypt_vector",
    "get_backend",
    "keygen",
    "plain_dot",
    "plain_mul",
    "sum_squares",
]
