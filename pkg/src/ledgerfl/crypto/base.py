"""Backend-independent homomorphic encryption API.

Ciphertexts, keys and parameters are immutable value types. Every public operation
validates its inputs here and then dispatches to the backend named on the key or
ciphertext, so ExactMock and the lattice backend share one contract.
"""

from __future__ import annotations

import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass, replace
from enum import Enum
from typing import Callable, Sequence, Union

import numpy as np

from ledgerfl.core.errors import (
    CapacityError,
    CompatibilityError,
    DomainError,
    LevelError,
    ParameterError,
    PolicyError,
)

logger = logging.getLogger(__name__)

SUPPORTED_RING_DEGREES = (1024, 2048, 4096)

Seed = Union[int, np.random.Generator, None]


class KeyScope(Enum):
    """Decryption scope of a key or ciphertext."""

    AGGREGATE = "aggregate"
    AUDIT = "audit"


class Layout(Enum):
    """How a ciphertext is read back: slot vector or the sum of its slots."""

    SLOTS = "slots"
    SUM = "sum"


@dataclass(frozen=True)
class HeParams:
    """Ring and encoding parameters.

    The modulus chain has two primes: a base prime of ``base_bits`` bits and a rescaling
    prime just above the encoding scale 2**scale_bits. A third special prime is used only
    inside relinearization.
    """

    ring_degree: int = 1024
    scale_bits: int = 30
    base_bits: int = 50
    special_bits: int = 90
    noise_std: float = 3.2
    plaintext_bound: float = 8.0
    max_magnitude: float = 1024.0

    def __post_init__(self) -> None:
        if self.ring_degree not in SUPPORTED_RING_DEGREES:
            raise ParameterError(
                f"ring degree {self.ring_degree} not in {SUPPORTED_RING_DEGREES}"
            )
        if not 10 <= self.scale_bits < self.base_bits:
            raise ParameterError("scale must be smaller than the base modulus")
        if self.special_bits <= self.base_bits + self.scale_bits - 1:
            raise ParameterError("special modulus must exceed the ciphertext modulus")
        if self.noise_std <= 0:
            raise ParameterError("noise std must be positive")

    @property
    def slots(self) -> int:
        return self.ring_degree // 2

    @property
    def scale(self) -> float:
        return float(2**self.scale_bits)

    def to_dict(self) -> dict[str, float | int]:
        """Serialize to dictionary."""
        return {
            "ring_degree": self.ring_degree,
            "scale_bits": self.scale_bits,
            "base_bits": self.base_bits,
            "special_bits": self.special_bits,
            "noise_std": self.noise_std,
            "plaintext_bound": self.plaintext_bound,
            "max_magnitude": self.max_magnitude,
        }


@dataclass(frozen=True, eq=False)
class KeyMaterial:
    """Consortium key material.

    ``secret_key`` is None on public views (what the server and the ledger hold).
    """

    backend: str
    params: HeParams
    public_key: tuple[np.ndarray, ...]
    secret_key: np.ndarray | None
    eval_key: tuple[np.ndarray, ...]
    scope: KeyScope = KeyScope.AGGREGATE
    key_id: str = ""

    def with_scope(self, scope: KeyScope) -> KeyMaterial:
        """View of the same keys restricted to another decryption scope."""
        return replace(self, scope=scope)

    def public_view(self) -> KeyMaterial:
        return replace(self, secret_key=None)

    @property
    def has_secret(self) -> bool:
        return self.secret_key is not None


@dataclass(frozen=True, eq=False)
class Ciphertext:
    """A ciphertext polynomial pair (or a float carrier for ExactMock)."""

    backend: str
    params: HeParams
    parts: tuple[np.ndarray, ...]
    level: int
    scale: float
    length: int
    layout: Layout = Layout.SLOTS
    scope: KeyScope = KeyScope.AGGREGATE

    def __post_init__(self) -> None:
        if self.level < 0:
            raise LevelError("ciphertext level must be non-negative")
        if not self.scale > 0:
            raise DomainError("ciphertext scale must be positive")


class HomomorphicBackend(ABC):
    """Arithmetic a backend must provide; validation lives in the module functions."""

    name: str = ""

    @abstractmethod
    def keygen(self, params: HeParams, seed: int) -> KeyMaterial: ...

    @abstractmethod
    def encrypt(
        self, key: KeyMaterial, values: np.ndarray, rng: np.random.Generator, scope: KeyScope
    ) -> Ciphertext: ...

    @abstractmethod
    def decrypt_slots(self, key: KeyMaterial, ct: Ciphertext) -> np.ndarray: ...

    @abstractmethod
    def add(self, a: Ciphertext, b: Ciphertext) -> Ciphertext: ...

    @abstractmethod
    def plain_mul(self, ct: Ciphertext, multiplier: float | np.ndarray) -> Ciphertext: ...

    @abstractmethod
    def square(self, key: KeyMaterial, ct: Ciphertext) -> Ciphertext: ...


_BACKENDS: dict[str, HomomorphicBackend] = {}


def register_backend(cls: type[HomomorphicBackend]) -> type[HomomorphicBackend]:
    """Class decorator adding a backend to the registry."""
    _BACKENDS[cls.name] = cls()
    return cls


def get_backend(name: str) -> HomomorphicBackend:
    if not _BACKENDS:
        _load_builtin_backends()
    try:
        return _BACKENDS[name]
    except KeyError as exc:
        raise ParameterError(f"unknown encryption backend '{name}'") from exc


def _load_builtin_backends() -> None:
    from ledgerfl.crypto import exact, lattice  # noqa: F401


def _rng(seed: Seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def keygen(params: HeParams, seed: int, backend: str = "lattice") -> KeyMaterial:
    """Generate the consortium key material deterministically from ``seed``."""
    return get_backend(backend).keygen(params, seed)


def encrypt(
    pk: KeyMaterial,
    values: Sequence[float] | np.ndarray,
    seed: Seed = None,
    scope: KeyScope = KeyScope.AGGREGATE,
) -> Ciphertext:
    """Encrypt a real vector into one ciphertext.

    Raises:
        CapacityError: If the vector is longer than the slot count.
        DomainError: If an entry is non-finite or beyond the backend's magnitude limit.
    """
    v = np.asarray(values, dtype=np.float64).ravel()
    if v.size > pk.params.slots:
        raise CapacityError(f"vector of length {v.size} exceeds {pk.params.slots} slots")
    if not np.all(np.isfinite(v)):
        raise DomainError("cannot encrypt non-finite values")
    if v.size and np.max(np.abs(v)) > pk.params.max_magnitude:
        raise DomainError(f"plaintext magnitude exceeds {pk.params.max_magnitude}")
    return get_backend(pk.backend).encrypt(pk, v, _rng(seed), scope)


def decrypt(sk: KeyMaterial, ct: Ciphertext) -> np.ndarray:
    """Decrypt a ciphertext; SUM-layout ciphertexts yield a one-element array.

    Raises:
        PolicyError: If the key is public-only or its scope differs from the ciphertext's.
    """
    if not sk.has_secret:
        raise PolicyError("decryption needs a secret key")
    if sk.scope is not ct.scope:
        raise PolicyError(
            f"{sk.scope.value}-scoped key cannot decrypt a {ct.scope.value} ciphertext"
        )
    if sk.backend != ct.backend:
        raise CompatibilityError(f"key backend {sk.backend} != ciphertext {ct.backend}")
    slots = get_backend(ct.backend).decrypt_slots(sk, ct)[: ct.length]
    if ct.layout is Layout.SUM:
        return np.array([float(np.sum(slots))])
    return slots


def _check_pair(a: Ciphertext, b: Ciphertext) -> None:
    if a.backend != b.backend:
        raise CompatibilityError(f"backends differ: {a.backend} vs {b.backend}")
    if a.params != b.params:
        raise CompatibilityError("ciphertexts use different encryption parameters")
    if a.level != b.level:
        raise CompatibilityError(f"levels differ: {a.level} vs {b.level}")
    if not np.isclose(a.scale, b.scale, rtol=1e-9, atol=0.0):
        raise CompatibilityError(f"scales differ: {a.scale} vs {b.scale}")
    if a.length != b.length or a.layout is not b.layout:
        raise CompatibilityError("ciphertext lengths or layouts differ")
    if a.scope is not b.scope:
        raise CompatibilityError("ciphertext scopes differ")


def add(a: Ciphertext, b: Ciphertext) -> Ciphertext:
    """Homomorphic addition of two compatible ciphertexts."""
    _check_pair(a, b)
    return get_backend(a.backend).add(a, b)


def plain_mul(ct: Ciphertext, multiplier: float | Sequence[float] | np.ndarray) -> Ciphertext:
    """Multiply by a plaintext scalar or vector; consumes one level.

    Raises:
        LevelError: If the ciphertext is already at level 0.
        CompatibilityError: If a vector multiplier's length differs from the ciphertext's.
    """
    if ct.level < 1:
        raise LevelError("no multiplicative level left for plain_mul")
    if np.ndim(multiplier) == 0:
        mult: float | np.ndarray = float(multiplier)  # type: ignore[arg-type]
    else:
        mult = np.asarray(multiplier, dtype=np.float64).ravel()
        if mult.size != ct.length:
            raise CompatibilityError(f"multiplier length {mult.size} != {ct.length}")
    return get_backend(ct.backend).plain_mul(ct, mult)


def plain_dot(ct: Ciphertext, vector: Sequence[float] | np.ndarray) -> Ciphertext:
    """Encrypted inner product with a public vector, readable by the audit scope."""
    vec = np.asarray(vector, dtype=np.float64).ravel()
    if vec.size != ct.length:
        raise CompatibilityError(f"vector length {vec.size} != ciphertext length {ct.length}")
    product = plain_mul(ct, vec)
    return replace(product, layout=Layout.SUM, scope=KeyScope.AUDIT)


def sum_squares(ct: Ciphertext, evk: KeyMaterial) -> Ciphertext:
    """Encrypted squared norm ‖v‖², readable by the audit scope.

    Raises:
        LevelError: If the ciphertext has no level left for the multiplication.
    """
    if ct.level < 1:
        raise LevelError("sum_squares needs a ciphertext at level 1")
    if ct.layout is not Layout.SLOTS:
        raise CompatibilityError("sum_squares needs a slot-layout ciphertext")
    squared = get_backend(ct.backend).square(evk, ct)
    return replace(squared, layout=Layout.SUM, scope=KeyScope.AUDIT)


@dataclass(frozen=True, eq=False)
class EncryptedVector:
    """A real vector split into slot-sized ciphertext chunks in fixed order."""

    chunks: tuple[Ciphertext, ...]
    length: int

    @property
    def backend(self) -> str:
        return self.chunks[0].backend

    @property
    def level(self) -> int:
        return self.chunks[0].level

    def _zip(self, other: EncryptedVector) -> list[tuple[Ciphertext, Ciphertext]]:
        if len(self.chunks) != len(other.chunks) or self.length != other.length:
            raise CompatibilityError("encrypted vectors have different chunking")
        return list(zip(self.chunks, other.chunks))

    def add(self, other: EncryptedVector) -> EncryptedVector:
        return EncryptedVector(tuple(add(a, b) for a, b in self._zip(other)), self.length)

    def plain_mul(self, scalar: float) -> EncryptedVector:
        return EncryptedVector(tuple(plain_mul(c, scalar) for c in self.chunks), self.length)

    def _reduce(self, op: Callable[[Ciphertext, int, int], Ciphertext]) -> Ciphertext:
        total: Ciphertext | None = None
        start = 0
        for chunk in self.chunks:
            part = op(chunk, start, start + chunk.length)
            total = part if total is None else add(total, _align_length(part, total))
            start += chunk.length
        assert total is not None
        return total

    def plain_dot(self, vector: np.ndarray) -> Ciphertext:
        vec = np.asarray(vector, dtype=np.float64).ravel()
        if vec.size != self.length:
            raise CompatibilityError(f"vector length {vec.size} != {self.length}")
        return self._reduce(lambda c, lo, hi: plain_dot(c, vec[lo:hi]))

    def sum_squares(self, evk: KeyMaterial) -> Ciphertext:
        return self._reduce(lambda c, lo, hi: sum_squares(c, evk))


def _align_length(part: Ciphertext, total: Ciphertext) -> Ciphertext:
    # SUM-layout chunks of different lengths are added slotwise; the readout length is the
    # longer one since the shorter chunk's trailing slots decrypt to zero.
    if part.length == total.length:
        return part
    return replace(part, length=total.length)


def encrypt_vector(
    pk: KeyMaterial,
    values: Sequence[float] | np.ndarray,
    seed: Seed = None,
    scope: KeyScope = KeyScope.AGGREGATE,
) -> EncryptedVector:
    """Encrypt a vector of any positive length, chunked by the slot count."""
    v = np.asarray(values, dtype=np.float64).ravel()
    if v.size == 0:
        raise DomainError("cannot encrypt an empty vector")
    rng = _rng(seed)
    slots = pk.params.slots
    chunks = tuple(encrypt(pk, v[i : i + slots], rng, scope) for i in range(0, v.size, slots))
    return EncryptedVector(chunks, int(v.size))


def decrypt_vector(sk: KeyMaterial, ev: EncryptedVector) -> np.ndarray:
    return np.concatenate([decrypt(sk, c) for c in ev.chunks])
