"""ExactMock: a plaintext carrier with the lattice backend's contract.

Values travel in the clear inside the ciphertext wrapper. Levels, scopes and layouts
follow the same rules as the lattice backend, so any algorithm run on this backend
makes the same decisions it would make on encrypted data, only without the noise.
"""

from __future__ import annotations

import hashlib
from dataclasses import replace

import numpy as np

from ledgerfl.crypto.base import (
    Ciphertext,
    HeParams,
    HomomorphicBackend,
    KeyMaterial,
    KeyScope,
    register_backend,
)


def _padded(values: np.ndarray, slots: int) -> np.ndarray:
    out = np.zeros(slots)
    out[: values.size] = values
    return out


@register_backend
class ExactBackend(HomomorphicBackend):
    """Noise-free backend used for fast runs and as the lattice backend's oracle."""

    name = "exact"

    def keygen(self, params: HeParams, seed: int) -> KeyMaterial:
        token = hashlib.sha256(f"exact:{seed}".encode()).hexdigest()[:16]
        return KeyMaterial(
            backend=self.name,
            params=params,
            public_key=(),
            secret_key=np.zeros(0),
            eval_key=(),
            key_id=token,
        )

    def encrypt(
        self, key: KeyMaterial, values: np.ndarray, rng: np.random.Generator, scope: KeyScope
    ) -> Ciphertext:
        return Ciphertext(
            backend=self.name,
            params=key.params,
            parts=(_padded(values, key.params.slots),),
            level=1,
            scale=key.params.scale,
            length=int(values.size),
            scope=scope,
        )

    def decrypt_slots(self, key: KeyMaterial, ct: Ciphertext) -> np.ndarray:
        return ct.parts[0].copy()

    def add(self, a: Ciphertext, b: Ciphertext) -> Ciphertext:
        return replace(a, parts=(a.parts[0] + b.parts[0],))

    def plain_mul(self, ct: Ciphertext, multiplier: float | np.ndarray) -> Ciphertext:
        if isinstance(multiplier, np.ndarray):
            multiplier = _padded(multiplier, ct.parts[0].size)
        return replace(ct, parts=(ct.parts[0] * multiplier,), level=ct.level - 1)

    def square(self, key: KeyMaterial, ct: Ciphertext) -> Ciphertext:
        return replace(ct, parts=(ct.parts[0] ** 2,), level=ct.level - 1)
