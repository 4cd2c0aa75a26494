"""Approximate-arithmetic lattice backend over Z[X]/(X^N + 1).

Real vectors are packed into N/2 slots with the canonical embedding, scaled by 2**scale_bits
and rounded. Ciphertexts are RLWE pairs modulo q0*q1 at level 1 and modulo q0 at level 0;
every multiplication is followed by a rescale that divides out q1. Coefficients are kept
as centred Python integers in numpy object arrays. Polynomial products are computed
exactly by CRT over small primes and integer convolution.
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import replace
from functools import lru_cache

import numpy as np

from ledgerfl.core.errors import NumericalError
from ledgerfl.crypto.base import (
    Ciphertext,
    HeParams,
    HomomorphicBackend,
    KeyMaterial,
    KeyScope,
    register_backend,
)

logger = logging.getLogger(__name__)

_CRT_BITS = 20
_MILLER_RABIN_BASES = (2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41)


def is_prime(n: int) -> bool:
    """Miller-Rabin with fixed bases (deterministic below 3.3e24)."""
    if n < 2:
        return False
    for p in _MILLER_RABIN_BASES:
        if n % p == 0:
            return n == p
    d, r = n - 1, 0
    while d % 2 == 0:
        d //= 2
        r += 1
    for a in _MILLER_RABIN_BASES:
        x = pow(a, d, n)
        if x in (1, n - 1):
            continue
        for _ in range(r - 1):
            x = pow(x, 2, n)
            if x == n - 1:
                break
        else:
            return False
    return True


@lru_cache(maxsize=None)
def next_prime(n: int) -> int:
    """Smallest prime strictly greater than ``n``."""
    candidate = n + 1 if n % 2 == 0 else n + 2
    while not is_prime(candidate):
        candidate += 2
    return candidate


@lru_cache(maxsize=None)
def moduli(params: HeParams) -> tuple[int, int, int]:
    """(q0, q1, P): base prime, rescaling prime and special relinearization prime."""
    q0 = next_prime(2**params.base_bits)
    q1 = next_prime(2**params.scale_bits)
    special = next_prime(2**params.special_bits)
    return q0, q1, special


def level_modulus(params: HeParams, level: int) -> int:
    q0, q1, _ = moduli(params)
    return q0 * q1 if level >= 1 else q0


@lru_cache(maxsize=1)
def _crt_primes() -> tuple[int, ...]:
    limit = 1 << _CRT_BITS
    sieve = np.ones(limit, dtype=bool)
    sieve[:2] = False
    for i in range(2, int(limit**0.5) + 1):
        if sieve[i]:
            sieve[i * i :: i] = False
    return tuple(int(p) for p in np.flatnonzero(sieve)[::-1][:96])


def center(poly: np.ndarray, modulus: int) -> np.ndarray:
    """Reduce into the centred range (-modulus/2, modulus/2]."""
    reduced = poly % modulus
    return np.where(reduced > modulus // 2, reduced - modulus, reduced)


def _max_abs(poly: np.ndarray) -> int:
    return int(np.max(np.abs(poly))) if poly.size else 0


def negacyclic_mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Exact product of two integer polynomials modulo X^N + 1."""
    n = a.size
    bound = 2 * n * max(1, _max_abs(a)) * max(1, _max_abs(b))
    primes: list[int] = []
    modulus = 1
    for p in _crt_primes():
        if modulus > 2 * bound:
            break
        primes.append(p)
        modulus *= p
    else:
        if modulus <= 2 * bound:
            raise NumericalError("polynomial product exceeds the CRT range")

    total = np.zeros(n, dtype=object)
    for p in primes:
        ap = (a % p).astype(np.int64)
        bp = (b % p).astype(np.int64)
        full = np.convolve(ap, bp)
        res = full[:n].copy()
        res[: n - 1] -= full[n:]
        cofactor = modulus // p
        coeff = cofactor * pow(cofactor, -1, p) % modulus
        total = total + (res % p).astype(object) * coeff
    return center(total, modulus)


def _as_poly(values: np.ndarray) -> np.ndarray:
    return np.asarray(values, dtype=np.int64).astype(object)


def _ternary(rng: np.random.Generator, n: int) -> np.ndarray:
    return _as_poly(rng.integers(-1, 2, size=n))


def _gaussian(rng: np.random.Generator, n: int, std: float) -> np.ndarray:
    return _as_poly(np.rint(rng.normal(0.0, std, size=n)))


def _uniform(rng: np.random.Generator, n: int, modulus: int) -> np.ndarray:
    limbs = modulus.bit_length() // 32 + 2
    acc = np.zeros(n, dtype=object)
    for i in range(limbs):
        limb = rng.integers(0, 2**32, size=n, dtype=np.uint64).astype(object)
        acc = acc + limb * (1 << (32 * i))
    return center(acc, modulus)


def _twist(n: int) -> np.ndarray:
    return np.exp(1j * np.pi * np.arange(n) / n)


def encode(values: np.ndarray, scale: float, ring_degree: int) -> np.ndarray:
    """Pack up to N/2 real values into an integer polynomial at the given scale."""
    padded = np.zeros(ring_degree, dtype=np.complex128)
    padded[: values.size] = values
    spectrum = np.conj(_twist(ring_degree)) * np.fft.fft(padded)
    coeffs = (2.0 * scale / ring_degree) * np.real(spectrum)
    return _as_poly(np.rint(coeffs))


def decode(poly: np.ndarray, scale: float, length: int) -> np.ndarray:
    n = poly.size
    evaluations = n * np.fft.ifft(poly.astype(np.float64) * _twist(n))
    return np.real(evaluations)[:length] / scale


def _round_div(poly: np.ndarray, divisor: int) -> np.ndarray:
    return (poly + divisor // 2) // divisor


@register_backend
class LatticeBackend(HomomorphicBackend):
    """Two-level RLWE backend with relinearization through a special prime."""

    name = "lattice"

    def keygen(self, params: HeParams, seed: int) -> KeyMaterial:
        rng = np.random.default_rng(seed)
        n = params.ring_degree
        q0, q1, special = moduli(params)
        q_top = q0 * q1
        secret = _ternary(rng, n)

        a = _uniform(rng, n, q_top)
        b = center(-negacyclic_mul(a, secret) + _gaussian(rng, n, params.noise_std), q_top)

        big = special * q_top
        a2 = _uniform(rng, n, big)
        s_squared = negacyclic_mul(secret, secret)
        b2 = center(
            -negacyclic_mul(a2, secret)
            + _gaussian(rng, n, params.noise_std)
            + special * s_squared,
            big,
        )
        key_id = hashlib.sha256(f"lattice:{seed}:{sorted(params.to_dict().items())}".encode())
        logger.debug("generated lattice keys for N=%d", n)
        return KeyMaterial(
            backend=self.name,
            params=params,
            public_key=(b, a),
            secret_key=secret,
            eval_key=(b2, a2),
            key_id=key_id.hexdigest()[:16],
        )

    def encrypt(
        self, key: KeyMaterial, values: np.ndarray, rng: np.random.Generator, scope: KeyScope
    ) -> Ciphertext:
        params = key.params
        n = params.ring_degree
        q_top = level_modulus(params, 1)
        b, a = key.public_key
        message = encode(values, params.scale, n)
        u = _ternary(rng, n)
        c0 = negacyclic_mul(b, u) + _gaussian(rng, n, params.noise_std) + message
        c1 = negacyclic_mul(a, u) + _gaussian(rng, n, params.noise_std)
        return Ciphertext(
            backend=self.name,
            params=params,
            parts=(center(c0, q_top), center(c1, q_top)),
            level=1,
            scale=params.scale,
            length=int(values.size),
            scope=scope,
        )

    def decrypt_slots(self, key: KeyMaterial, ct: Ciphertext) -> np.ndarray:
        modulus = level_modulus(ct.params, ct.level)
        acc = ct.parts[0].copy()
        power = key.secret_key
        for part in ct.parts[1:]:
            acc = acc + negacyclic_mul(part, power)
            power = negacyclic_mul(power, key.secret_key)
        return decode(center(acc, modulus), ct.scale, ct.params.slots)

    def add(self, a: Ciphertext, b: Ciphertext) -> Ciphertext:
        modulus = level_modulus(a.params, a.level)
        parts = tuple(center(x + y, modulus) for x, y in zip(a.parts, b.parts))
        return replace(a, parts=parts)

    def _rescale(self, ct: Ciphertext, parts: tuple[np.ndarray, ...], scale: float) -> Ciphertext:
        q0, q1, _ = moduli(ct.params)
        rescaled = tuple(center(_round_div(p, q1), q0) for p in parts)
        return replace(ct, parts=rescaled, level=ct.level - 1, scale=scale)

    def plain_mul(self, ct: Ciphertext, multiplier: float | np.ndarray) -> Ciphertext:
        _, q1, _ = moduli(ct.params)
        if isinstance(multiplier, np.ndarray):
            plain = encode(multiplier, float(q1), ct.params.ring_degree)
            parts = tuple(negacyclic_mul(p, plain) for p in ct.parts)
        else:
            constant = int(round(multiplier * q1))
            parts = tuple(p * constant for p in ct.parts)
        return self._rescale(ct, parts, ct.scale)

    def square(self, key: KeyMaterial, ct: Ciphertext) -> Ciphertext:
        q0, q1, special = moduli(ct.params)
        q_top = q0 * q1
        big = special * q_top
        c0, c1 = ct.parts
        d0 = center(negacyclic_mul(c0, c0), q_top)
        d1 = center(2 * negacyclic_mul(c0, c1), q_top)
        d2 = center(negacyclic_mul(c1, c1), q_top)
        b2, a2 = key.eval_key
        k0 = _round_div(center(negacyclic_mul(d2, b2), big), special)
        k1 = _round_div(center(negacyclic_mul(d2, a2), big), special)
        parts = (center(d0 + k0, q_top), center(d1 + k1, q_top))
        return self._rescale(ct, parts, ct.scale * ct.scale / q1)
