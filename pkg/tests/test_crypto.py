"""Unit tests for the homomorphic encryption layer."""

from __future__ import annotations

import numpy as np
import numpy.testing as npt
import pytest

from ledgerfl.core.errors import (
    CapacityError,
    CompatibilityError,
    DomainError,
    LevelError,
    ParameterError,
    PolicyError,
)
from ledgerfl.crypto.base import (
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
from ledgerfl.crypto.lattice import is_prime, negacyclic_mul, next_prime

# Lattice results carry encoding noise well below this bound
ATOL = 1e-4


class TestHeParams:
    """Tests for HeParams."""

    def test_slots_are_half_the_ring_degree(self) -> None:
        """Test N/2 slots."""
        assert HeParams(ring_degree=2048).slots == 1024

    def test_unsupported_ring_degree_raises(self) -> None:
        """Test that only the supported ring degrees are accepted."""
        with pytest.raises(ParameterError):
            HeParams(ring_degree=512)

    def test_unknown_backend_raises(self) -> None:
        """Test that an unknown backend name raises ParameterError."""
        with pytest.raises(ParameterError):
            get_backend("paillier")


class TestEncryptDecrypt:
    """Tests for encrypt and decrypt on both backends."""

    def test_roundtrip(self, any_key: KeyMaterial) -> None:
        """Test that decrypt(encrypt(v)) recovers v."""
        values = np.array([0.5, -1.25, 3.0, 0.0, 7.5])
        ct = encrypt(any_key, values, seed=1)
        assert ct.level == 1
        npt.assert_allclose(decrypt(any_key, ct), values, atol=ATOL)

    def test_public_view_cannot_decrypt(self, any_key: KeyMaterial) -> None:
        """Test that a key without its secret raises PolicyError."""
        ct = encrypt(any_key, [1.0, 2.0], seed=1)
        with pytest.raises(PolicyError):
            decrypt(any_key.public_view(), ct)

    def test_scope_mismatch_raises(self, any_key: KeyMaterial) -> None:
        """Test that the audit scope cannot read aggregate ciphertexts."""
        ct = encrypt(any_key, [1.0, 2.0], seed=1)
        with pytest.raises(PolicyError):
            decrypt(any_key.with_scope(KeyScope.AUDIT), ct)

    def test_too_long_raises(self, exact_key: KeyMaterial) -> None:
        """Test that vectors beyond the slot count raise CapacityError."""
        with pytest.raises(CapacityError):
            encrypt(exact_key, np.zeros(exact_key.params.slots + 1))

    @pytest.mark.parametrize("bad", [np.nan, np.inf, 5000.0])
    def test_invalid_values_raise(self, exact_key: KeyMaterial, bad: float) -> None:
        """Test that non-finite or oversized entries raise DomainError."""
        with pytest.raises(DomainError):
            encrypt(exact_key, [1.0, bad])

    def test_lattice_ciphertexts_hide_the_values(self, lattice_key: KeyMaterial) -> None:
        """Test that two encryptions of the same vector differ."""
        a = encrypt(lattice_key, [1.0, 2.0], seed=1)
        b = encrypt(lattice_key, [1.0, 2.0], seed=2)
        assert not np.array_equal(a.parts[0], b.parts[0])

    def test_keygen_is_deterministic(self) -> None:
        """Test that the same seed gives the same key id."""
        params = HeParams()
        assert keygen(params, 4, "exact").key_id == keygen(params, 4, "exact").key_id
        assert keygen(params, 4, "exact").key_id != keygen(params, 5, "exact").key_id


class TestHomomorphicOps:
    """Tests for add, plain_mul, plain_dot and sum_squares."""

    def test_add(self, any_key: KeyMaterial) -> None:
        """Test Dec(a ⊕ b) = a + b."""
        a = np.array([1.0, -2.0, 0.25])
        b = np.array([0.5, 4.0, -0.75])
        total = add(encrypt(any_key, a, seed=1), encrypt(any_key, b, seed=2))
        npt.assert_allclose(decrypt(any_key, total), a + b, atol=ATOL)

    def test_plain_mul_scalar_consumes_a_level(self, any_key: KeyMaterial) -> None:
        """Test scalar multiplication and the level it costs."""
        ct = plain_mul(encrypt(any_key, [2.0, -3.0], seed=1), 0.25)
        assert ct.level == 0
        npt.assert_allclose(decrypt(any_key, ct), [0.5, -0.75], atol=ATOL)

    def test_plain_mul_vector(self, any_key: KeyMaterial) -> None:
        """Test slotwise multiplication by a plaintext vector."""
        ct = plain_mul(encrypt(any_key, [1.0, 2.0, 3.0], seed=1), [2.0, 0.5, -1.0])
        npt.assert_allclose(decrypt(any_key, ct), [2.0, 1.0, -3.0], atol=ATOL)

    def test_plain_mul_at_level_zero_raises(self, exact_key: KeyMaterial) -> None:
        """Test that a second multiplication raises LevelError."""
        ct = plain_mul(encrypt(exact_key, [1.0]), 2.0)
        with pytest.raises(LevelError):
            plain_mul(ct, 2.0)

    def test_add_across_levels_raises(self, exact_key: KeyMaterial) -> None:
        """Test that ciphertexts at different levels cannot be added."""
        fresh = encrypt(exact_key, [1.0])
        with pytest.raises(CompatibilityError):
            add(fresh, plain_mul(fresh, 1.0))

    def test_add_across_lengths_raises(self, exact_key: KeyMaterial) -> None:
        """Test that ciphertexts of different lengths cannot be added."""
        with pytest.raises(CompatibilityError):
            add(encrypt(exact_key, [1.0]), encrypt(exact_key, [1.0, 2.0]))

    def test_plain_dot_is_audit_readable(self, any_key: KeyMaterial) -> None:
        """Test the encrypted inner product and its audit scope."""
        ct = plain_dot(encrypt(any_key, [1.0, 2.0, 3.0], seed=1), [0.5, -1.0, 2.0])
        assert ct.layout is Layout.SUM
        assert ct.scope is KeyScope.AUDIT
        result = decrypt(any_key.with_scope(KeyScope.AUDIT), ct)
        npt.assert_allclose(result, [4.5], atol=ATOL)
        with pytest.raises(PolicyError):
            decrypt(any_key, ct)

    def test_sum_squares(self, any_key: KeyMaterial) -> None:
        """Test the encrypted squared norm."""
        values = np.array([0.5, -1.5, 1.0, 0.25])
        ct = sum_squares(encrypt(any_key, values, seed=3), any_key)
        result = decrypt(any_key.with_scope(KeyScope.AUDIT), ct)
        npt.assert_allclose(result, [np.sum(values**2)], atol=1e-3)


class TestEncryptedVector:
    """Tests for chunked vector encryption."""

    def test_roundtrip_across_chunks(self, any_key: KeyMaterial) -> None:
        """Test that a vector longer than the slot count round-trips."""
        values = np.linspace(-2.0, 2.0, any_key.params.slots + 37)
        ev = encrypt_vector(any_key, values, seed=1)
        assert len(ev.chunks) == 2
        npt.assert_allclose(decrypt_vector(any_key, ev), values, atol=ATOL)

    def test_add_and_scale(self, exact_key: KeyMaterial) -> None:
        """Test vector addition followed by a scalar weight."""
        a = np.arange(600, dtype=float) / 100
        b = np.ones(600)
        ev = encrypt_vector(exact_key, a).add(encrypt_vector(exact_key, b)).plain_mul(0.5)
        npt.assert_allclose(decrypt_vector(exact_key, ev), 0.5 * (a + b))

    def test_dot_and_norm_over_chunks(self, exact_key: KeyMaterial) -> None:
        """Test the reductions over a two-chunk vector."""
        rng = np.random.default_rng(0)
        values = rng.normal(size=700)
        other = rng.normal(size=700)
        ev = encrypt_vector(exact_key, values)
        audit = exact_key.with_scope(KeyScope.AUDIT)
        assert decrypt(audit, ev.plain_dot(other))[0] == pytest.approx(values @ other)
        assert decrypt(audit, ev.sum_squares(exact_key))[0] == pytest.approx(values @ values)

    def test_empty_vector_raises(self, exact_key: KeyMaterial) -> None:
        """Test that an empty vector raises DomainError."""
        with pytest.raises(DomainError):
            encrypt_vector(exact_key, [])

    def test_mismatched_chunking_raises(self, exact_key: KeyMaterial) -> None:
        """Test that differently sized vectors cannot be added."""
        with pytest.raises(CompatibilityError):
            encrypt_vector(exact_key, np.ones(600)).add(encrypt_vector(exact_key, np.ones(10)))


class TestLatticeArithmetic:
    """Tests for the lattice backend's integer helpers."""

    @pytest.mark.parametrize("n, expected", [(2, True), (97, True), (561, False), (1, False)])
    def test_is_prime(self, n: int, expected: bool) -> None:
        """Test Miller-Rabin on primes and a Carmichael number."""
        assert is_prime(n) is expected

    def test_next_prime(self) -> None:
        """Test that next_prime skips composites."""
        assert next_prime(2**10) == 1031

    def test_negacyclic_wraps_with_sign(self) -> None:
        """Test X^(N-1) · X = -1 modulo X^N + 1."""
        n = 8
        a = np.zeros(n, dtype=object)
        b = np.zeros(n, dtype=object)
        a[n - 1] = 1
        b[1] = 1
        product = negacyclic_mul(a, b)
        expected = np.zeros(n, dtype=object)
        expected[0] = -1
        assert list(product) == list(expected)

    def test_negacyclic_matches_schoolbook(self) -> None:
        """Test the CRT product against a direct computation."""
        rng = np.random.default_rng(1)
        n = 16
        a = rng.integers(-(2**40), 2**40, size=n).astype(object)
        b = rng.integers(-(2**40), 2**40, size=n).astype(object)
        expected = [0] * n
        for i in range(n):
            for j in range(n):
                k = i + j
                if k < n:
                    expected[k] += a[i] * b[j]
                else:
                    expected[k - n] -= a[i] * b[j]
        assert list(negacyclic_mul(a, b)) == expected


@pytest.mark.slow
class TestHomomorphicContract:
    """Error bounds of every operation over 1000 random vectors."""

    def test_error_bounds(self, any_key: KeyMaterial) -> None:
        """Test roundtrip, add and plain_mul against plaintext arithmetic."""
        bound = 1e-12 if any_key.backend == "exact" else 1e-3
        rng = np.random.default_rng(2024)
        worst = 0.0
        for i in range(1000):
            a = rng.uniform(-4.0, 4.0, size=8)
            b = rng.uniform(-4.0, 4.0, size=8)
            scalar = float(rng.uniform(-1.0, 1.0))
            weights = rng.uniform(-1.0, 1.0, size=8)
            ct_a = encrypt(any_key, a, seed=2 * i)
            ct_b = encrypt(any_key, b, seed=2 * i + 1)
            errors = [
                decrypt(any_key, ct_a) - a,
                decrypt(any_key, add(ct_a, ct_b)) - (a + b),
                decrypt(any_key, plain_mul(ct_a, scalar)) - a * scalar,
                decrypt(any_key, plain_mul(ct_b, weights)) - b * weights,
            ]
            worst = max(worst, max(float(np.max(np.abs(e))) for e in errors))
        assert worst <= bound
