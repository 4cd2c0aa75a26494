"""Unit tests for the ciphertext and key wire format."""

from __future__ import annotations

import numpy as np
import numpy.testing as npt
import pytest

from ledgerfl.core.errors import FormatError
from ledgerfl.crypto.base import (
    KeyMaterial,
    KeyScope,
    decrypt,
    decrypt_vector,
    encrypt,
    encrypt_vector,
    plain_dot,
)
from ledgerfl.crypto.codec import (
    MAGIC,
    deserialize_ciphertext,
    deserialize_key,
    deserialize_vector,
    serialize_ciphertext,
    serialize_key,
    serialize_vector,
)


class TestCiphertextCodec:
    """Tests for ciphertext (de)serialization."""

    def test_decrypts_after_roundtrip(self, any_key: KeyMaterial) -> None:
        """Test that a decoded ciphertext still decrypts to the plaintext."""
        values = np.array([1.5, -0.5, 2.0])
        blob = serialize_ciphertext(encrypt(any_key, values, seed=1))
        assert blob.startswith(MAGIC)
        npt.assert_allclose(decrypt(any_key, deserialize_ciphertext(blob)), values, atol=1e-4)

    def test_keeps_layout_and_scope(self, exact_key: KeyMaterial) -> None:
        """Test that audit ciphertexts keep their metadata."""
        ct = plain_dot(encrypt(exact_key, [1.0, 2.0]), [3.0, 4.0])
        decoded = deserialize_ciphertext(serialize_ciphertext(ct))
        assert decoded.layout is ct.layout
        assert decoded.scope is KeyScope.AUDIT
        assert decoded.level == 0

    def test_truncated_blob_reports_offset(self, exact_key: KeyMaterial) -> None:
        """Test that truncation raises FormatError with a byte offset."""
        blob = serialize_ciphertext(encrypt(exact_key, [1.0, 2.0]))
        with pytest.raises(FormatError) as exc_info:
            deserialize_ciphertext(blob[:-5])
        assert exc_info.value.offset is not None

    def test_bad_magic_raises(self, exact_key: KeyMaterial) -> None:
        """Test that a foreign blob is rejected at offset 0."""
        blob = serialize_ciphertext(encrypt(exact_key, [1.0]))
        with pytest.raises(FormatError) as exc_info:
            deserialize_ciphertext(b"XYZ" + blob[3:])
        assert exc_info.value.offset == 0

    def test_trailing_bytes_raise(self, exact_key: KeyMaterial) -> None:
        """Test that extra bytes after the blob are rejected."""
        blob = serialize_ciphertext(encrypt(exact_key, [1.0]))
        with pytest.raises(FormatError):
            deserialize_ciphertext(blob + b"\x00")

    def test_wrong_kind_raises(self, exact_key: KeyMaterial) -> None:
        """Test that a key blob is not accepted as a ciphertext."""
        with pytest.raises(FormatError):
            deserialize_ciphertext(serialize_key(exact_key))


class TestKeyCodec:
    """Tests for key (de)serialization."""

    def test_secret_is_left_out_by_default(self, lattice_key: KeyMaterial) -> None:
        """Test that the published key has no secret."""
        decoded = deserialize_key(serialize_key(lattice_key))
        assert not decoded.has_secret
        assert decoded.key_id == lattice_key.key_id
        assert decoded.params == lattice_key.params

    def test_public_key_still_encrypts(self, lattice_key: KeyMaterial) -> None:
        """Test that a decoded public key produces decryptable ciphertexts."""
        public = deserialize_key(serialize_key(lattice_key))
        ct = encrypt(public, [0.75, -2.0], seed=4)
        npt.assert_allclose(decrypt(lattice_key, ct), [0.75, -2.0], atol=1e-4)

    def test_secret_roundtrip_on_request(self, lattice_key: KeyMaterial) -> None:
        """Test include_secret=True."""
        decoded = deserialize_key(serialize_key(lattice_key, include_secret=True))
        assert decoded.has_secret
        assert list(decoded.secret_key) == list(lattice_key.secret_key)


class TestVectorCodec:
    """Tests for chunked vector (de)serialization."""

    def test_roundtrip(self, exact_key: KeyMaterial) -> None:
        """Test that a multi-chunk vector survives encoding."""
        values = np.arange(700, dtype=float) / 7
        blob = serialize_vector(encrypt_vector(exact_key, values))
        decoded = deserialize_vector(blob)
        assert decoded.length == 700
        npt.assert_allclose(decrypt_vector(exact_key, decoded), values)

    def test_truncated_chunk_raises(self, exact_key: KeyMaterial) -> None:
        """Test that a cut inside a chunk raises FormatError."""
        blob = serialize_vector(encrypt_vector(exact_key, np.ones(10)))
        with pytest.raises(FormatError):
            deserialize_vector(blob[:-3])
