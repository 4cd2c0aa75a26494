"""Binary wire format for ciphertexts, keys and chunked encrypted vectors.

Every blob starts with the magic ``LFL``, a version byte and a kind byte. Integers are
little-endian. Lattice polynomials are written coefficient by coefficient as signed
two's-complement integers of a fixed number of 64-bit limbs; ExactMock carriers are
written as float64. Encryption parameters travel with every ciphertext and key, so a
decoded blob is self-describing.
"""

from __future__ import annotations

import struct
from typing import Any

import numpy as np

from ledgerfl.core.errors import FormatError
from ledgerfl.crypto.base import (
    Ciphertext,
    EncryptedVector,
    HeParams,
    KeyMaterial,
    KeyScope,
    Layout,
)

MAGIC = b"LFL"
VERSION = 1

KIND_CIPHERTEXT = 1
KIND_KEY = 2
KIND_VECTOR = 3

_PART_INT = 0
_PART_FLOAT = 1

_PARAMS_FORMAT = "<IHHHddd"
_LAYOUTS = list(Layout)
_SCOPES = list(KeyScope)


class _Writer:
    def __init__(self) -> None:
        self._chunks: list[bytes] = []

    def pack(self, fmt: str, *values: Any) -> None:
        self._chunks.append(struct.pack(fmt, *values))

    def raw(self, data: bytes) -> None:
        self._chunks.append(data)

    def text(self, value: str) -> None:
        data = value.encode("ascii")
        self.pack("<B", len(data))
        self.raw(data)

    def getvalue(self) -> bytes:
        return b"".join(self._chunks)


class _Reader:
    def __init__(self, data: bytes) -> None:
        self.data = data
        self.offset = 0

    def take(self, size: int) -> bytes:
        if size < 0 or self.offset + size > len(self.data):
            raise FormatError("truncated blob", offset=self.offset)
        chunk = self.data[self.offset : self.offset + size]
        self.offset += size
        return chunk

    def unpack(self, fmt: str) -> tuple[Any, ...]:
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def text(self) -> str:
        (size,) = self.unpack("<B")
        start = self.offset
        try:
            return self.take(size).decode("ascii")
        except UnicodeDecodeError as exc:
            raise FormatError("non-ascii text field", offset=start) from exc

    def enum(self, members: list[Any], what: str) -> Any:
        start = self.offset
        (index,) = self.unpack("<B")
        if index >= len(members):
            raise FormatError(f"unknown {what} tag {index}", offset=start)
        return members[index]

    def finish(self) -> None:
        if self.offset != len(self.data):
            raise FormatError("trailing bytes after blob", offset=self.offset)


def _write_header(writer: _Writer, kind: int) -> None:
    writer.raw(MAGIC)
    writer.pack("<BB", VERSION, kind)


def _read_header(reader: _Reader, kind: int) -> None:
    if reader.take(len(MAGIC)) != MAGIC:
        raise FormatError("bad magic", offset=0)
    version, found = reader.unpack("<BB")
    if version != VERSION:
        raise FormatError(f"unsupported version {version}", offset=len(MAGIC))
    if found != kind:
        raise FormatError(f"expected blob kind {kind}, found {found}", offset=len(MAGIC) + 1)


def _write_params(writer: _Writer, params: HeParams) -> None:
    writer.pack(
        _PARAMS_FORMAT,
        params.ring_degree,
        params.scale_bits,
        params.base_bits,
        params.special_bits,
        params.noise_std,
        params.plaintext_bound,
        params.max_magnitude,
    )


def _read_params(reader: _Reader) -> HeParams:
    start = reader.offset
    fields = reader.unpack(_PARAMS_FORMAT)
    try:
        return HeParams(*fields)
    except Exception as exc:
        raise FormatError(f"invalid encryption parameters: {exc}", offset=start) from exc


def _write_part(writer: _Writer, part: np.ndarray) -> None:
    if part.dtype == object:
        bits = max((abs(int(x)).bit_length() for x in part), default=0)
        limbs = bits // 64 + 1
        writer.pack("<BIH", _PART_INT, part.size, limbs)
        width = 8 * limbs
        writer.raw(b"".join(int(x).to_bytes(width, "little", signed=True) for x in part))
    else:
        writer.pack("<BIH", _PART_FLOAT, part.size, 0)
        writer.raw(np.asarray(part, dtype="<f8").tobytes())


def _read_part(reader: _Reader) -> np.ndarray:
    start = reader.offset
    tag, size, limbs = reader.unpack("<BIH")
    if tag == _PART_FLOAT:
        return np.frombuffer(reader.take(8 * size), dtype="<f8").astype(np.float64)
    if tag != _PART_INT or limbs == 0:
        raise FormatError(f"bad polynomial header (tag {tag}, limbs {limbs})", offset=start)
    width = 8 * limbs
    data = reader.take(width * size)
    coeffs = [
        int.from_bytes(data[i : i + width], "little", signed=True)
        for i in range(0, len(data), width)
    ]
    out = np.empty(size, dtype=object)
    out[:] = coeffs
    return out


def _write_parts(writer: _Writer, parts: tuple[np.ndarray, ...]) -> None:
    writer.pack("<B", len(parts))
    for part in parts:
        _write_part(writer, part)


def _read_parts(reader: _Reader) -> tuple[np.ndarray, ...]:
    (count,) = reader.unpack("<B")
    return tuple(_read_part(reader) for _ in range(count))


def _write_ciphertext(writer: _Writer, ct: Ciphertext) -> None:
    _write_params(writer, ct.params)
    writer.text(ct.backend)
    writer.pack("<BdI", ct.level, ct.scale, ct.length)
    writer.pack("<BB", _LAYOUTS.index(ct.layout), _SCOPES.index(ct.scope))
    _write_parts(writer, ct.parts)


def _read_ciphertext(reader: _Reader) -> Ciphertext:
    params = _read_params(reader)
    backend = reader.text()
    start = reader.offset
    level, scale, length = reader.unpack("<BdI")
    layout = reader.enum(_LAYOUTS, "layout")
    scope = reader.enum(_SCOPES, "scope")
    parts = _read_parts(reader)
    try:
        return Ciphertext(backend, params, parts, level, scale, length, layout, scope)
    except Exception as exc:
        raise FormatError(f"invalid ciphertext header: {exc}", offset=start) from exc


def serialize_ciphertext(ct: Ciphertext) -> bytes:
    writer = _Writer()
    _write_header(writer, KIND_CIPHERTEXT)
    _write_ciphertext(writer, ct)
    return writer.getvalue()


def deserialize_ciphertext(data: bytes) -> Ciphertext:
    """Decode a ciphertext blob.

    Raises:
        FormatError: On a bad header, truncation or trailing bytes, with the byte offset.
    """
    reader = _Reader(data)
    _read_header(reader, KIND_CIPHERTEXT)
    ct = _read_ciphertext(reader)
    reader.finish()
    return ct


def serialize_key(key: KeyMaterial, include_secret: bool = False) -> bytes:
    """Encode key material; the secret key is left out unless asked for."""
    writer = _Writer()
    _write_header(writer, KIND_KEY)
    _write_params(writer, key.params)
    writer.text(key.backend)
    writer.text(key.key_id)
    writer.pack("<B", _SCOPES.index(key.scope))
    _write_parts(writer, key.public_key)
    _write_parts(writer, key.eval_key)
    secret = key.secret_key if include_secret else None
    writer.pack("<B", 0 if secret is None else 1)
    if secret is not None:
        _write_part(writer, secret)
    return writer.getvalue()


def deserialize_key(data: bytes) -> KeyMaterial:
    reader = _Reader(data)
    _read_header(reader, KIND_KEY)
    params = _read_params(reader)
    backend = reader.text()
    key_id = reader.text()
    scope = reader.enum(_SCOPES, "scope")
    public = _read_parts(reader)
    evaluation = _read_parts(reader)
    (has_secret,) = reader.unpack("<B")
    secret = _read_part(reader) if has_secret else None
    reader.finish()
    return KeyMaterial(backend, params, public, secret, evaluation, scope, key_id)


def serialize_vector(ev: EncryptedVector) -> bytes:
    """Encode a chunked vector: total length, chunk count, then length-prefixed chunks."""
    writer = _Writer()
    _write_header(writer, KIND_VECTOR)
    writer.pack("<II", ev.length, len(ev.chunks))
    for chunk in ev.chunks:
        blob = serialize_ciphertext(chunk)
        writer.pack("<I", len(blob))
        writer.raw(blob)
    return writer.getvalue()


def deserialize_vector(data: bytes) -> EncryptedVector:
    reader = _Reader(data)
    _read_header(reader, KIND_VECTOR)
    length, count = reader.unpack("<II")
    chunks = []
    for _ in range(count):
        (size,) = reader.unpack("<I")
        start = reader.offset
        blob = reader.take(size)
        try:
            chunks.append(deserialize_ciphertext(blob))
        except FormatError as exc:
            inner = exc.offset or 0
            raise FormatError(f"bad chunk: {exc.args[0]}", offset=start + inner) from exc
    reader.finish()
    if not chunks or sum(c.length for c in chunks) != length:
        raise FormatError("chunk lengths do not add up to the vector length", offset=len(MAGIC) + 2)
    return EncryptedVector(tuple(chunks), length)
