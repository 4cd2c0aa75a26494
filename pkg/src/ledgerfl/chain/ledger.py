"""Hash-chained consortium ledger.

Each block commits to its height, the previous block hash, the payload kind, the payload
bytes and the miner id through a SHA-256 digest over a canonical byte layout. The ledger
is written by the round orchestrator only; readers take immutable snapshots.
"""

from __future__ import annotations

import hashlib
import json
import logging
import struct
from dataclasses import dataclass
from enum import Enum
from typing import Any, Iterable, Mapping

from ledgerfl.core.errors import ChainVerificationError, DomainError, FormatError, RegistryError

logger = logging.getLogger(__name__)

GENESIS_PREV = "0" * 64
JSONL_FIELDS = ("height", "prev_hash", "kind", "miner", "hash", "payload_hex")


class PayloadKind(Enum):
    """What a block records."""

    GENESIS = "genesis"
    KEYS = "keys"
    GLOBAL_MODEL = "global_model"
    VERDICTS = "verdicts"
    REWARDS = "rewards"
    UPDATE = "update"


def _digest_bytes(value: Any, what: str) -> bytes:
    try:
        raw = bytes.fromhex(value)
    except (TypeError, ValueError) as exc:
        raise FormatError(f"{what} is not hex: {value!r}") from exc
    if len(raw) != 32:
        raise FormatError(f"{what} must be 32 bytes, got {len(raw)}")
    return raw


def _checked_digest(value: Any, what: str) -> str:
    _digest_bytes(value, what)
    return str(value)


def block_digest(height: int, prev_hash: str, kind: PayloadKind, payload: bytes, miner: int) -> str:
    """SHA-256 over height, previous hash, kind, length-prefixed payload and miner.

    Raises:
        FormatError: If ``prev_hash`` is not a 64-character hex digest.
    """
    digest = hashlib.sha256()
    digest.update(struct.pack(">Q", height))
    digest.update(_digest_bytes(prev_hash, "previous hash"))
    digest.update(kind.value.encode("ascii") + b"\x00")
    digest.update(struct.pack(">Q", len(payload)))
    digest.update(payload)
    digest.update(struct.pack(">q", miner))
    return digest.hexdigest()


def canonical_json(obj: Any) -> bytes:
    """Deterministic JSON encoding used for block payloads."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False).encode("utf-8")


@dataclass(frozen=True)
class Block:
    height: int
    prev_hash: str
    kind: PayloadKind
    payload: bytes
    miner: int
    hash: str

    def recompute_hash(self) -> str:
        return block_digest(self.height, self.prev_hash, self.kind, self.payload, self.miner)

    def payload_json(self) -> Any:
        """Decode a JSON payload.

        Raises:
            FormatError: If the payload is not UTF-8 JSON.
        """
        try:
            return json.loads(self.payload.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise FormatError(f"block {self.height} payload is not JSON") from exc

    def to_dict(self) -> dict[str, Any]:
        """Serialize to dictionary."""
        return {
            "height": self.height,
            "prev_hash": self.prev_hash,
            "kind": self.kind.value,
            "miner": self.miner,
            "hash": self.hash,
            "payload_hex": self.payload.hex(),
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> Block:
        """Deserialize from dictionary.

        Raises:
            FormatError: If a field is missing or malformed.
        """
        missing = [name for name in JSONL_FIELDS if name not in data]
        if missing:
            raise FormatError(f"ledger row is missing {', '.join(missing)}")
        try:
            return cls(
                height=int(data["height"]),
                prev_hash=_checked_digest(data["prev_hash"], "previous hash"),
                kind=PayloadKind(data["kind"]),
                payload=bytes.fromhex(data["payload_hex"]),
                miner=int(data["miner"]),
                hash=_checked_digest(data["hash"], "block hash"),
            )
        except (TypeError, ValueError) as exc:
            raise FormatError(f"malformed ledger row: {exc}") from exc


class Ledger:
    """Append-only block list."""

    def __init__(self, blocks: Iterable[Block] = ()) -> None:
        self._blocks: list[Block] = list(blocks)

    @classmethod
    def genesis(cls, config_digest: str, miner: int = 0) -> Ledger:
        ledger = cls()
        ledger.append(PayloadKind.GENESIS, canonical_json({"config": config_digest}), miner)
        return ledger

    @property
    def height(self) -> int:
        """Height of the last block, -1 for an empty ledger."""
        return len(self._blocks) - 1

    @property
    def head(self) -> Block | None:
        return self._blocks[-1] if self._blocks else None

    def __len__(self) -> int:
        return len(self._blocks)

    def __iter__(self):
        return iter(tuple(self._blocks))

    def __getitem__(self, height: int) -> Block:
        return self._blocks[height]

    def snapshot(self) -> tuple[Block, ...]:
        return tuple(self._blocks)

    def append(self, kind: PayloadKind, payload: bytes, miner: int) -> Block:
        head = self.head
        height = 0 if head is None else head.height + 1
        prev_hash = GENESIS_PREV if head is None else head.hash
        block = Block(
            height=height,
            prev_hash=prev_hash,
            kind=kind,
            payload=bytes(payload),
            miner=miner,
            hash=block_digest(height, prev_hash, kind, bytes(payload), miner),
        )
        self._blocks.append(block)
        logger.debug("block %d (%s) appended by miner %d", height, kind.value, miner)
        return block

    def blocks_of(self, kind: PayloadKind) -> list[Block]:
        return [b for b in self._blocks if b.kind is kind]


def append_block(
    ledger: Ledger,
    kind: PayloadKind,
    payload: bytes,
    miner: int,
    states: Mapping[int, Any] | None = None,
) -> Block:
    """Append a block mined by ``miner``.

    When ``states`` (enterprise id → state with a ``removed`` flag) is given, the miner must
    be registered and active.

    Raises:
        RegistryError: If the miner is not registered.
        DomainError: If the miner has been removed.
    """
    if states is not None:
        if miner not in states:
            raise RegistryError(f"miner {miner} is not registered")
        if getattr(states[miner], "removed", False):
            raise DomainError(f"miner {miner} has been removed")
    return ledger.append(kind, payload, miner)


def find_first_invalid(ledger: Ledger | Iterable[Block]) -> int | None:
    """Height of the first block whose hash, link or height is wrong; None if all hold."""
    prev_hash = GENESIS_PREV
    for expected, block in enumerate(ledger):
        if block.height != expected or block.prev_hash != prev_hash:
            return expected
        try:
            recomputed = block.recompute_hash()
        except FormatError:
            return expected
        if recomputed != block.hash:
            return expected
        prev_hash = block.hash
    return None


def verify_chain(ledger: Ledger | Iterable[Block]) -> bool:
    """Recompute every hash and link."""
    return find_first_invalid(ledger) is None


def ensure_valid(ledger: Ledger | Iterable[Block]) -> None:
    """Raise unless the chain verifies.

    Raises:
        ChainVerificationError: With the first bad height.
    """
    bad = find_first_invalid(ledger)
    if bad is not None:
        raise ChainVerificationError(bad)


def to_jsonl(ledger: Ledger | Iterable[Block]) -> str:
    """One JSON object per block, newline terminated."""
    return "".join(json.dumps(b.to_dict(), sort_keys=True) + "\n" for b in ledger)


def from_jsonl(text: str) -> Ledger:
    """Parse a JSON-lines dump; blank lines are skipped.

    Raises:
        FormatError: If a line is not JSON or lacks a field.
    """
    blocks = []
    for number, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            row = json.loads(line)
        except json.JSONDecodeError as exc:
            raise FormatError(f"ledger line {number} is not JSON") from exc
        if not isinstance(row, dict):
            raise FormatError(f"ledger line {number} is not an object")
        blocks.append(Block.from_dict(row))
    return Ledger(blocks)
