"""Cosine-similarity poisoning gate, strike accounting and validator vote tally.

The gate statistic θ is the cosine between an enterprise's update and the prior-round
global parameters. Updates with φ1 ≤ θ ≤ φ2 are accepted; anything else is ignored and
earns a strike, and an enterprise reaching the strike limit is removed for good.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Sequence

import numpy as np

from ledgerfl.core.compress import EncryptedUpdate
from ledgerfl.core.errors import DomainError, RegistryError
from ledgerfl.core.models import ParamVector
from ledgerfl.crypto.base import Ciphertext, KeyMaterial, decrypt

logger = logging.getLogger(__name__)


class Decision(Enum):
    """Gate outcome for one update."""

    ACCEPT = "accept"
    IGNORE = "ignore"
    DISCARD = "discard"


class VoteOutcome(Enum):
    """Tallied validator decision."""

    BENIGN = "benign"
    POISONED = "poisoned"


@dataclass(frozen=True)
class GateConfig:
    """Similarity thresholds and the strike limit."""

    phi1: float = -0.7
    phi2: float = 0.7
    strike_limit: int = 5

    def __post_init__(self) -> None:
        if not -1.0 <= self.phi1 < self.phi2 <= 1.0:
            raise DomainError(
                f"thresholds must satisfy -1 <= phi1 < phi2 <= 1, got ({self.phi1}, {self.phi2})"
            )
        if self.strike_limit < 1:
            raise DomainError("strike limit must be at least 1")


@dataclass(frozen=True)
class Verdict:
    enterprise_id: int
    theta: float
    decision: Decision

    def to_dict(self) -> dict[str, object]:
        """Serialize to dictionary."""
        return {
            "enterprise_id": self.enterprise_id,
            "theta": self.theta,
            "decision": self.decision.value,
        }


@dataclass(frozen=True)
class StrikeBook:
    """Per-enterprise strike counters χ and the set of removed enterprises.

    Instances are immutable; every update returns a new book.
    """

    strikes: dict[int, int] = field(default_factory=dict)
    removed: frozenset[int] = frozenset()

    @classmethod
    def for_enterprises(cls, ids: Iterable[int]) -> StrikeBook:
        return cls({int(i): 0 for i in ids})

    def __contains__(self, enterprise_id: object) -> bool:
        return enterprise_id in self.strikes

    def strikes_of(self, enterprise_id: int) -> int:
        try:
            return self.strikes[enterprise_id]
        except KeyError as exc:
            raise RegistryError(f"unknown enterprise {enterprise_id}") from exc

    def is_removed(self, enterprise_id: int) -> bool:
        return enterprise_id in self.removed

    def with_strike(self, enterprise_id: int, limit: int) -> StrikeBook:
        count = self.strikes_of(enterprise_id) + 1
        strikes = {**self.strikes, enterprise_id: count}
        removed = self.removed | {enterprise_id} if count >= limit else self.removed
        return StrikeBook(strikes, frozenset(removed))


def cosine_similarity(a: Sequence[float] | np.ndarray, b: Sequence[float] | np.ndarray) -> float:
    """Cosine of the angle between two vectors, clamped to [-1, 1].

    Raises:
        DomainError: If either vector is zero or the lengths differ.
    """
    x = np.asarray(a, dtype=np.float64).ravel()
    y = np.asarray(b, dtype=np.float64).ravel()
    if x.size != y.size:
        raise DomainError(f"vector lengths differ: {x.size} vs {y.size}")
    nx, ny = np.linalg.norm(x), np.linalg.norm(y)
    if nx == 0.0 or ny == 0.0:
        raise DomainError("cosine similarity is undefined for a zero vector")
    return float(np.clip((x @ y) / (nx * ny), -1.0, 1.0))


@dataclass(frozen=True, eq=False)
class AuditStatistics:
    """Encrypted ⟨update, reference⟩ and ‖update‖², plus the public reference norm."""

    enterprise_id: int
    dot: Ciphertext
    norm_squared: Ciphertext
    reference_norm: float


def audit_statistics(
    eu: EncryptedUpdate, prev_global: ParamVector, evaluation_key: KeyMaterial
) -> AuditStatistics:
    """Homomorphic statistics for the gate; needs only public key material."""
    reference = prev_global.values
    reference_norm = float(np.linalg.norm(reference))
    if reference_norm == 0.0:
        raise DomainError("the prior global model is zero; cosine similarity is undefined")
    return AuditStatistics(
        enterprise_id=eu.enterprise_id,
        dot=eu.enc_values.plain_dot(reference),
        norm_squared=eu.enc_values.sum_squares(evaluation_key),
        reference_norm=reference_norm,
    )


def similarity_from_statistics(stats: AuditStatistics, audit_key: KeyMaterial) -> float:
    """Decrypt the audit statistics and form θ.

    Raises:
        PolicyError: If ``audit_key`` is not an audit-scoped secret key.
        DomainError: If the update decrypts to a zero vector.
    """
    dot = float(decrypt(audit_key, stats.dot)[0])
    norm_squared = float(decrypt(audit_key, stats.norm_squared)[0])
    if norm_squared <= 0.0:
        raise DomainError(f"update of enterprise {stats.enterprise_id} is zero")
    theta = dot / (np.sqrt(norm_squared) * stats.reference_norm)
    return float(np.clip(theta, -1.0, 1.0))


def audit_similarity(
    eu: EncryptedUpdate, prev_global: ParamVector, audit_key: KeyMaterial
) -> float:
    """θ between an encrypted update and the public prior global, read with the audit key."""
    return similarity_from_statistics(audit_statistics(eu, prev_global, audit_key), audit_key)


def gate(
    theta: float, cfg: GateConfig, book: StrikeBook, enterprise_id: int
) -> tuple[Verdict, StrikeBook]:
    """Accept, ignore or discard one update.

    Returns:
        The verdict and the (possibly) updated strike book; ``book`` itself is untouched.

    Raises:
        RegistryError: If ``enterprise_id`` is not in the book.
        DomainError: If θ lies outside [-1, 1].
    """
    if enterprise_id not in book:
        raise RegistryError(f"unknown enterprise {enterprise_id}")
    if not -1.0 <= theta <= 1.0:
        raise DomainError(f"θ={theta} outside [-1, 1]")
    if book.is_removed(enterprise_id):
        return Verdict(enterprise_id, theta, Decision.DISCARD), book
    if cfg.phi1 <= theta <= cfg.phi2:
        return Verdict(enterprise_id, theta, Decision.ACCEPT), book
    updated = book.with_strike(enterprise_id, cfg.strike_limit)
    if updated.is_removed(enterprise_id):
        logger.info("enterprise %d removed after %d strikes", enterprise_id, cfg.strike_limit)
        return Verdict(enterprise_id, theta, Decision.DISCARD), updated
    return Verdict(enterprise_id, theta, Decision.IGNORE), updated


def tally_votes(votes: Sequence[Verdict]) -> VoteOutcome:
    """Strict majority of Accept votes is benign; ties count as poisoned.

    Raises:
        DomainError: If there are no votes.
    """
    if not votes:
        raise DomainError("cannot tally an empty vote set")
    accepts = sum(1 for v in votes if v.decision is Decision.ACCEPT)
    return VoteOutcome.BENIGN if 2 * accepts > len(votes) else VoteOutcome.POISONED


def commit_outcome(
    theta: float,
    outcome: VoteOutcome,
    cfg: GateConfig,
    book: StrikeBook,
    enterprise_id: int,
) -> tuple[Verdict, StrikeBook]:
    """Turn a tallied vote into the recorded verdict, striking only poisoned updates."""
    if enterprise_id not in book:
        raise RegistryError(f"unknown enterprise {enterprise_id}")
    if book.is_removed(enterprise_id):
        return Verdict(enterprise_id, theta, Decision.DISCARD), book
    if outcome is VoteOutcome.BENIGN:
        return Verdict(enterprise_id, theta, Decision.ACCEPT), book
    updated = book.with_strike(enterprise_id, cfg.strike_limit)
    decision = Decision.DISCARD if updated.is_removed(enterprise_id) else Decision.IGNORE
    return Verdict(enterprise_id, theta, decision), updated
