"""K-Medoids quantization of update vectors and their encrypted upload form.

An update of length d is summarised by K medoid values (psi) and one medoid index per
entry (upsilon). The client encrypts both vectors for the ledger record, and encrypts the
clipped, dequantized update once more for the aggregate scope; only the latter is ever
combined by the server.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from itertools import combinations
from math import comb

import numpy as np

from ledgerfl.core.errors import DomainError, SchemaError
from ledgerfl.core.models import ModelKind, ModelSchema, ParamVector
from ledgerfl.crypto.base import (
    EncryptedVector,
    KeyMaterial,
    KeyScope,
    Seed,
    decrypt_vector,
    encrypt_vector,
)

logger = logging.getLogger(__name__)

DEFAULT_MEDOIDS = 64
DEFAULT_MAX_ITER = 100
# Above this many distinct values the dense swap search is replaced by alternating
# assignment / weighted-median updates.
DENSE_SWAP_LIMIT = 512
EXHAUSTIVE_LIMIT = 256


@dataclass(frozen=True)
class KMedoidsResult:
    """Sorted medoids, per-entry assignment, total absolute cost and the cost trace."""

    medoids: np.ndarray
    assignment: np.ndarray
    cost: float
    history: tuple[float, ...] = field(default_factory=tuple)


def _weighted_cost(points: np.ndarray, weights: np.ndarray, medoids: np.ndarray) -> float:
    dist = np.abs(points[:, None] - medoids[None, :]).min(axis=1)
    return float(dist @ weights)


def _build(
    distances: np.ndarray, weights: np.ndarray, k: int, rng: np.random.Generator
) -> list[int]:
    """Greedy seeding: add the candidate with the largest cost reduction each time."""
    order = rng.permutation(distances.shape[0])
    first = order[np.argmin((distances @ weights)[order])]
    chosen = [int(first)]
    nearest = distances[first].copy()
    while len(chosen) < k:
        gains = np.maximum(nearest[None, :] - distances, 0.0) @ weights
        gains[chosen] = -np.inf
        pick = int(order[np.argmax(gains[order])])
        chosen.append(pick)
        nearest = np.minimum(nearest, distances[pick])
    return chosen


def _swap(
    distances: np.ndarray, weights: np.ndarray, chosen: list[int], max_iter: int
) -> tuple[list[int], list[float]]:
    """Steepest-descent swap search; returns the medoid indices and the cost per pass."""
    medoids = list(chosen)
    current = float(distances[medoids].min(axis=0) @ weights)
    history = [current]
    for _ in range(max_iter):
        best_cost, best_move = current, None
        for slot in range(len(medoids)):
            others = medoids[:slot] + medoids[slot + 1 :]
            without = (
                distances[others].min(axis=0) if others else np.full(distances.shape[0], np.inf)
            )
            costs = np.minimum(distances, without[None, :]) @ weights
            costs[medoids] = np.inf
            candidate = int(np.argmin(costs))
            if costs[candidate] < best_cost - 1e-12:
                best_cost, best_move = float(costs[candidate]), (slot, candidate)
        if best_move is None:
            break
        slot, candidate = best_move
        medoids[slot] = candidate
        current = best_cost
        history.append(current)
    return medoids, history


def _weighted_median(points: np.ndarray, weights: np.ndarray) -> float:
    cumulative = np.cumsum(weights)
    return float(points[np.searchsorted(cumulative, cumulative[-1] / 2.0)])


def _alternate(
    points: np.ndarray, weights: np.ndarray, k: int, max_iter: int
) -> tuple[np.ndarray, list[float]]:
    """Voronoi iteration on sorted 1-D points: segments then per-segment weighted medians."""
    cumulative = np.cumsum(weights)
    targets = (np.arange(k) + 0.5) / k * cumulative[-1]
    medoids = np.unique(points[np.searchsorted(cumulative, targets)])
    if medoids.size < k:
        spare = np.setdiff1d(points, medoids)[: k - medoids.size]
        medoids = np.sort(np.concatenate([medoids, spare]))
    history = [_weighted_cost(points, weights, medoids)]
    for _ in range(max_iter):
        bounds = np.searchsorted(points, (medoids[:-1] + medoids[1:]) / 2.0, side="right")
        segments = np.split(np.arange(points.size), bounds)
        updated = np.array(
            [
                _weighted_median(points[s], weights[s]) if s.size else medoids[i]
                for i, s in enumerate(segments)
            ]
        )
        updated = np.sort(updated)
        cost = _weighted_cost(points, weights, updated)
        if np.array_equal(updated, medoids) or cost >= history[-1] - 1e-12:
            break
        medoids = updated
        history.append(cost)
    return medoids, history


def _exhaustive(points: np.ndarray, weights: np.ndarray, k: int) -> tuple[np.ndarray, float]:
    best, best_cost = None, np.inf
    for subset in combinations(range(points.size), k):
        medoids = points[list(subset)]
        cost = _weighted_cost(points, weights, medoids)
        if cost < best_cost - 1e-12:
            best, best_cost = medoids, cost
    assert best is not None
    return best, best_cost


def assign(values: np.ndarray, medoids: np.ndarray) -> np.ndarray:
    """Nearest-medoid index per entry; ties go to the lower index."""
    return np.argmin(np.abs(values[:, None] - medoids[None, :]), axis=1)


def pam(
    values: np.ndarray | list[float], k: int, seed: int, max_iter: int = DEFAULT_MAX_ITER
) -> KMedoidsResult:
    """Partitioning Around Medoids over scalar entries.

    Equal entries are merged and weighted by multiplicity, so the search runs over distinct
    values. Small instances are additionally checked against every medoid subset.

    Raises:
        DomainError: If ``values`` is empty, ``k < 1`` or ``k`` exceeds the distinct count.
    """
    data = np.asarray(values, dtype=np.float64).ravel()
    if data.size == 0:
        raise DomainError("cannot cluster an empty vector")
    if not np.all(np.isfinite(data)):
        raise DomainError("cannot cluster non-finite values")
    points, counts = np.unique(data, return_counts=True)
    weights = counts.astype(np.float64)
    if k < 1 or k > points.size:
        raise DomainError(f"k={k} must lie in [1, {points.size}] (distinct values)")

    if points.size <= DENSE_SWAP_LIMIT:
        distances = np.abs(points[:, None] - points[None, :])
        seeds = _build(distances, weights, k, np.random.default_rng(seed))
        chosen, history = _swap(distances, weights, seeds, max_iter)
        medoids = np.sort(points[chosen])
    else:
        logger.debug("%d distinct values, using alternating medoid updates", points.size)
        medoids, history = _alternate(points, weights, k, max_iter)

    if comb(points.size, k) <= EXHAUSTIVE_LIMIT:
        optimum, optimum_cost = _exhaustive(points, weights, k)
        if optimum_cost < history[-1] - 1e-12:
            medoids = np.sort(optimum)
            history.append(optimum_cost)

    assignment = assign(data, medoids)
    cost = float(np.abs(data - medoids[assignment]).sum())
    return KMedoidsResult(medoids, assignment, cost, tuple(history))


def kmedoids(
    values: np.ndarray | list[float], k: int, seed: int, max_iter: int = DEFAULT_MAX_ITER
) -> tuple[np.ndarray, np.ndarray, float]:
    """(medoids, assignment, cost) with cost = Σ|P_i − medoid(P_i)|."""
    result = pam(values, k, seed, max_iter)
    return result.medoids, result.assignment, result.cost


@dataclass(eq=False)
class CompressedUpdate:
    """Medoid values psi and per-entry indices upsilon of one update."""

    psi: np.ndarray
    upsilon: np.ndarray
    length: int
    cost: float
    schema: ModelSchema

    def __post_init__(self) -> None:
        self.psi = np.asarray(self.psi, dtype=np.float64).ravel()
        self.upsilon = np.asarray(self.upsilon, dtype=np.int64).ravel()
        if self.upsilon.size != self.length:
            raise SchemaError(f"{self.upsilon.size} indices for length {self.length}")
        if self.psi.size > self.length:
            raise SchemaError("more medoids than entries")
        if self.upsilon.size and (self.upsilon.min() < 0 or self.upsilon.max() >= self.psi.size):
            raise SchemaError("medoid index out of range")

    @property
    def k(self) -> int:
        return int(self.psi.size)


def distinct_count(values: np.ndarray) -> int:
    return int(np.unique(values).size)


def quantize_gradient(
    grad: ParamVector, k: int, seed: int, max_iter: int = DEFAULT_MAX_ITER
) -> CompressedUpdate:
    """Quantize every entry of ``grad`` to one of ``k`` medoid values."""
    if len(grad) == 0:
        raise DomainError("cannot quantize an empty gradient")
    result = pam(grad.values, k, seed, max_iter)
    return CompressedUpdate(result.medoids, result.assignment, len(grad), result.cost, grad.schema)


def dequantize(cu: CompressedUpdate) -> ParamVector:
    return ParamVector(cu.psi[cu.upsilon], cu.schema)


def clip_update(values: np.ndarray, bound: float) -> np.ndarray:
    """Clip every coordinate to ``[-bound, bound]``."""
    clipped = np.clip(values, -bound, bound)
    changed = int(np.count_nonzero(clipped != values))
    if changed:
        logger.debug("clipped %d of %d update entries to ±%g", changed, values.size, bound)
    return clipped


@dataclass(frozen=True, eq=False)
class EncryptedUpdate:
    """One enterprise's upload for a round.

    ``enc_psi`` and ``enc_upsilon`` form the compressed ledger record; ``enc_values`` is the
    full dequantized update under the aggregate scope, the only part the server combines.
    """

    enc_psi: EncryptedVector
    enc_upsilon: EncryptedVector
    enc_values: EncryptedVector
    enterprise_id: int
    round: int
    model_type: ModelKind
    schema: ModelSchema

    def __post_init__(self) -> None:
        backends = {self.enc_psi.backend, self.enc_upsilon.backend, self.enc_values.backend}
        levels = {self.enc_psi.level, self.enc_upsilon.level, self.enc_values.level}
        if len(backends) != 1 or len(levels) != 1:
            raise SchemaError("update ciphertexts must share backend and level")


def encrypt_update(
    pk: KeyMaterial,
    cu: CompressedUpdate,
    enterprise_id: int,
    round_index: int,
    model_type: ModelKind,
    seed: Seed = None,
) -> EncryptedUpdate:
    """Encrypt psi, upsilon and the clipped dequantized update.

    Medoid values are clipped to the plaintext bound first, so the aggregate vector is
    exactly psi[upsilon] of the recorded pair.
    """
    rng = np.random.default_rng(seed) if not isinstance(seed, np.random.Generator) else seed
    psi = clip_update(cu.psi, pk.params.plaintext_bound)
    values = psi[cu.upsilon]
    return EncryptedUpdate(
        enc_psi=encrypt_vector(pk, psi, rng),
        enc_upsilon=encrypt_vector(pk, cu.upsilon.astype(np.float64), rng),
        enc_values=encrypt_vector(pk, values, rng, KeyScope.AGGREGATE),
        enterprise_id=enterprise_id,
        round=round_index,
        model_type=model_type,
        schema=cu.schema,
    )


def decrypt_update(sk: KeyMaterial, eu: EncryptedUpdate) -> CompressedUpdate:
    """Recover (psi, upsilon); indices are rounded to the nearest integer.

    The quantization cost is not transmitted, so it comes back as NaN.
    """
    psi = decrypt_vector(sk, eu.enc_psi)
    upsilon = np.rint(decrypt_vector(sk, eu.enc_upsilon)).astype(np.int64)
    upsilon = np.clip(upsilon, 0, psi.size - 1)
    return CompressedUpdate(psi, upsilon, eu.enc_upsilon.length, float("nan"), eu.schema)
