"""Similarity clustering, encrypted averaging and the baseline aggregators.

The clustered pipeline groups accepted updates by affinity propagation over their gate
statistics, averages each cluster under encryption and merges the cluster candidates
with stake weights. FedAvg, FedAdam, Krum and RFA are the comparison baselines.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from ledgerfl.core.errors import DomainError, RegistryError, SchemaError
from ledgerfl.core.models import ModelKind, ParamVector
from ledgerfl.core.numerics import OptimizerKind, OptimizerState, optimizer_step
from ledgerfl.crypto.base import EncryptedVector

logger = logging.getLogger(__name__)

AP_JITTER = 1e-13
WEISZFELD_EPS = 1e-10


@dataclass(frozen=True)
class ApConfig:
    """Affinity propagation settings; ``preference=None`` uses the median similarity."""

    damping: float = 0.5
    preference: float | None = None
    max_iter: int = 200
    window: int = 15

    def __post_init__(self) -> None:
        if not 0.5 <= self.damping < 1.0:
            raise DomainError(f"damping must lie in [0.5, 1), got {self.damping}")
        if self.max_iter < 1 or self.window < 1:
            raise DomainError("max_iter and window must be at least 1")


@dataclass(frozen=True)
class Cluster:
    exemplar: int
    members: tuple[int, ...]

    def __len__(self) -> int:
        return len(self.members)


@dataclass(frozen=True)
class ClusterList:
    """Clusters of accepted enterprise ids, per model type."""

    by_type: dict[ModelKind, tuple[Cluster, ...]] = field(default_factory=dict)

    def __iter__(self):
        for kind in sorted(self.by_type, key=lambda k: k.value):
            for cluster in self.by_type[kind]:
                yield kind, cluster

    @property
    def count(self) -> int:
        return sum(len(clusters) for clusters in self.by_type.values())

    def to_dict(self) -> dict[str, list[dict[str, object]]]:
        """Serialize to dictionary."""
        return {
            kind.value: [
                {"exemplar": c.exemplar, "members": list(c.members)} for c in clusters
            ]
            for kind, clusters in self.by_type.items()
        }


def _messages(
    similarity: np.ndarray, damping: float, max_iter: int, window: int
) -> tuple[np.ndarray, np.ndarray]:
    n = similarity.shape[0]
    idx = np.arange(n)
    responsibility = np.zeros((n, n))
    availability = np.zeros((n, n))
    last: tuple[int, ...] | None = None
    stable = 0
    for iteration in range(max_iter):
        scores = availability + similarity
        first = np.argmax(scores, axis=1)
        first_value = scores[idx, first]
        scores[idx, first] = -np.inf
        second_value = scores.max(axis=1)
        fresh = similarity - first_value[:, None]
        fresh[idx, first] = similarity[idx, first] - second_value
        responsibility = damping * responsibility + (1.0 - damping) * fresh

        positive = np.maximum(responsibility, 0.0)
        positive[idx, idx] = responsibility[idx, idx]
        fresh = positive.sum(axis=0)[None, :] - positive
        self_availability = np.diag(fresh).copy()
        fresh = np.minimum(fresh, 0.0)
        fresh[idx, idx] = self_availability
        availability = damping * availability + (1.0 - damping) * fresh

        exemplars = tuple(np.flatnonzero(np.diag(availability + responsibility) > 0))
        stable = stable + 1 if exemplars and exemplars == last else 0
        last = exemplars
        if stable >= window:
            logger.debug("affinity propagation converged after %d iterations", iteration + 1)
            break
    return responsibility, availability


def affinity_propagation(similarity: np.ndarray, cfg: ApConfig | None = None) -> np.ndarray:
    """Exemplar index for every point.

    The diagonal of ``similarity`` is replaced by the preference. A fixed-seed jitter breaks
    ties, so the result is deterministic; constant off-diagonal similarities yield a single
    cluster.

    Raises:
        DomainError: For an empty or non-square matrix.
    """
    cfg = cfg or ApConfig()
    s = np.array(similarity, dtype=np.float64)
    if s.ndim != 2 or s.shape[0] != s.shape[1]:
        raise DomainError(f"similarity must be square, got shape {s.shape}")
    n = s.shape[0]
    if n == 0:
        raise DomainError("cannot cluster zero points")
    if n == 1:
        return np.zeros(1, dtype=np.int64)
    off_diagonal = s[~np.eye(n, dtype=bool)]
    if np.ptp(off_diagonal) == 0.0:
        return np.zeros(n, dtype=np.int64)
    preference = float(np.median(off_diagonal)) if cfg.preference is None else cfg.preference
    np.fill_diagonal(s, preference)
    scale = max(1.0, float(np.abs(s).max()))
    s = s + AP_JITTER * scale * np.random.default_rng(0).random(s.shape)

    responsibility, availability = _messages(s, cfg.damping, cfg.max_iter, cfg.window)
    evidence = np.diag(availability + responsibility)
    exemplars = np.flatnonzero(evidence > 0)
    if exemplars.size == 0:
        exemplars = np.array([int(np.argmax(evidence))])
    labels = np.argmax(s[:, exemplars], axis=1)
    labels[exemplars] = np.arange(exemplars.size)
    return exemplars[labels]


def cluster_models(
    thetas: Mapping[int, float],
    tags: Mapping[int, ModelKind],
    cfg: ApConfig | None = None,
) -> ClusterList:
    """Partition accepted enterprises by model type, then by AP over their θ values.

    Raises:
        RegistryError: If a tagged enterprise has no θ.
    """
    by_type: dict[ModelKind, list[int]] = {}
    for enterprise_id in sorted(tags):
        if enterprise_id not in thetas:
            raise RegistryError(f"no similarity recorded for enterprise {enterprise_id}")
        by_type.setdefault(tags[enterprise_id], []).append(enterprise_id)

    result: dict[ModelKind, tuple[Cluster, ...]] = {}
    for kind, ids in by_type.items():
        values = np.array([thetas[i] for i in ids])
        similarity = -np.abs(values[:, None] - values[None, :])
        assignment = affinity_propagation(similarity, cfg)
        groups: dict[int, list[int]] = {}
        for position, exemplar in enumerate(assignment):
            groups.setdefault(int(exemplar), []).append(ids[position])
        clusters = [Cluster(ids[exemplar], tuple(members)) for exemplar, members in groups.items()]
        result[kind] = tuple(sorted(clusters, key=lambda c: c.members[0]))
    return ClusterList(result)


def encrypted_sum(updates: Sequence[EncryptedVector]) -> EncryptedVector:
    if not updates:
        raise DomainError("cannot aggregate an empty update set")
    total = updates[0]
    for update in updates[1:]:
        total = total.add(update)
    return total


def fedavg(updates: Sequence[EncryptedVector]) -> EncryptedVector:
    """plain_mul(Σ ct_i, 1/n).

    Raises:
        DomainError: For an empty update set.
        CompatibilityError: If the ciphertexts cannot be added.
    """
    return encrypted_sum(updates).plain_mul(1.0 / len(updates))


def stake_weights(stakes: Sequence[float]) -> np.ndarray:
    """Normalized weights; all-zero stakes fall back to uniform weights."""
    w = np.asarray(stakes, dtype=np.float64)
    if w.size == 0:
        raise DomainError("no weights to normalize")
    if np.any(w < 0):
        raise DomainError("stakes must be non-negative")
    total = w.sum()
    return np.full(w.size, 1.0 / w.size) if total == 0 else w / total


def merge_clusters(
    cluster_sums: Sequence[EncryptedVector], sizes: Sequence[int], stakes: Sequence[float]
) -> EncryptedVector:
    """Stake-weighted average of per-cluster means, in one multiplication level.

    Each cluster sum is scaled by w_c / n_c and the products are added, so the result is
    Σ_c w_c · mean_c without decrypting any cluster.
    """
    if len(cluster_sums) != len(sizes) or len(sizes) != len(stakes):
        raise SchemaError("cluster sums, sizes and stakes must align")
    weights = stake_weights(stakes)
    merged = None
    for total, size, weight in zip(cluster_sums, sizes, weights):
        term = total.plain_mul(float(weight) / size)
        merged = term if merged is None else merged.add(term)
    assert merged is not None
    return merged


def fedadam_server_update(
    global_params: ParamVector, mean_delta: ParamVector, state: OptimizerState
) -> tuple[ParamVector, OptimizerState]:
    """Server-side Adam on the pseudo-gradient −mean_delta."""
    if mean_delta.schema != global_params.schema:
        raise SchemaError("mean update does not match the global schema")
    if state.kind is not OptimizerKind.ADAM:
        raise DomainError("fedadam needs an adam optimizer state")
    pseudo_gradient = mean_delta.scaled(-1.0)
    return optimizer_step(state, global_params, lambda _: pseudo_gradient)


def _stack(grads: Sequence[ParamVector | np.ndarray]) -> np.ndarray:
    if not grads:
        raise DomainError("no updates supplied")
    rows = [
        g.values if isinstance(g, ParamVector) else np.asarray(g, dtype=np.float64)
        for g in grads
    ]
    lengths = {r.size for r in rows}
    if len(lengths) != 1:
        raise SchemaError("updates have different lengths")
    return np.vstack([r.ravel() for r in rows])


def krum_scores(grads: Sequence[ParamVector | np.ndarray], m: int) -> np.ndarray:
    """Sum of each update's n − m − 2 smallest squared distances to the others."""
    x = _stack(grads)
    n = x.shape[0]
    neighbours = n - m - 2
    if m < 0 or neighbours < 1:
        raise DomainError(f"krum needs n - m - 2 >= 1, got n={n}, m={m}")
    diff = x[:, None, :] - x[None, :, :]
    distances = np.einsum("ijk,ijk->ij", diff, diff)
    scores = np.empty(n)
    for i in range(n):
        others = np.delete(distances[i], i)
        scores[i] = np.sort(others)[:neighbours].sum()
    return scores


def krum(grads: Sequence[ParamVector | np.ndarray], m: int) -> int:
    """Index of the Krum-selected update; ties go to the lowest index."""
    return int(np.argmin(krum_scores(grads, m)))


def _distance_sum(points: np.ndarray, y: np.ndarray) -> float:
    return float(np.linalg.norm(points - y, axis=1).sum())


def _weiszfeld_step(points: np.ndarray, y: np.ndarray, eps: float) -> np.ndarray:
    """One Vardi–Zhang step; well defined when ``y`` coincides with input points."""
    distances = np.linalg.norm(points - y, axis=1)
    at_y = distances <= eps
    weights = 1.0 / distances[~at_y]
    others = points[~at_y]
    target = weights @ others / weights.sum()
    multiplicity = int(at_y.sum())
    if multiplicity == 0:
        return target
    pull = float(np.linalg.norm(weights @ (others - y)))
    if pull <= multiplicity:
        return y
    gamma = multiplicity / pull
    return (1.0 - gamma) * target + gamma * y


def _newton_polish(
    points: np.ndarray, y: np.ndarray, eps: float, max_iter: int = 50
) -> np.ndarray:
    """Safeguarded Newton steps on the sum of distances; stops next to a data point."""
    dim = points.shape[1]
    current = _distance_sum(points, y)
    for _ in range(max_iter):
        diff = y - points
        distances = np.linalg.norm(diff, axis=1)
        if distances.min() <= eps:
            break
        units = diff / distances[:, None]
        grad = units.sum(axis=0)
        if np.linalg.norm(grad) <= 1e-14:
            break
        hessian = np.zeros((dim, dim))
        for u, d in zip(units, distances):
            hessian += (np.eye(dim) - np.outer(u, u)) / d
        try:
            step = np.linalg.solve(hessian, grad)
        except np.linalg.LinAlgError:
            break
        t = 1.0
        while t > 1e-12:
            candidate = y - t * step
            value = _distance_sum(points, candidate)
            if value < current:
                break
            t *= 0.5
        else:
            break
        y, current = candidate, value
    return y


def rfa_geometric_median(
    grads: Sequence[ParamVector | np.ndarray],
    max_iter: int = 200,
    tol: float = 1e-12,
    eps: float = WEISZFELD_EPS,
) -> np.ndarray:
    """Geometric median of the updates.

    The iteration runs in the affine span of the points: modified Weiszfeld steps from the
    mean, then Newton refinement. An input point with a lower sum of distances wins, which
    covers optima sitting on a data point. Collinear inputs use the exact 1-D median.
    """
    x = _stack(grads)
    center = x.mean(axis=0)
    _, singular, vt = np.linalg.svd(x - center, full_matrices=False)
    if singular.size == 0 or singular[0] <= eps:
        return center
    basis = vt[singular > singular[0] * 1e-12]
    points = (x - center) @ basis.T
    if basis.shape[0] == 1:
        coord = np.median(points[:, 0])
        return center + coord * basis[0]

    y = np.zeros(points.shape[1])
    for _ in range(max_iter):
        updated = _weiszfeld_step(points, y, eps)
        moved = float(np.linalg.norm(updated - y))
        y = updated
        if moved <= tol:
            break
    y = _newton_polish(points, y, eps)

    median = center + y @ basis
    best = _distance_sum(x, median)
    for row in x:
        value = _distance_sum(x, row)
        if value < best:
            median, best = row.copy(), value
    return median


def geometric_median_objective(
    grads: Sequence[ParamVector | np.ndarray], point: np.ndarray
) -> float:
    return _distance_sum(_stack(grads), np.asarray(point, dtype=np.float64))
