"""Datasets and non-IID partitioning.

Synthetic Gaussian blobs, IDX file loading, Dirichlet label-skew partitioning and
per-enterprise feature-skew transforms.
"""

from __future__ import annotations

import gzip
import logging
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Sequence

import numpy as np

from ledgerfl.core.errors import DomainError, FormatError
from ledgerfl.core.models import Dataset, Split

logger = logging.getLogger(__name__)

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
MAX_PARTITION_ATTEMPTS = 100


@dataclass(eq=False)
class ShardAssignment:
    """Per-enterprise index lists into a parent dataset."""

    shards: list[np.ndarray]
    alpha: float
    seed: int
    parent_size: int = 0

    def __post_init__(self) -> None:
        self.shards = [np.asarray(s, dtype=np.int64) for s in self.shards]
        if not self.parent_size:
            return
        merged = np.concatenate(self.shards) if self.shards else np.array([], dtype=np.int64)
        if merged.size and (merged.min() < 0 or merged.max() >= self.parent_size):
            raise DomainError("shard index outside the parent dataset")
        if np.unique(merged).size != merged.size:
            raise DomainError("shards overlap")

    def __len__(self) -> int:
        return len(self.shards)

    def sizes(self) -> list[int]:
        return [int(s.size) for s in self.shards]


def gen_synthetic(
    num_classes: int,
    dim: int,
    per_class: int,
    class_separation: float,
    seed: int,
    split: Split = Split.TRAIN,
) -> Dataset:
    """Gaussian blobs with unit covariance around means on a scaled simplex.

    Class c is centred at ``class_separation * e_c``; classes beyond ``dim`` get seeded
    unit directions instead.
    """
    if dim < 1:
        raise DomainError("dim must be at least 1")
    if num_classes < 1 or per_class < 1:
        raise DomainError("class and sample counts must be positive")
    if class_separation < 0:
        raise DomainError("class separation must be non-negative")
    rng = np.random.default_rng(seed)
    means = np.zeros((num_classes, dim))
    for c in range(num_classes):
        if c < dim:
            means[c, c] = 1.0
        else:
            direction = rng.normal(size=dim)
            means[c] = direction / np.linalg.norm(direction)
    means *= class_separation
    labels = np.repeat(np.arange(num_classes), per_class)
    features = means[labels] + rng.normal(size=(labels.size, dim))
    order = rng.permutation(labels.size)
    return Dataset(features[order], labels[order], num_classes, split)


def train_test_split(ds: Dataset, test_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Seeded random split; the second dataset is tagged as the test split."""
    if not 0.0 < test_fraction < 1.0:
        raise DomainError("test fraction must lie in (0, 1)")
    order = np.random.default_rng(seed).permutation(len(ds))
    cut = max(1, int(round(len(ds) * test_fraction)))
    return ds.subset(order[cut:], Split.TRAIN), ds.subset(order[:cut], Split.TEST)


def _read_bytes(path: str | Path) -> bytes:
    path = Path(path)
    opener = gzip.open if path.suffix == ".gz" else open
    with opener(path, "rb") as handle:
        return handle.read()


def _read_header(data: bytes, magic: int, ndim: int, path: str | Path) -> list[int]:
    header_len = 4 * (ndim + 1)
    if len(data) < header_len:
        raise FormatError(f"truncated IDX header in {path}", offset=len(data))
    found = int.from_bytes(data[0:4], "big")
    if found != magic:
        raise FormatError(f"bad IDX magic 0x{found:08x} in {path}", offset=0)
    return [int.from_bytes(data[4 * (i + 1) : 4 * (i + 2)], "big") for i in range(ndim)]


def load_idx(
    path_images: str | Path, path_labels: str | Path, split: Split = Split.TRAIN
) -> Dataset:
    """Load an IDX image/label file pair (plain or gzipped).

    Pixels are scaled to [0, 1] and each image is flattened row-major.

    Raises:
        FormatError: On bad magic numbers, truncation or mismatched counts.
    """
    images = _read_bytes(path_images)
    labels = _read_bytes(path_labels)
    count, rows, cols = _read_header(images, IDX_IMAGES_MAGIC, 3, path_images)
    (label_count,) = _read_header(labels, IDX_LABELS_MAGIC, 1, path_labels)
    if count != label_count:
        raise FormatError(
            f"image count {count} does not match label count {label_count}", offset=4
        )
    pixels = rows * cols
    needed = 16 + count * pixels
    if len(images) < needed:
        raise FormatError(f"truncated image payload in {path_images}", offset=len(images))
    if len(labels) < 8 + count:
        raise FormatError(f"truncated label payload in {path_labels}", offset=len(labels))
    raw = np.frombuffer(images, dtype=">u1", count=count * pixels, offset=16)
    features = raw.reshape(count, pixels).astype(np.float64) / 255.0
    ids = np.frombuffer(labels, dtype=">u1", count=count, offset=8).astype(np.int64)
    num_classes = int(ids.max()) + 1 if count else 1
    return Dataset(features, ids, max(num_classes, 10), split)


def _largest_remainder(total: int, weights: np.ndarray) -> np.ndarray:
    quotas = weights * total
    counts = np.floor(quotas).astype(np.int64)
    remainder = total - int(counts.sum())
    if remainder > 0:
        order = np.argsort(-(quotas - counts), kind="stable")
        counts[order[:remainder]] += 1
    return counts


def _draw_partition(
    labels: np.ndarray, num_classes: int, n: int, alpha: float, rng: np.random.Generator
) -> list[list[int]]:
    shards: list[list[int]] = [[] for _ in range(n)]
    for c in range(num_classes):
        idx = np.flatnonzero(labels == c)
        if idx.size == 0:
            continue
        rng.shuffle(idx)
        weights = rng.dirichlet(np.full(n, alpha))
        if not np.all(np.isfinite(weights)):
            weights = np.full(n, 1.0 / n)
        counts = _largest_remainder(idx.size, weights)
        bounds = np.concatenate([[0], np.cumsum(counts)])
        for k in range(n):
            shards[k].extend(idx[bounds[k] : bounds[k + 1]].tolist())
    return shards


def _repair_empty(shards: list[list[int]]) -> list[list[int]]:
    """Move single samples from the largest shards into empty ones."""
    shards = [list(s) for s in shards]
    for k in range(len(shards)):
        if shards[k]:
            continue
        donor = max(range(len(shards)), key=lambda j: (len(shards[j]), -j))
        shards[k].append(shards[donor].pop())
    return shards


def dirichlet_partition(
    ds: Dataset,
    n_enterprises: int,
    alpha: float,
    seed: int,
    max_attempts: int = MAX_PARTITION_ATTEMPTS,
    repair: bool = False,
) -> ShardAssignment:
    """Label-skew partition: each class is split over enterprises by a Dir(α) draw.

    Args:
        ds: Parent dataset.
        n_enterprises: Number of shards.
        alpha: Dirichlet concentration; small values give strong skew.
        seed: Partition seed.
        max_attempts: Re-draws allowed while some enterprise is left empty.
        repair: When every draw leaves an enterprise empty, move single samples from the
            largest shards instead of failing. Off by default.

    Raises:
        DomainError: If the minimum of one sample per enterprise cannot be met, or every
            draw leaves an enterprise empty and ``repair`` is off.
    """
    if n_enterprises < 1:
        raise DomainError("n_enterprises must be at least 1")
    if not alpha > 0:
        raise DomainError("alpha must be positive")
    if n_enterprises > len(ds):
        raise DomainError(f"{n_enterprises} enterprises cannot share {len(ds)} samples")
    rng = np.random.default_rng(seed)
    best: list[list[int]] | None = None
    for attempt in range(max_attempts):
        shards = _draw_partition(ds.labels, ds.num_classes, n_enterprises, alpha, rng)
        empty = sum(1 for s in shards if not s)
        if empty == 0:
            logger.debug("dirichlet partition accepted on attempt %d", attempt + 1)
            return ShardAssignment([sorted(s) for s in shards], alpha, seed, len(ds))
        if best is None or empty < sum(1 for s in best if not s):
            best = shards
    if not repair or best is None:
        raise DomainError(
            f"no partition with a sample per enterprise after {max_attempts} attempts"
        )
    logger.info("dirichlet partition repaired after %d attempts", max_attempts)
    return ShardAssignment([sorted(s) for s in _repair_empty(best)], alpha, seed, len(ds))


def rebalance_equal_counts(assignment: ShardAssignment) -> ShardAssignment:
    """Move indices from large shards to small ones until sizes differ by at most one."""
    shards = [list(s) for s in assignment.shards]
    total = sum(len(s) for s in shards)
    n = len(shards)
    targets = [total // n + (1 if k < total % n else 0) for k in range(n)]
    surplus: list[int] = []
    for k in range(n):
        while len(shards[k]) > targets[k]:
            surplus.append(shards[k].pop())
    for k in range(n):
        while len(shards[k]) < targets[k]:
            shards[k].append(surplus.pop())
    return ShardAssignment(
        [sorted(s) for s in shards], assignment.alpha, assignment.seed, assignment.parent_size
    )


def skew_statistic(ds: Dataset, assignment: ShardAssignment) -> np.ndarray:
    """Largest single-class share of every shard."""
    shares = []
    for shard in assignment.shards:
        counts = np.bincount(ds.labels[shard], minlength=ds.num_classes)
        shares.append(counts.max() / max(1, counts.sum()))
    return np.asarray(shares)


class TransformKind(Enum):
    """Feature-skew transform families."""

    IDENTITY = "identity"
    ROTATE = "rotate"
    SCALE = "scale"
    BIAS = "bias"


@dataclass(frozen=True)
class FeatureTransform:
    """A per-enterprise feature transform.

    ``value`` is the angle for ROTATE and the factor for SCALE; ``vector`` is the offset
    for BIAS.
    """

    kind: TransformKind = TransformKind.IDENTITY
    value: float = 0.0
    vector: tuple[float, ...] = field(default_factory=tuple)

    @classmethod
    def rotate(cls, angle: float) -> FeatureTransform:
        return cls(TransformKind.ROTATE, float(angle))

    @classmethod
    def scale(cls, factor: float) -> FeatureTransform:
        return cls(TransformKind.SCALE, float(factor))

    @classmethod
    def bias(cls, vector: Sequence[float]) -> FeatureTransform:
        return cls(TransformKind.BIAS, 0.0, tuple(float(x) for x in vector))


def apply_feature_skew(
    features: np.ndarray, transform: FeatureTransform, seed: int
) -> np.ndarray:
    """Apply a deterministic feature transform; the seed picks the rotation plane.

    Raises:
        DomainError: For a zero scale factor, non-finite parameters, or a rotation of
            one-dimensional features.
    """
    x = np.asarray(features, dtype=np.float64)
    if not np.isfinite(transform.value) or not np.all(np.isfinite(transform.vector)):
        raise DomainError("transform parameters must be finite")
    if transform.kind is TransformKind.IDENTITY:
        return x.copy()
    if transform.kind is TransformKind.SCALE:
        if transform.value == 0.0:
            raise DomainError("scale factor 0 destroys the features")
        return x * transform.value
    if transform.kind is TransformKind.BIAS:
        offset = np.asarray(transform.vector)
        if offset.size != x.shape[1]:
            raise DomainError(f"bias of length {offset.size} for {x.shape[1]} features")
        return x + offset
    if x.shape[1] < 2:
        raise DomainError("rotation needs at least two feature dimensions")
    i, j = sorted(np.random.default_rng(seed).choice(x.shape[1], size=2, replace=False))
    c, s = np.cos(transform.value), np.sin(transform.value)
    out = x.copy()
    out[:, i] = c * x[:, i] - s * x[:, j]
    out[:, j] = s * x[:, i] + c * x[:, j]
    return out
