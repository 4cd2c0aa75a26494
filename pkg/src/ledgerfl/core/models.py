"""Core value types for ledgerfl: model schemas, flat parameter vectors, batches and datasets."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Any, Sequence

import numpy as np

from ledgerfl.core.errors import DomainError, NumericalError, SchemaError


class Activation(Enum):
    """Hidden-layer activation of a dense model."""

    RELU = "relu"
    IDENTITY = "identity"


class ModelKind(Enum):
    """Model-type tag τ carried by every update."""

    LOGISTIC = "logistic"
    MLP = "mlp"


class Split(Enum):
    """Dataset split tag."""

    TRAIN = "train"
    TEST = "test"


@dataclass(frozen=True)
class ModelSchema:
    """Layer shapes of a dense model.

    Attributes:
        layer_dims: (in, out) pair per layer; consecutive layers chain.
        activation: Activation applied after every layer but the last.
        num_classes: Width of the final layer.
    """

    layer_dims: tuple[tuple[int, int], ...]
    activation: Activation = Activation.RELU
    num_classes: int = 0

    def __post_init__(self) -> None:
        dims = tuple((int(i), int(o)) for i, o in self.layer_dims)
        object.__setattr__(self, "layer_dims", dims)
        if not dims:
            raise SchemaError("schema needs at least one layer")
        for in_dim, out_dim in dims:
            if in_dim < 1 or out_dim < 1:
                raise SchemaError(f"layer dims must be positive, got {(in_dim, out_dim)}")
        for (_, out_dim), (in_next, _) in zip(dims, dims[1:]):
            if out_dim != in_next:
                raise SchemaError(f"layer dims do not chain: {out_dim} -> {in_next}")
        if self.num_classes == 0:
            object.__setattr__(self, "num_classes", dims[-1][1])
        if self.num_classes != dims[-1][1]:
            raise SchemaError(
                f"num_classes={self.num_classes} differs from final width {dims[-1][1]}"
            )

    @classmethod
    def logistic(cls, dim: int, num_classes: int) -> ModelSchema:
        """Multinomial logistic regression: a single linear layer."""
        return cls(((dim, num_classes),), Activation.IDENTITY, num_classes)

    @classmethod
    def mlp(
        cls,
        dim: int,
        hidden: Sequence[int],
        num_classes: int,
        activation: Activation = Activation.RELU,
    ) -> ModelSchema:
        """Perceptron with one or more hidden layers."""
        widths = [dim, *hidden, num_classes]
        return cls(tuple(zip(widths[:-1], widths[1:])), activation, num_classes)

    @property
    def input_dim(self) -> int:
        return self.layer_dims[0][0]

    @property
    def size(self) -> int:
        """Number of weights plus biases."""
        return sum((i + 1) * o for i, o in self.layer_dims)

    def to_dict(self) -> dict[str, Any]:
        """Serialize to dictionary."""
        return {
            "layer_dims": [list(d) for d in self.layer_dims],
            "activation": self.activation.value,
            "num_classes": self.num_classes,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> ModelSchema:
        """Deserialize from dictionary."""
        return cls(
            tuple(tuple(d) for d in data["layer_dims"]),
            Activation(data.get("activation", "relu")),
            data.get("num_classes", 0),
        )


@dataclass(eq=False)
class ParamVector:
    """Flat model parameters ω with the schema that gives them shape.

    Layout per layer: the (in, out) weight matrix in row-major order, then the out biases.
    """

    values: np.ndarray
    schema: ModelSchema

    def __post_init__(self) -> None:
        self.values = np.array(self.values, dtype=np.float64).ravel()
        if self.values.size != self.schema.size:
            raise SchemaError(
                f"parameter length {self.values.size} does not match schema size {self.schema.size}"
            )
        if not np.all(np.isfinite(self.values)):
            raise NumericalError("parameter vector contains non-finite entries")

    @classmethod
    def zeros(cls, schema: ModelSchema) -> ParamVector:
        return cls(np.zeros(schema.size), schema)

    @classmethod
    def random(
        cls, schema: ModelSchema, rng: np.random.Generator, scale: float = 0.1
    ) -> ParamVector:
        """Scaled Gaussian weights and zero biases."""
        parts = []
        for in_dim, out_dim in schema.layer_dims:
            parts.append(rng.normal(0.0, scale / np.sqrt(in_dim), size=in_dim * out_dim))
            parts.append(np.zeros(out_dim))
        return cls(np.concatenate(parts), schema)

    @classmethod
    def from_layers(
        cls, schema: ModelSchema, layers: Sequence[tuple[np.ndarray, np.ndarray]]
    ) -> ParamVector:
        parts = []
        for (weights, bias), (in_dim, out_dim) in zip(layers, schema.layer_dims):
            parts.append(np.asarray(weights, dtype=np.float64).reshape(in_dim, out_dim).ravel())
            parts.append(np.asarray(bias, dtype=np.float64).reshape(out_dim))
        return cls(np.concatenate(parts), schema)

    def layers(self) -> list[tuple[np.ndarray, np.ndarray]]:
        """Weight matrices and bias vectors, as views into ``values``."""
        out = []
        offset = 0
        for in_dim, out_dim in self.schema.layer_dims:
            weights = self.values[offset : offset + in_dim * out_dim].reshape(in_dim, out_dim)
            offset += in_dim * out_dim
            bias = self.values[offset : offset + out_dim]
            offset += out_dim
            out.append((weights, bias))
        return out

    def with_values(self, values: np.ndarray) -> ParamVector:
        return ParamVector(values, self.schema)

    def copy(self) -> ParamVector:
        return ParamVector(self.values.copy(), self.schema)

    def norm(self) -> float:
        return float(np.linalg.norm(self.values))

    def _check_peer(self, other: ParamVector) -> None:
        if other.schema != self.schema:
            raise SchemaError("parameter vectors have different schemas")

    def __add__(self, other: ParamVector) -> ParamVector:
        self._check_peer(other)
        return ParamVector(self.values + other.values, self.schema)

    def __sub__(self, other: ParamVector) -> ParamVector:
        self._check_peer(other)
        return ParamVector(self.values - other.values, self.schema)

    def scaled(self, factor: float) -> ParamVector:
        return ParamVector(self.values * factor, self.schema)

    def __len__(self) -> int:
        return int(self.values.size)


@dataclass(eq=False)
class Batch:
    """Mini-batch ζ of features and integer labels."""

    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self) -> None:
        self.labels = np.asarray(self.labels, dtype=np.int64).ravel()
        self.features = _as_matrix(self.features)
        if self.features.shape[0] != self.labels.size:
            raise SchemaError(
                f"{self.features.shape[0]} feature rows but {self.labels.size} labels"
            )

    def __len__(self) -> int:
        return int(self.labels.size)


@dataclass(eq=False)
class Dataset:
    """Labelled dataset DS = {X, Y} with a split tag."""

    features: np.ndarray
    labels: np.ndarray
    num_classes: int
    split: Split = Split.TRAIN

    def __post_init__(self) -> None:
        self.labels = np.asarray(self.labels, dtype=np.int64).ravel()
        self.features = _as_matrix(self.features)
        if self.features.shape[0] != self.labels.size:
            raise SchemaError(
                f"{self.features.shape[0]} feature rows but {self.labels.size} labels"
            )
        if self.num_classes < 1:
            raise DomainError("num_classes must be positive")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise DomainError("labels must lie in [0, num_classes)")
        if np.isnan(self.features).any():
            raise DomainError("dataset features contain NaN")

    def __len__(self) -> int:
        return int(self.labels.size)

    @property
    def dim(self) -> int:
        return int(self.features.shape[1])

    def subset(self, indices: Sequence[int] | np.ndarray, split: Split | None = None) -> Dataset:
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(
            self.features[idx], self.labels[idx], self.num_classes, split or self.split
        )

    def as_batch(self) -> Batch:
        return Batch(self.features, self.labels)

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.num_classes)


def _as_matrix(features: np.ndarray) -> np.ndarray:
    matrix = np.asarray(features, dtype=np.float64)
    if matrix.ndim == 1:
        matrix = matrix.reshape(1, -1) if matrix.size else matrix.reshape(0, 0)
    return matrix
