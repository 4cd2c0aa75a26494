"""Accuracy and per-round metrics."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Mapping

import numpy as np

from ledgerfl.core.errors import DomainError, SchemaError
from ledgerfl.core.models import Dataset, ParamVector
from ledgerfl.core.numerics import predict

CSV_COLUMNS = (
    "round",
    "acc_pct",
    "comp_client_s",
    "comp_server_s",
    "comp_total_s",
    "clusters",
    "accepted",
    "ignored",
    "discarded",
    "gml",
)

CLIENT_PHASES = ("T_LT", "T_CKKS")
SERVER_PHASES = ("T_CS", "T_WGAN", "T_Agg")


def phase_totals(phases: Mapping[str, float]) -> tuple[float, float]:
    """Client and server seconds summed over the known phases; missing phases count as zero."""
    client = sum(phases.get(name, 0.0) for name in CLIENT_PHASES)
    server = sum(phases.get(name, 0.0) for name in SERVER_PHASES)
    return client, server


def accuracy(model: ParamVector, validation: Dataset) -> float:
    """Percentage of correctly predicted samples (argmax, ties to the lowest class).

    Raises:
        DomainError: If the validation set is empty.
    """
    if len(validation) == 0:
        raise DomainError("accuracy needs a non-empty validation set")
    if validation.dim != model.schema.input_dim:
        raise SchemaError("validation features do not match the model input")
    correct = int(np.count_nonzero(predict(model, validation.features) == validation.labels))
    return 100.0 * correct / len(validation)


@dataclass
class RoundMetrics:
    """Outcome of one round.

    ``comp_client``/``comp_server`` are wall-clock seconds; ``phases`` holds the component
    timers (T_LT, T_CKKS on the client side, T_CS, T_WGAN, T_Agg on the server side).
    """

    round: int
    accuracy: float
    comp_client: float = 0.0
    comp_server: float = 0.0
    clusters: int = 0
    accepted: int = 0
    ignored: int = 0
    discarded: int = 0
    gml: float | None = None
    stakes: dict[int, float] = field(default_factory=dict)
    phases: dict[str, float] = field(default_factory=dict)
    accuracy_by_type: dict[str, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not 0.0 <= self.accuracy <= 100.0:
            raise DomainError(f"accuracy {self.accuracy} outside [0, 100]")

    @property
    def comp_total(self) -> float:
        return self.comp_client + self.comp_server

    def csv_row(self) -> list[str]:
        gml = "" if self.gml is None or math.isnan(self.gml) else f"{self.gml:.6f}"
        return [
            str(self.round),
            f"{self.accuracy:.4f}",
            f"{self.comp_client:.6f}",
            f"{self.comp_server:.6f}",
            f"{self.comp_total:.6f}",
            str(self.clusters),
            str(self.accepted),
            str(self.ignored),
            str(self.discarded),
            gml,
        ]

    def to_dict(self) -> dict[str, Any]:
        """Serialize to dictionary."""
        return {
            "round": self.round,
            "accuracy": self.accuracy,
            "comp_client": self.comp_client,
            "comp_server": self.comp_server,
            "comp_total": self.comp_total,
            "clusters": self.clusters,
            "accepted": self.accepted,
            "ignored": self.ignored,
            "discarded": self.discarded,
            "gml": self.gml,
            "stakes": {str(k): v for k, v in self.stakes.items()},
            "phases": dict(self.phases),
            "accuracy_by_type": dict(self.accuracy_by_type),
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> RoundMetrics:
        """Deserialize from dictionary."""
        return cls(
            round=data["round"],
            accuracy=data["accuracy"],
            comp_client=data.get("comp_client", 0.0),
            comp_server=data.get("comp_server", 0.0),
            clusters=data.get("clusters", 0),
            accepted=data.get("accepted", 0),
            ignored=data.get("ignored", 0),
            discarded=data.get("discarded", 0),
            gml=data.get("gml"),
            stakes={int(k): v for k, v in data.get("stakes", {}).items()},
            phases=dict(data.get("phases", {})),
            accuracy_by_type=dict(data.get("accuracy_by_type", {})),
        )
