"""Attack injectors, the gradient-matching reconstruction attack and the exposure audit.

Covers the five threat classes the pipeline defends against: noise data poisoning,
within-update collusion, noise model poisoning, black-box membership inference and
gradient reconstruction. ``SCENARIOS`` names the eight attack mixes used in experiments.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any, Collection, Iterable, Mapping, Sequence

import numpy as np
from scipy.optimize import minimize

from ledgerfl.core.compress import EncryptedUpdate
from ledgerfl.core.errors import AuditError, DomainError, PlanError
from ledgerfl.core.models import Batch, Dataset, ParamVector
from ledgerfl.core.numerics import forward, soft_target_loss_and_grad, softmax
from ledgerfl.crypto.base import Ciphertext, EncryptedVector

logger = logging.getLogger(__name__)

GML_THRESHOLD = 0.15


class AttackKind(Enum):
    """Threat classes an enterprise can run."""

    DATA_POISON_NOISE = "data_poison_noise"
    MODEL_POISON_NOISE = "model_poison_noise"
    WITHIN_UPDATE_COLLUDE = "within_update_collude"
    MEMBERSHIP_INFERENCE = "membership_inference"
    RECONSTRUCTION = "reconstruction"


POISONING = frozenset(
    {
        AttackKind.DATA_POISON_NOISE,
        AttackKind.MODEL_POISON_NOISE,
        AttackKind.WITHIN_UPDATE_COLLUDE,
    }
)


@dataclass(frozen=True)
class AttackPlan:
    """Which enterprises attack, and how.

    Attributes:
        malicious: Ids of the attacking enterprises.
        kinds: Attack kinds run by every malicious enterprise.
        fraction: Planned malicious share μ.
        sigma_data: Feature noise std for data poisoning.
        sigma_model: Update noise std for model poisoning.
        colluders: Enterprises coordinating a shared direction.
        seed: Seed for every random draw of the plan.
    """

    malicious: frozenset[int] = frozenset()
    kinds: frozenset[AttackKind] = frozenset()
    fraction: float = 0.0
    sigma_data: float = 5.0
    sigma_model: float = 10.0
    colluders: tuple[int, ...] = ()
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0.0 <= self.fraction <= 1.0:
            raise PlanError(f"malicious fraction {self.fraction} outside [0, 1]")
        if self.sigma_data < 0 or self.sigma_model < 0:
            raise PlanError("noise levels must be non-negative")
        if AttackKind.WITHIN_UPDATE_COLLUDE in self.kinds and len(self.colluders) < 2:
            raise PlanError("collusion needs at least two colluders")

    def attacks(self, enterprise_id: int, kind: AttackKind) -> bool:
        return enterprise_id in self.malicious and kind in self.kinds

    @property
    def poisons(self) -> bool:
        return bool(self.malicious) and bool(self.kinds & POISONING)

    def to_dict(self) -> dict[str, Any]:
        """Serialize to dictionary."""
        return {
            "malicious": sorted(self.malicious),
            "kinds": sorted(k.value for k in self.kinds),
            "fraction": self.fraction,
            "sigma_data": self.sigma_data,
            "sigma_model": self.sigma_model,
            "colluders": list(self.colluders),
            "seed": self.seed,
        }


def build_attack_plan(
    n: int,
    fraction: float,
    kinds: Iterable[AttackKind],
    seed: int,
    sigma_data: float = 5.0,
    sigma_model: float = 10.0,
) -> AttackPlan:
    """Draw round(fraction · n) malicious enterprises; colluders are all of them."""
    if not 0.0 <= fraction <= 1.0:
        raise PlanError(f"malicious fraction {fraction} outside [0, 1]")
    kinds = frozenset(kinds)
    count = int(round(fraction * n))
    rng = np.random.default_rng([seed, 0xA77])
    malicious = frozenset(int(i) for i in rng.choice(n, size=count, replace=False))
    colluders = tuple(sorted(malicious)) if AttackKind.WITHIN_UPDATE_COLLUDE in kinds else ()
    return AttackPlan(malicious, kinds, fraction, sigma_data, sigma_model, colluders, seed)


def poison_data(shard: Dataset, sigma: float, seed: int) -> Dataset:
    """Add N(0, σ²) noise to every feature; labels are untouched."""
    if sigma < 0:
        raise DomainError("noise std must be non-negative")
    if sigma == 0:
        return shard
    rng = np.random.default_rng(seed)
    noisy = shard.features + rng.normal(0.0, sigma, size=shard.features.shape)
    return replace(shard, features=noisy)


def poison_model(grad: ParamVector, sigma: float, seed: int) -> ParamVector:
    """Add N(0, σ²) noise to every update coordinate."""
    if sigma < 0:
        raise DomainError("noise std must be non-negative")
    if sigma == 0:
        return grad
    rng = np.random.default_rng(seed)
    return grad.with_values(grad.values + rng.normal(0.0, sigma, size=len(grad)))


def collude(
    updates: Mapping[int, ParamVector],
    target: ParamVector | np.ndarray,
    selected: Collection[int],
) -> dict[int, ParamVector]:
    """Replace every colluder's update with the shared target direction at its own norm.

    Raises:
        PlanError: If fewer than two colluders are given or one was not selected this round.
        DomainError: If the target direction is zero.
    """
    if len(updates) < 2:
        raise PlanError("collusion needs at least two colluders")
    absent = sorted(set(updates) - set(selected))
    if absent:
        raise PlanError(f"colluders {absent} were not selected this round")
    direction = target.values if isinstance(target, ParamVector) else np.asarray(target, float)
    norm = float(np.linalg.norm(direction))
    if norm == 0.0:
        raise DomainError("collusion target direction is zero")
    unit = direction / norm
    return {i: u.with_values(unit * u.norm()) for i, u in updates.items()}


def co_selected(colluders: Collection[int], selected: Collection[int]) -> bool:
    """Whether every colluder trains in the same round."""
    return set(colluders) <= set(selected)


def membership_inference(
    model: ParamVector, samples: np.ndarray, threshold: float
) -> np.ndarray:
    """Confidence attack: a sample is guessed member iff its top softmax probability > t.

    Raises:
        DomainError: If ``threshold`` is outside (0, 1].
    """
    if not 0.0 < threshold <= 1.0:
        raise DomainError(f"threshold must lie in (0, 1], got {threshold}")
    confidence = softmax(forward(model, samples)).max(axis=1)
    return confidence > threshold


def inference_advantage(
    model: ParamVector, members: Dataset, nonmembers: Dataset, threshold: float = 0.9
) -> float:
    """TPR − FPR of the confidence attack over an evaluation set."""
    if len(members) == 0 or len(nonmembers) == 0:
        raise DomainError("the attack needs members and non-members")
    tpr = float(membership_inference(model, members.features, threshold).mean())
    fpr = float(membership_inference(model, nonmembers.features, threshold).mean())
    return tpr - fpr


class GmlVerdict(Enum):
    """Outcome of a reconstruction attempt."""

    DEEP_LEAKAGE = "deep_leakage"
    NO_LEAK = "no_leak"
    BLOCKED = "blocked"


@dataclass(frozen=True)
class GmlReport:
    """Gradient-matching loss reached, optimizer iterations and the verdict."""

    gml: float | None
    iterations: int
    verdict: GmlVerdict

    def to_dict(self) -> dict[str, Any]:
        """Serialize to dictionary."""
        return {"gml": self.gml, "iterations": self.iterations, "verdict": self.verdict.value}


def gml_verdict(gml: float) -> GmlVerdict:
    return GmlVerdict.DEEP_LEAKAGE if gml <= GML_THRESHOLD else GmlVerdict.NO_LEAK


def gradient_matching_loss(
    model: ParamVector, features: np.ndarray, label_probs: np.ndarray, target: np.ndarray
) -> float:
    """‖g(x, y) − g*‖² / ‖g*‖² for the cross-entropy gradient at ``model``."""
    _, grad = soft_target_loss_and_grad(model, features, label_probs)
    diff = grad - target
    return float(diff @ diff) / float(target @ target)


def reconstruct_gml(
    target: ParamVector | np.ndarray | EncryptedUpdate | EncryptedVector | Ciphertext,
    model: ParamVector,
    batch_shape: tuple[int, int] | None = None,
    iters: int = 300,
    seed: int = 0,
    init: tuple[np.ndarray, np.ndarray] | None = None,
    restarts: int = 1,
) -> GmlReport:
    """Gradient-matching reconstruction of a batch from one plaintext update.

    Dummy features and label logits are optimized with L-BFGS-B to match ``target``; the
    best of ``restarts`` starting points is reported. Encrypted inputs give no plaintext
    gradient, so the attack is reported as blocked.

    Args:
        target: The observed update or its ciphertext.
        model: Parameters at which the update was computed.
        batch_shape: (batch, features) of the dummy; defaults to a single sample.
        iters: L-BFGS-B iteration cap.
        seed: Seed for the random dummy initialization.
        init: Optional starting (features, label probabilities) for the first attempt.
        restarts: Number of optimizer runs; later ones start from fresh random draws.

    Raises:
        DomainError: If ``iters < 1``, ``restarts < 1`` or the target gradient is zero.
    """
    if iters < 1 or restarts < 1:
        raise DomainError("the attack needs at least one iteration and one start")
    if isinstance(target, (EncryptedUpdate, EncryptedVector, Ciphertext)):
        logger.debug("reconstruction blocked: only ciphertext is observable")
        return GmlReport(None, 0, GmlVerdict.BLOCKED)

    goal = target.values if isinstance(target, ParamVector) else np.asarray(target, float)
    goal = goal.ravel()
    if goal.size != model.schema.size:
        raise DomainError("target gradient does not match the model size")
    if float(goal @ goal) == 0.0:
        raise DomainError("the target gradient is zero")

    batch, dim = batch_shape or (1, model.schema.input_dim)
    classes = model.schema.num_classes
    split = batch * dim
    rng = np.random.default_rng(seed)

    def objective(z: np.ndarray) -> float:
        features = z[:split].reshape(batch, dim)
        labels = softmax(z[split:].reshape(batch, classes))
        return gradient_matching_loss(model, features, labels, goal)

    best: tuple[float, int] | None = None
    for attempt in range(restarts):
        if attempt == 0 and init is not None:
            x0 = np.asarray(init[0], dtype=np.float64).reshape(batch, dim)
            probs = np.clip(np.asarray(init[1], dtype=np.float64), 1e-12, None)
            logits0 = np.log(probs).reshape(batch, classes)
        else:
            x0 = rng.standard_normal((batch, dim))
            logits0 = rng.standard_normal((batch, classes))
        start = np.concatenate([x0.ravel(), logits0.ravel()])
        result = minimize(
            objective,
            start,
            method="L-BFGS-B",
            options={"maxiter": iters, "maxfun": iters * (start.size + 1) * 4},
        )
        gml = float(min(result.fun, objective(start)))
        if best is None or gml < best[0]:
            best = (gml, int(result.nit))
        if gml <= GML_THRESHOLD * 1e-3:
            break
    gml, nit = best
    logger.debug("reconstruction reached GML %.4g after %d iterations", gml, nit)
    return GmlReport(gml, nit, gml_verdict(gml))


class BoundaryTag(Enum):
    PLAINTEXT = "plaintext"
    CIPHERTEXT = "ciphertext"


EXPOSING_ROLES = frozenset({"leader_miner", "simple_miner"})
INDIVIDUAL_ITEMS = frozenset({"gradient", "parameters"})
TRACE_FIELDS = ("round", "role", "holder", "subject", "item", "tag", "individual")


@dataclass(frozen=True)
class TraceEntry:
    """One value crossing the server trust boundary.

    ``subject`` is the enterprise the value belongs to (-1 for aggregates).
    """

    round: int
    role: str
    holder: int
    subject: int
    item: str
    tag: BoundaryTag
    individual: bool
    global_iteration: int | None = None

    def to_dict(self) -> dict[str, Any]:
        """Serialize to dictionary."""
        data = {name: getattr(self, name) for name in TRACE_FIELDS}
        data["tag"] = self.tag.value
        data["global_iteration"] = self.global_iteration
        return data

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> TraceEntry:
        """Deserialize from dictionary.

        Raises:
            AuditError: If a field is missing or malformed.
        """
        missing = [name for name in TRACE_FIELDS if name not in data]
        if missing:
            raise AuditError(f"trace entry is missing {', '.join(missing)}")
        try:
            return cls(
                round=int(data["round"]),
                role=str(data["role"]),
                holder=int(data["holder"]),
                subject=int(data["subject"]),
                item=str(data["item"]),
                tag=BoundaryTag(data["tag"]),
                individual=bool(data["individual"]),
                global_iteration=data.get("global_iteration"),
            )
        except (TypeError, ValueError) as exc:
            raise AuditError(f"malformed trace entry: {exc}") from exc

    @property
    def exposes(self) -> bool:
        return (
            self.role in EXPOSING_ROLES
            and self.tag is BoundaryTag.PLAINTEXT
            and self.individual
            and self.item in INDIVIDUAL_ITEMS
        )


@dataclass
class AuditReport:
    """Plaintext individual values seen by miners; an empty list passes."""

    entries: int = 0
    violations: list[TraceEntry] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.violations

    def to_dict(self) -> dict[str, Any]:
        """Serialize to dictionary."""
        return {
            "entries": self.entries,
            "passed": self.passed,
            "violations": [v.to_dict() for v in self.violations],
        }


def exposure_audit(trace: Iterable[TraceEntry | Mapping[str, Any]]) -> AuditReport:
    """List every plaintext individual gradient or parameter vector held by a miner.

    Raises:
        AuditError: If an entry is malformed.
    """
    report = AuditReport()
    for raw in trace:
        if isinstance(raw, TraceEntry):
            entry = raw
        elif isinstance(raw, Mapping):
            entry = TraceEntry.from_dict(raw)
        else:
            raise AuditError(f"unsupported trace entry {raw!r}")
        report.entries += 1
        if entry.exposes:
            report.violations.append(entry)
    return report


class Protection(Enum):
    """Expected protection level of a scenario."""

    BEST = "best"
    AVERAGE = "average"
    WORST = "worst"


@dataclass(frozen=True)
class Scenario:
    """Preset attack mix.

    Poisoning kinds drive the malicious enterprises; inference kinds select which of the
    membership and reconstruction measurements a run performs.
    """

    id: int
    name: str
    kinds: frozenset[AttackKind]
    protection: Protection


def _scenario(id: int, name: str, protection: Protection, *kinds: AttackKind) -> Scenario:
    return Scenario(id, name, frozenset(kinds), protection)


SCENARIOS: dict[int, Scenario] = {
    s.id: s
    for s in (
        _scenario(1, "data-poisoning", Protection.BEST, AttackKind.DATA_POISON_NOISE),
        _scenario(2, "collusion", Protection.BEST, AttackKind.WITHIN_UPDATE_COLLUDE),
        _scenario(3, "model-poisoning", Protection.BEST, AttackKind.MODEL_POISON_NOISE),
        _scenario(4, "membership-inference", Protection.BEST, AttackKind.MEMBERSHIP_INFERENCE),
        _scenario(5, "reconstruction", Protection.BEST, AttackKind.RECONSTRUCTION),
        _scenario(
            6,
            "poisoning",
            Protection.AVERAGE,
            AttackKind.DATA_POISON_NOISE,
            AttackKind.WITHIN_UPDATE_COLLUDE,
            AttackKind.MODEL_POISON_NOISE,
        ),
        _scenario(
            7,
            "inference",
            Protection.AVERAGE,
            AttackKind.MEMBERSHIP_INFERENCE,
            AttackKind.RECONSTRUCTION,
        ),
        _scenario(8, "all", Protection.WORST, *AttackKind),
    )
}


def scenario_kinds(scenario_id: int) -> frozenset[AttackKind]:
    try:
        return SCENARIOS[scenario_id].kinds
    except KeyError as exc:
        raise PlanError(f"unknown attack scenario {scenario_id}") from exc


def victim_batch(dataset: Dataset, index: int = 0) -> Batch:
    """Single-sample batch used as the reconstruction victim."""
    if len(dataset) == 0:
        raise DomainError("cannot attack an empty dataset")
    i = index % len(dataset)
    return Batch(dataset.features[i : i + 1], dataset.labels[i : i + 1])


def summarize_reports(reports: Sequence[GmlReport]) -> dict[str, Any]:
    values = [r.gml for r in reports if r.gml is not None]
    return {
        "count": len(reports),
        "blocked": sum(1 for r in reports if r.verdict is GmlVerdict.BLOCKED),
        "leaks": sum(1 for r in reports if r.verdict is GmlVerdict.DEEP_LEAKAGE),
        "min_gml": min(values) if values else None,
    }
