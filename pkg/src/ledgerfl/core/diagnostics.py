"""Convergence diagnostics.

Checks for the local-model divergence bound, the malicious-mixture identity of the
averaged model, full-batch descent at step 1/(2β̂), and the distance of clustered versus
uniform aggregation to per-distribution optima.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence, Union

import numpy as np

from ledgerfl.core.aggregate import fedavg
from ledgerfl.core.errors import ConfigError, DomainError
from ledgerfl.core.models import Batch, Dataset, ModelSchema, ParamVector
from ledgerfl.core.numerics import (
    OptimizerKind,
    estimate_beta,
    loss_and_grad,
    make_optimizer,
    optimizer_step,
    train_epochs,
)
from ledgerfl.crypto.base import HeParams, KeyMaterial, decrypt_vector, encrypt_vector, keygen

logger = logging.getLogger(__name__)

Vector = Union[ParamVector, np.ndarray]


def _array(v: Vector) -> np.ndarray:
    return v.values if isinstance(v, ParamVector) else np.asarray(v, dtype=np.float64).ravel()


def gradient_bound(grads: Sequence[Vector]) -> float:
    """C = max ‖g‖² over a window of observed gradients."""
    if not grads:
        raise DomainError("empty gradient window")
    return max(float(_array(g) @ _array(g)) for g in grads)


def divergence_check(
    local_models: Sequence[Vector],
    averaged: Vector,
    delta: float,
    r_bar: int,
    c_bound: float,
) -> bool:
    """True iff every ‖ω_k − ω̄‖² ≤ δ² · r̄² · C.

    Raises:
        DomainError: For an empty window or negative constants.
    """
    if not local_models:
        raise DomainError("empty model window")
    if delta < 0 or r_bar < 0 or c_bound < 0:
        raise DomainError("delta, r_bar and the gradient bound must be non-negative")
    center = _array(averaged)
    limit = delta**2 * r_bar**2 * c_bound
    worst = max(float(np.sum((_array(m) - center) ** 2)) for m in local_models)
    logger.debug("divergence %.6g against bound %.6g", worst, limit)
    return worst <= limit * (1.0 + 1e-12) + 1e-15


def mixture_identity_check(
    benign: Sequence[Vector],
    malicious: Sequence[Vector],
    mu: float,
    key: KeyMaterial | None = None,
    tol: float = 1e-12,
) -> bool:
    """FedAvg over all updates equals (1 − μ)·mean(benign) + μ·mean(malicious).

    The average is computed homomorphically with ``key`` (an exact-backend key by default)
    and compared after decryption.

    Raises:
        DomainError: If μ does not match the set sizes.
    """
    if not 0.0 <= mu <= 1.0:
        raise DomainError(f"mu={mu} outside [0, 1]")
    total = len(benign) + len(malicious)
    if total == 0:
        raise DomainError("no updates supplied")
    if abs(mu - len(malicious) / total) > 1e-9:
        raise DomainError(f"mu={mu} inconsistent with {len(malicious)} of {total} malicious")

    key = key or keygen(HeParams(), 0, "exact")
    vectors = [_array(v) for v in [*benign, *malicious]]
    encrypted = [encrypt_vector(key, v, seed=i) for i, v in enumerate(vectors)]
    averaged = decrypt_vector(key, fedavg(encrypted))
    mixture = np.zeros_like(vectors[0])
    if benign:
        mixture += (1.0 - mu) * np.mean([_array(v) for v in benign], axis=0)
    if malicious:
        mixture += mu * np.mean([_array(v) for v in malicious], axis=0)
    error = float(np.max(np.abs(averaged - mixture)))
    logger.debug("mixture identity error %.3g", error)
    return error <= tol


def estimate_smoothness(
    params: ParamVector, batch: Batch, iterations: int = 20, step: float = 1e-3, seed: int = 0
) -> float:
    """β̂ at ``params`` from samples along power-iterated finite-difference Hessian products."""
    g0 = loss_and_grad(params, batch)[1].values
    direction = np.random.default_rng(seed).normal(size=len(params))
    direction /= np.linalg.norm(direction)
    samples = [params]
    for _ in range(iterations):
        shifted = params.with_values(params.values + step * direction)
        samples.append(shifted)
        product = loss_and_grad(shifted, batch)[1].values - g0
        norm = float(np.linalg.norm(product))
        if norm == 0.0:
            break
        direction = product / norm
    return estimate_beta(samples, batch)


def descent_trace(
    params: ParamVector, batch: Batch, steps: int, learning_rate: float | None = None
) -> list[float]:
    """Full-batch gradient descent losses, by default at η = 1/(2β̂)."""
    if steps < 1:
        raise DomainError("steps must be at least 1")
    if learning_rate is None:
        learning_rate = 1.0 / (2.0 * estimate_smoothness(params, batch))
    state = make_optimizer(OptimizerKind.SGD, learning_rate)
    losses = [loss_and_grad(params, batch)[0]]
    for _ in range(steps):
        params, state = optimizer_step(state, params, lambda p: loss_and_grad(p, batch)[1])
        losses.append(loss_and_grad(params, batch)[0])
    return losses


def is_non_increasing(values: Sequence[float], slack: float = 1e-12) -> bool:
    return all(b <= a + slack for a, b in zip(values, values[1:]))


def fit_optimum(
    dataset: Dataset,
    schema: ModelSchema,
    epochs: int = 200,
    learning_rate: float = 0.5,
    seed: int = 0,
) -> ParamVector:
    """Direct full-batch training on pooled data; the reference optimum of a distribution."""
    batch = dataset.as_batch()
    state = make_optimizer(OptimizerKind.SGD, learning_rate)
    params, _, _ = train_epochs(
        ParamVector.zeros(schema), batch, epochs, len(batch), state, seed
    )
    return params


@dataclass
class ClusteringGainReport:
    """Per-round squared distances of clustered and uniform aggregation to the optima."""

    rounds: list[tuple[int, float, float]] = field(default_factory=list)
    burn_in: int = 10
    share: float = 0.0
    passed: bool = False

    def to_dict(self) -> dict[str, Any]:
        """Serialize to dictionary."""
        return {
            "rounds": [
                {"round": r, "clustered": c, "uniform": u} for r, c, u in self.rounds
            ],
            "burn_in": self.burn_in,
            "share": self.share,
            "passed": self.passed,
        }


def clustering_gain_check(
    clustered: Sequence[Mapping[int, Vector]],
    uniform: Sequence[Vector],
    optima: Mapping[int, Vector],
    burn_in: int = 10,
    required_share: float = 0.8,
) -> ClusteringGainReport:
    """Compare E‖ω_r^ϱ − ω*^ϱ‖² (clustered) with E‖ω̄_r − ω*^ϱ‖² (uniform FedAvg).

    Args:
        clustered: Per round, the clustered model serving each distribution ϱ.
        uniform: Per round, the uniform FedAvg model.
        optima: Directly trained optimum per distribution.
        burn_in: Rounds ignored before counting; all rounds count if none are left.
        required_share: Fraction of counted rounds where clustered must not be worse.

    Raises:
        ConfigError: If a distribution has no optimum.
        DomainError: If the two series differ in length or are empty.
    """
    if len(clustered) != len(uniform) or not uniform:
        raise DomainError("clustered and uniform series must be non-empty and aligned")
    report = ClusteringGainReport(burn_in=burn_in)
    for r, (by_distribution, average) in enumerate(zip(clustered, uniform)):
        missing = sorted(set(by_distribution) - set(optima))
        if missing:
            raise ConfigError(f"no optimum for distributions {missing}")
        mean = _array(average)
        c_err = np.mean(
            [np.sum((_array(m) - _array(optima[d])) ** 2) for d, m in by_distribution.items()]
        )
        u_err = np.mean([np.sum((mean - _array(optima[d])) ** 2) for d in by_distribution])
        report.rounds.append((r, float(c_err), float(u_err)))

    counted = [row for row in report.rounds if row[0] >= burn_in] or report.rounds
    wins = sum(1 for _, c, u in counted if c <= u + 1e-12)
    report.share = wins / len(counted)
    report.passed = report.share >= required_share
    return report
