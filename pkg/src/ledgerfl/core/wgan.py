"""Generator-driven ensemble distillation of the merged global model.

A small conditional generator maps (z, one-hot y) to shadow samples on which the global
model and the cluster models disagree. The generator ascends the disagreement loss

    L = Σ_k mean_batch KL(softmax(global(x)) ‖ softmax(member_k(x)))

while the global model descends a cross-entropy surrogate against the members' mean soft
labels. The loop stops once L drops to the threshold or the step budget runs out.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ledgerfl.core.errors import DomainError, NumericalError, SchemaError
from ledgerfl.core.metrics import accuracy
from ledgerfl.core.models import Activation, Dataset, ModelSchema, ParamVector
from ledgerfl.core.numerics import (
    OptimizerKind,
    backward,
    forward_cache,
    log_softmax,
    make_optimizer,
    optimizer_step,
    soft_target_loss_and_grad,
    softmax,
)
from ledgerfl.crypto.base import Seed

logger = logging.getLogger(__name__)

DEFAULT_NOISE_DIM = 16
DEFAULT_HIDDEN = 32


def label_prior(class_counts: Sequence[float] | np.ndarray) -> np.ndarray:
    """Empirical class frequencies; an all-zero count vector gives the uniform prior."""
    counts = np.asarray(class_counts, dtype=np.float64)
    if counts.size == 0 or np.any(counts < 0):
        raise DomainError("class counts must be a non-empty, non-negative vector")
    total = counts.sum()
    return np.full(counts.size, 1.0 / counts.size) if total == 0 else counts / total


@dataclass(eq=False)
class GeneratorModel:
    """Conditional generator G(z, y; Θ).

    Attributes:
        params: Two-layer perceptron from noise_dim + classes inputs to feature_dim outputs.
        noise_dim: Width of the Gaussian noise input.
        prior: Categorical label prior.
        output_bound: When set, outputs pass through ``bound * tanh``.
    """

    params: ParamVector
    noise_dim: int
    prior: np.ndarray
    output_bound: float | None = None

    def __post_init__(self) -> None:
        self.prior = np.asarray(self.prior, dtype=np.float64).ravel()
        if np.any(self.prior < 0) or abs(self.prior.sum() - 1.0) > 1e-9:
            raise DomainError("label prior must be non-negative and sum to 1")
        if self.params.schema.input_dim != self.noise_dim + self.num_classes:
            raise SchemaError("generator input must be noise_dim + number of classes")
        if self.output_bound is not None and self.output_bound <= 0:
            raise DomainError("output bound must be positive")

    @classmethod
    def create(
        cls,
        feature_dim: int,
        prior: Sequence[float] | np.ndarray,
        noise_dim: int = DEFAULT_NOISE_DIM,
        hidden: int = DEFAULT_HIDDEN,
        seed: int = 0,
        output_bound: float | None = None,
    ) -> GeneratorModel:
        prior = np.asarray(prior, dtype=np.float64)
        schema = ModelSchema.mlp(noise_dim + prior.size, [hidden], feature_dim, Activation.RELU)
        params = ParamVector.random(schema, np.random.default_rng(seed), scale=1.0)
        return cls(params, noise_dim, prior, output_bound)

    @property
    def num_classes(self) -> int:
        return int(self.prior.size)

    @property
    def feature_dim(self) -> int:
        return self.params.schema.num_classes

    def with_params(self, params: ParamVector) -> GeneratorModel:
        return GeneratorModel(params, self.noise_dim, self.prior, self.output_bound)


@dataclass(eq=False)
class ShadowBatch:
    """Hard shadow samples with the noise and labels that produced them."""

    features: np.ndarray
    labels: np.ndarray
    round: int
    inputs: np.ndarray

    def __post_init__(self) -> None:
        if not np.all(np.isfinite(self.features)):
            raise NumericalError("shadow features are not finite")

    def __len__(self) -> int:
        return int(self.features.shape[0])


def _generate(gen: GeneratorModel, inputs: np.ndarray) -> tuple[list[np.ndarray], np.ndarray]:
    cache = forward_cache(gen.params, inputs)
    out = cache[-1]
    if gen.output_bound is not None:
        out = gen.output_bound * np.tanh(out)
    return cache, out


def generate_shadow(
    gen: GeneratorModel, batch_size: int, seed: Seed = None, round_index: int = 0
) -> ShadowBatch:
    """Sample z ~ N(0, 1) and y ~ prior, then run the generator.

    Raises:
        DomainError: If ``batch_size < 1``.
    """
    if batch_size < 1:
        raise DomainError(f"batch size must be at least 1, got {batch_size}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    noise = rng.standard_normal((batch_size, gen.noise_dim))
    labels = rng.choice(gen.num_classes, size=batch_size, p=gen.prior)
    inputs = np.hstack([noise, np.eye(gen.num_classes)[labels]])
    _, features = _generate(gen, inputs)
    return ShadowBatch(features, labels, round_index, inputs)


def regenerate(gen: GeneratorModel, shadow: ShadowBatch) -> ShadowBatch:
    """Re-run ``gen`` on the noise and labels of an existing batch."""
    _, features = _generate(gen, shadow.inputs)
    return ShadowBatch(features, shadow.labels, shadow.round, shadow.inputs)


def _check_members(global_params: ParamVector, members: Sequence[ParamVector]) -> None:
    if not members:
        raise DomainError("distillation needs at least one member model")
    for member in members:
        if member.schema != global_params.schema:
            raise SchemaError("member schema differs from the global schema")


def distill_loss(
    global_params: ParamVector, members: Sequence[ParamVector], shadow: ShadowBatch
) -> float:
    """Σ_k mean KL(softmax(global) ‖ softmax(member_k)) on the shadow batch.

    Raises:
        DomainError: For an empty batch or no members.
        SchemaError: If a member or the batch does not fit the global schema.
    """
    if len(shadow) == 0:
        raise DomainError("cannot evaluate the distillation loss on an empty batch")
    _check_members(global_params, members)
    if shadow.features.shape[1] != global_params.schema.input_dim:
        raise SchemaError("shadow features do not match the model input")
    log_p = log_softmax(forward_cache(global_params, shadow.features)[-1])
    p = np.exp(log_p)
    total = 0.0
    for member in members:
        log_q = log_softmax(forward_cache(member, shadow.features)[-1])
        total += float((p * (log_p - log_q)).sum(axis=1).mean())
    return max(0.0, total)


def _loss_gradients(
    global_params: ParamVector, members: Sequence[ParamVector], features: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Gradient of the loss with respect to the global parameters and to the features."""
    n = features.shape[0]
    g_cache = forward_cache(global_params, features)
    log_p = log_softmax(g_cache[-1])
    p = np.exp(log_p)
    d_global = np.zeros_like(p)
    d_features = np.zeros_like(features)
    for member in members:
        m_cache = forward_cache(member, features)
        log_q = log_softmax(m_cache[-1])
        gap = log_p - log_q
        kl = (p * gap).sum(axis=1, keepdims=True)
        d_global += p * (gap - kl)
        _, d_member_input = backward(member, m_cache, (np.exp(log_q) - p) / n)
        d_features += d_member_input
    grad, d_global_input = backward(global_params, g_cache, d_global / n)
    return grad, d_features + d_global_input


def distill_gradients(
    gen: GeneratorModel,
    global_params: ParamVector,
    members: Sequence[ParamVector],
    shadow: ShadowBatch,
) -> tuple[np.ndarray, np.ndarray]:
    """Exact gradients of the distillation loss for the global model and the generator.

    The generator gradient treats the batch's noise and labels as fixed.
    """
    _check_members(global_params, members)
    cache, features = _generate(gen, shadow.inputs)
    global_grad, d_features = _loss_gradients(global_params, members, features)
    if gen.output_bound is not None:
        d_features = d_features * (gen.output_bound - features**2 / gen.output_bound)
    gen_grad, _ = backward(gen.params, cache, d_features)
    return global_grad, gen_grad


@dataclass(frozen=True)
class DistillStep:
    """One inner step: loss at the start, around the global descent, and validation accuracy."""

    step: int
    loss: float
    before_descent: float
    after_descent: float
    global_acc: float = float("nan")

    def csv_row(self) -> list[str]:
        acc = "" if np.isnan(self.global_acc) else f"{self.global_acc:.4f}"
        return [str(self.step), f"{self.loss:.6f}", acc]


def _finite(value: float, what: str) -> float:
    if not np.isfinite(value):
        raise NumericalError(f"{what} diverged")
    return value


def adversarial_round(
    gen: GeneratorModel,
    global_params: ParamVector,
    members: Sequence[ParamVector],
    phi: float = 0.2,
    budget: int = 30,
    *,
    batch_size: int = 128,
    seed: int = 0,
    lr_generator: float = 0.05,
    lr_global: float = 0.1,
    validation: Dataset | None = None,
    round_index: int = 0,
) -> tuple[ParamVector, GeneratorModel, list[DistillStep]]:
    """Alternate generator ascent and global descent until the loss is at most ``phi``.

    Returns:
        The distilled global, the updated generator and one trace entry per step.

    Raises:
        DomainError: If ``phi <= 0`` or ``budget < 1``.
        NumericalError: If the loss or a gradient diverges; the caller keeps its global.
    """
    if phi <= 0:
        raise DomainError(f"phi must be positive, got {phi}")
    if budget < 1:
        raise DomainError(f"budget must be at least 1, got {budget}")
    _check_members(global_params, members)
    if gen.feature_dim != global_params.schema.input_dim:
        raise SchemaError("generator output does not match the model input")

    rng = np.random.default_rng(seed)
    gen_state = make_optimizer(OptimizerKind.SGD, lr_generator)
    global_state = make_optimizer(OptimizerKind.SGD, lr_global)
    trace: list[DistillStep] = []

    def measured_accuracy(params: ParamVector) -> float:
        return accuracy(params, validation) if validation is not None else float("nan")

    for step in range(budget):
        shadow = generate_shadow(gen, batch_size, rng, round_index)
        loss = _finite(distill_loss(global_params, members, shadow), "distillation loss")
        if loss <= phi:
            trace.append(DistillStep(step, loss, loss, loss, measured_accuracy(global_params)))
            break

        _, gen_grad = distill_gradients(gen, global_params, members, shadow)
        gen_params, gen_state = optimizer_step(gen_state, gen.params, lambda _: -gen_grad)
        gen = gen.with_params(gen_params)
        shadow = regenerate(gen, shadow)

        before = _finite(distill_loss(global_params, members, shadow), "distillation loss")
        targets = np.mean(
            [softmax(forward_cache(m, shadow.features)[-1]) for m in members], axis=0
        )
        _, descent = soft_target_loss_and_grad(global_params, shadow.features, targets)
        global_params, global_state = optimizer_step(global_state, global_params, lambda _: descent)
        after = _finite(distill_loss(global_params, members, shadow), "distillation loss")
        trace.append(DistillStep(step, loss, before, after, measured_accuracy(global_params)))

    logger.debug(
        "distillation stopped after %d steps at loss %.4f", len(trace), trace[-1].after_descent
    )
    return global_params, gen, trace


def guard_distillation(
    merged: ParamVector,
    distilled: ParamVector,
    validation: Dataset,
    tolerance: float = 1.0,
) -> tuple[ParamVector, bool]:
    """Keep ``distilled`` unless it loses more than ``tolerance`` accuracy points.

    Returns:
        The chosen model and whether the distilled one was kept.
    """
    before = accuracy(merged, validation)
    after = accuracy(distilled, validation)
    if after < before - tolerance:
        logger.info("distilled global rejected: %.2f%% -> %.2f%%", before, after)
        return merged, False
    return distilled, True
