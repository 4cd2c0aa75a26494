"""Unit tests for the shadow generator and ensemble distillation."""

from __future__ import annotations

import numpy as np
import numpy.testing as npt
import pytest

from ledgerfl.core.data import gen_synthetic
from ledgerfl.core.errors import DomainError, SchemaError
from ledgerfl.core.metrics import accuracy
from ledgerfl.core.models import Dataset, ModelSchema, ParamVector
from ledgerfl.core.wgan import (
    DistillStep,
    GeneratorModel,
    adversarial_round,
    distill_gradients,
    distill_loss,
    generate_shadow,
    guard_distillation,
    label_prior,
    regenerate,
)


@pytest.fixture
def generator() -> GeneratorModel:
    """Fixture providing a small generator for four-feature, two-class data."""
    return GeneratorModel.create(feature_dim=4, prior=[0.5, 0.5], noise_dim=3, hidden=5, seed=0)


@pytest.fixture
def members(logistic_schema: ModelSchema) -> list[ParamVector]:
    """Fixture providing two distinct member models."""
    return [
        ParamVector.random(logistic_schema, np.random.default_rng(s), scale=1.0) for s in (1, 2)
    ]


class TestLabelPrior:
    """Tests for label_prior."""

    def test_frequencies(self) -> None:
        """Test normalized class counts."""
        npt.assert_allclose(label_prior([2, 6]), [0.25, 0.75])

    def test_zero_counts_are_uniform(self) -> None:
        """Test the uniform fallback."""
        npt.assert_allclose(label_prior([0, 0, 0, 0]), [0.25] * 4)

    def test_negative_counts_raise(self) -> None:
        """Test that negative counts raise DomainError."""
        with pytest.raises(DomainError):
            label_prior([1, -1])


class TestGenerator:
    """Tests for the generator and shadow batches."""

    def test_shadow_shape(self, generator: GeneratorModel) -> None:
        """Test batch shape and label range."""
        shadow = generate_shadow(generator, 10, seed=1, round_index=3)
        assert shadow.features.shape == (10, 4)
        assert set(shadow.labels.tolist()) <= {0, 1}
        assert shadow.round == 3
        assert len(shadow) == 10

    def test_same_seed_same_batch(self, generator: GeneratorModel) -> None:
        """Test deterministic sampling."""
        a = generate_shadow(generator, 6, seed=4)
        b = generate_shadow(generator, 6, seed=4)
        npt.assert_array_equal(a.features, b.features)

    def test_prior_with_one_class_only_draws_it(self) -> None:
        """Test that labels follow the prior."""
        gen = GeneratorModel.create(4, [0.0, 1.0], noise_dim=2, hidden=3, seed=0)
        assert set(generate_shadow(gen, 20, seed=0).labels.tolist()) == {1}

    def test_output_bound(self) -> None:
        """Test that bounded generators stay inside the bound."""
        gen = GeneratorModel.create(4, [0.5, 0.5], noise_dim=3, hidden=5, seed=0, output_bound=0.5)
        assert np.abs(generate_shadow(gen, 50, seed=0).features).max() <= 0.5

    def test_regenerate_keeps_inputs(self, generator: GeneratorModel) -> None:
        """Test that regeneration with the same generator reproduces the batch."""
        shadow = generate_shadow(generator, 5, seed=2)
        npt.assert_allclose(regenerate(generator, shadow).features, shadow.features)

    def test_empty_batch_raises(self, generator: GeneratorModel) -> None:
        """Test that batch_size < 1 raises DomainError."""
        with pytest.raises(DomainError):
            generate_shadow(generator, 0)

    def test_invalid_prior_raises(self, generator: GeneratorModel) -> None:
        """Test that a prior not summing to one raises DomainError."""
        with pytest.raises(DomainError):
            GeneratorModel(generator.params, generator.noise_dim, np.array([0.5, 0.6]))


class TestDistillLoss:
    """Tests for distill_loss and its gradients."""

    def test_non_negative(
        self, generator: GeneratorModel, random_params: ParamVector, members: list[ParamVector]
    ) -> None:
        """Test that the KL sum is non-negative."""
        shadow = generate_shadow(generator, 16, seed=0)
        assert distill_loss(random_params, members, shadow) >= 0.0

    def test_zero_against_itself(
        self, generator: GeneratorModel, random_params: ParamVector
    ) -> None:
        """Test that a model does not disagree with itself."""
        shadow = generate_shadow(generator, 16, seed=0)
        assert distill_loss(random_params, [random_params], shadow) == pytest.approx(0.0)

    def test_no_members_raises(self, generator: GeneratorModel, random_params: ParamVector) -> None:
        """Test that an empty member list raises DomainError."""
        with pytest.raises(DomainError):
            distill_loss(random_params, [], generate_shadow(generator, 4, seed=0))

    def test_member_schema_mismatch_raises(
        self, generator: GeneratorModel, random_params: ParamVector, mlp_schema: ModelSchema
    ) -> None:
        """Test that members must share the global schema."""
        other = ParamVector.zeros(mlp_schema)
        with pytest.raises(SchemaError):
            distill_loss(random_params, [other], generate_shadow(generator, 4, seed=0))

    def test_global_gradient_matches_finite_differences(
        self, generator: GeneratorModel, random_params: ParamVector, members: list[ParamVector]
    ) -> None:
        """Test the analytic gradient with respect to the global parameters."""
        shadow = generate_shadow(generator, 8, seed=1)
        global_grad, _ = distill_gradients(generator, random_params, members, shadow)
        h = 1e-6
        numeric = np.zeros(len(random_params))
        for i in range(len(random_params)):
            up, down = random_params.values.copy(), random_params.values.copy()
            up[i] += h
            down[i] -= h
            numeric[i] = (
                distill_loss(random_params.with_values(up), members, shadow)
                - distill_loss(random_params.with_values(down), members, shadow)
            ) / (2 * h)
        npt.assert_allclose(global_grad, numeric, atol=1e-5)

    def test_generator_gradient_matches_finite_differences(
        self, generator: GeneratorModel, random_params: ParamVector, members: list[ParamVector]
    ) -> None:
        """Test the analytic gradient with respect to the generator parameters."""
        shadow = generate_shadow(generator, 8, seed=1)
        _, gen_grad = distill_gradients(generator, random_params, members, shadow)
        h = 1e-6
        base = generator.params
        for i in range(0, len(base), 7):
            up, down = base.values.copy(), base.values.copy()
            up[i] += h
            down[i] -= h
            plus = regenerate(generator.with_params(base.with_values(up)), shadow)
            minus = regenerate(generator.with_params(base.with_values(down)), shadow)
            numeric = (
                distill_loss(random_params, members, plus)
                - distill_loss(random_params, members, minus)
            ) / (2 * h)
            assert gen_grad[i] == pytest.approx(numeric, abs=1e-5)


class TestAdversarialRound:
    """Tests for adversarial_round and guard_distillation."""

    def test_stops_immediately_without_disagreement(
        self, generator: GeneratorModel, random_params: ParamVector
    ) -> None:
        """Test that a lone global exits on the first step with zero loss."""
        distilled, _, trace = adversarial_round(
            generator, random_params, [random_params], phi=0.1, budget=5, batch_size=8
        )
        assert len(trace) == 1
        assert trace[0].loss == pytest.approx(0.0)
        npt.assert_array_equal(distilled.values, random_params.values)

    def test_respects_budget(
        self,
        generator: GeneratorModel,
        random_params: ParamVector,
        members: list[ParamVector],
        blobs: Dataset,
    ) -> None:
        """Test the step budget and per-step validation accuracy."""
        _, _, trace = adversarial_round(
            generator,
            random_params,
            members,
            phi=1e-9,
            budget=3,
            batch_size=16,
            validation=blobs,
        )
        assert [s.step for s in trace] == [0, 1, 2]
        assert all(0.0 <= s.global_acc <= 100.0 for s in trace)

    @pytest.mark.parametrize("phi, budget", [(0.0, 5), (0.2, 0)])
    def test_invalid_arguments_raise(
        self, generator: GeneratorModel, random_params: ParamVector, phi: float, budget: int
    ) -> None:
        """Test that phi <= 0 or budget < 1 raises DomainError."""
        with pytest.raises(DomainError):
            adversarial_round(generator, random_params, [random_params], phi=phi, budget=budget)

    def test_distills_a_disagreeing_pair(self, logistic_schema: ModelSchema) -> None:
        """Test that a soft global reaches phi = 0.2 without losing held-out accuracy."""
        weights = np.zeros((4, 2))
        weights[0] = [1.0, -1.0]
        weights[1] = [-1.0, 1.0]
        sharp = ParamVector.from_layers(logistic_schema, [(weights, np.zeros(2))])
        members = [sharp, sharp.scaled(1.1)]
        merged = sharp.scaled(0.25)
        gen = GeneratorModel.create(
            feature_dim=4, prior=[0.5, 0.5], noise_dim=3, hidden=8, seed=0, output_bound=4.0
        )
        held_out = gen_synthetic(2, 4, 500, 6.0, seed=21)
        distilled, _, trace = adversarial_round(
            gen, merged, members, phi=0.2, budget=300, batch_size=64, seed=3
        )
        assert trace[-1].loss <= 0.2
        assert accuracy(distilled, held_out) > accuracy(merged, held_out) - 1.0

    def test_guard_rejects_a_worse_model(
        self, logistic_schema: ModelSchema, blobs: Dataset
    ) -> None:
        """Test that a distilled model losing accuracy is replaced by the merged one."""
        weights = np.zeros((4, 2))
        weights[0] = [3.0, -3.0]
        good = ParamVector.from_layers(logistic_schema, [(weights, np.zeros(2))])
        bad = good.scaled(-1.0)
        chosen, kept = guard_distillation(good, bad, blobs)
        assert not kept
        assert chosen is good

    def test_guard_keeps_an_equal_model(self, random_params: ParamVector, blobs: Dataset) -> None:
        """Test that an unchanged model is kept."""
        chosen, kept = guard_distillation(random_params, random_params, blobs)
        assert kept
        assert chosen is random_params

    def test_csv_row_leaves_missing_accuracy_blank(self) -> None:
        """Test DistillStep.csv_row."""
        assert DistillStep(2, 0.5, 0.5, 0.4).csv_row() == ["2", "0.500000", ""]
