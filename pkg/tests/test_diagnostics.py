"""Tests for the convergence diagnostics."""

from __future__ import annotations

import numpy as np
import pytest

from ledgerfl.core.diagnostics import (
    clustering_gain_check,
    descent_trace,
    divergence_check,
    estimate_smoothness,
    fit_optimum,
    gradient_bound,
    is_non_increasing,
    mixture_identity_check,
)
from ledgerfl.core.data import gen_synthetic
from ledgerfl.core.errors import ConfigError, DomainError
from ledgerfl.core.metrics import accuracy
from ledgerfl.core.models import Dataset, ModelSchema, ParamVector
from ledgerfl.core.numerics import loss_and_grad
from ledgerfl.crypto.base import KeyMaterial


class TestBounds:
    """Tests for gradient_bound and divergence_check."""

    def test_gradient_bound_is_max_squared_norm(self) -> None:
        """Test C = max ‖g‖²."""
        assert gradient_bound([np.array([1.0, 0.0]), np.array([3.0, 4.0])]) == 25.0

    def test_empty_window_raises(self) -> None:
        """Test that no gradients raises DomainError."""
        with pytest.raises(DomainError):
            gradient_bound([])

    def test_divergence_within_bound(self) -> None:
        """Test models within δ²·r̄²·C of their mean."""
        models = [np.array([1.0, 0.0]), np.array([-1.0, 0.0])]
        assert divergence_check(models, np.zeros(2), delta=0.5, r_bar=2, c_bound=1.0)
        assert not divergence_check(models, np.zeros(2), delta=0.4, r_bar=2, c_bound=1.0)

    def test_negative_constant_raises(self) -> None:
        """Test that negative constants raise DomainError."""
        with pytest.raises(DomainError):
            divergence_check([np.zeros(2)], np.zeros(2), delta=-1.0, r_bar=1, c_bound=1.0)


class TestMixtureIdentity:
    """Tests for mixture_identity_check."""

    def test_identity_holds(self) -> None:
        """Test the averaged model as a μ-weighted mixture."""
        rng = np.random.default_rng(0)
        benign = [rng.normal(size=5) for _ in range(3)]
        malicious = [rng.normal(size=5)]
        assert mixture_identity_check(benign, malicious, mu=0.25)

    def test_identity_under_lattice_keys(self, lattice_key: KeyMaterial) -> None:
        """Test the identity with CKKS noise and a looser tolerance."""
        rng = np.random.default_rng(1)
        benign = [rng.normal(size=4) for _ in range(2)]
        malicious = [rng.normal(size=4) for _ in range(2)]
        assert mixture_identity_check(benign, malicious, 0.5, key=lattice_key, tol=1e-4)

    def test_inconsistent_mu_raises(self) -> None:
        """Test that μ must match the set sizes."""
        with pytest.raises(DomainError):
            mixture_identity_check([np.zeros(2)], [np.zeros(2)], mu=0.2)

    def test_no_updates_raises(self) -> None:
        """Test that empty inputs raise DomainError."""
        with pytest.raises(DomainError):
            mixture_identity_check([], [], mu=0.0)


class TestDescent:
    """Tests for the smoothness estimate and full-batch descent."""

    def test_smoothness_is_positive(
        self, random_params: ParamVector, blobs: Dataset
    ) -> None:
        """Test that β̂ is a positive finite number."""
        beta = estimate_smoothness(random_params, blobs.as_batch())
        assert np.isfinite(beta)
        assert beta > 0.0

    def test_descent_is_monotone(self, random_params: ParamVector, blobs: Dataset) -> None:
        """Test that η = 1/(2β̂) gives non-increasing losses."""
        losses = descent_trace(random_params, blobs.as_batch(), steps=10)
        assert len(losses) == 11
        assert is_non_increasing(losses, slack=1e-9)
        assert losses[-1] < losses[0]

    def test_zero_steps_raises(self, random_params: ParamVector, blobs: Dataset) -> None:
        """Test that steps < 1 raises DomainError."""
        with pytest.raises(DomainError):
            descent_trace(random_params, blobs.as_batch(), steps=0)

    def test_is_non_increasing(self) -> None:
        """Test the monotonicity helper."""
        assert is_non_increasing([3.0, 2.0, 2.0, 1.0])
        assert not is_non_increasing([1.0, 2.0])

    def test_fit_optimum_learns_the_blobs(
        self, logistic_schema: ModelSchema, blobs: Dataset
    ) -> None:
        """Test that direct training separates well separated classes."""
        optimum = fit_optimum(blobs, logistic_schema, epochs=100)
        assert accuracy(optimum, blobs) > 90.0


class TestClusteringGain:
    """Tests for clustering_gain_check."""

    def test_clustered_models_closer_to_their_optima(self) -> None:
        """Test a clustered series that tracks two distinct optima."""
        optima = {0: np.array([1.0, 0.0]), 1: np.array([-1.0, 0.0])}
        clustered = [
            {0: np.array([1.0, 0.1 / (r + 1)]), 1: np.array([-1.0, 0.1 / (r + 1)])}
            for r in range(5)
        ]
        uniform = [np.zeros(2)] * 5
        report = clustering_gain_check(clustered, uniform, optima, burn_in=2)
        assert report.passed
        assert report.share == 1.0
        assert len(report.rounds) == 5
        assert report.to_dict()["burn_in"] == 2

    def test_burn_in_beyond_series_counts_everything(self) -> None:
        """Test the fallback when every round is inside the burn-in."""
        optima = {0: np.zeros(2)}
        report = clustering_gain_check(
            [{0: np.ones(2)}], [np.zeros(2)], optima, burn_in=10
        )
        assert report.share == 0.0
        assert not report.passed

    def test_missing_optimum_raises(self) -> None:
        """Test that an unknown distribution raises ConfigError."""
        with pytest.raises(ConfigError):
            clustering_gain_check([{3: np.zeros(2)}], [np.zeros(2)], {0: np.zeros(2)})

    def test_misaligned_series_raise(self) -> None:
        """Test that series of different lengths raise DomainError."""
        with pytest.raises(DomainError):
            clustering_gain_check([], [np.zeros(2)], {})


class TestConvergenceCriteria:
    """Seeded runs of the descent and divergence checks."""

    @pytest.mark.parametrize("seed", range(20))
    def test_descent_over_one_hundred_steps(
        self, logistic_schema: ModelSchema, seed: int
    ) -> None:
        """Test monotone full-batch losses at η = 1/(2β̂) for 100 steps."""
        data = gen_synthetic(2, 4, 50, 2.0, seed=seed)
        start = ParamVector.random(logistic_schema, np.random.default_rng(seed))
        losses = descent_trace(start, data.as_batch(), steps=100)
        assert is_non_increasing(losses, slack=1e-9)

    def test_iid_shards_stay_within_the_bound(self, logistic_schema: ModelSchema) -> None:
        """Test local models against the round's averaged model over 50 IID rounds."""
        data = gen_synthetic(2, 4, 200, 2.0, seed=0)
        order = np.random.default_rng(0).permutation(len(data))
        batches = [data.subset(part).as_batch() for part in np.array_split(order, 5)]
        delta, local_steps = 0.1, 5
        global_model = ParamVector.random(logistic_schema, np.random.default_rng(1))
        for _ in range(50):
            local_models, grads = [], []
            for batch in batches:
                model = global_model
                for _ in range(local_steps):
                    grad = loss_and_grad(model, batch)[1]
                    grads.append(grad)
                    model = model - grad.scaled(delta)
                local_models.append(model)
            c_bound = gradient_bound(grads)
            assert divergence_check(local_models, global_model, delta, local_steps, c_bound)
            global_model = global_model.with_values(
                np.mean([m.values for m in local_models], axis=0)
            )

    def test_single_step_meets_the_bound(self) -> None:
        """Test that one local step from a shared start satisfies the bound."""
        start = np.zeros(3)
        grads = [np.array([1.0, 0.0, 0.0]), np.array([0.0, -2.0, 0.0])]
        local_models = [start - 0.5 * g for g in grads]
        averaged = np.mean(local_models, axis=0)
        assert divergence_check(local_models, averaged, 0.5, 1, gradient_bound(grads))

    def test_unaccounted_gradient_fails(self) -> None:
        """Test that a gradient left out of C is reported as a violation."""
        start = np.zeros(2)
        honest = np.array([0.1, 0.0])
        local_models = [start - honest, start - 100.0 * np.array([0.0, 1.0])]
        averaged = np.mean(local_models, axis=0)
        assert not divergence_check(local_models, averaged, 1.0, 1, gradient_bound([honest]))
