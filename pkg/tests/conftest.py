"""Shared fixtures for the ledgerfl tests."""

from __future__ import annotations

from typing import Any, Callable

import numpy as np
import pytest

from ledgerfl.config.settings import AttackSettings, RoundConfig
from ledgerfl.core.data import gen_synthetic
from ledgerfl.core.models import Batch, Dataset, ModelSchema, ParamVector
from ledgerfl.crypto.base import HeParams, KeyMaterial, keygen


@pytest.fixture
def blobs() -> Dataset:
    """Fixture providing a small, well separated two-class dataset."""
    return gen_synthetic(num_classes=2, dim=4, per_class=50, class_separation=3.0, seed=3)


@pytest.fixture
def three_class_blobs() -> Dataset:
    """Fixture providing a three-class dataset."""
    return gen_synthetic(num_classes=3, dim=5, per_class=40, class_separation=2.5, seed=11)


@pytest.fixture
def small_batch(blobs: Dataset) -> Batch:
    """Fixture providing a 16-sample batch."""
    return blobs.subset(np.arange(16)).as_batch()


@pytest.fixture
def logistic_schema() -> ModelSchema:
    """Fixture providing a logistic schema matching ``blobs``."""
    return ModelSchema.logistic(4, 2)


@pytest.fixture
def mlp_schema() -> ModelSchema:
    """Fixture providing a one-hidden-layer perceptron matching ``blobs``."""
    return ModelSchema.mlp(4, [6], 2)


@pytest.fixture
def random_params(logistic_schema: ModelSchema) -> ParamVector:
    """Fixture providing non-zero logistic parameters."""
    return ParamVector.random(logistic_schema, np.random.default_rng(5), scale=0.5)


@pytest.fixture(scope="session")
def exact_key() -> KeyMaterial:
    """Fixture providing ExactMock consortium keys."""
    return keygen(HeParams(), 1, "exact")


@pytest.fixture(scope="session")
def lattice_key() -> KeyMaterial:
    """Fixture providing lattice consortium keys at N=1024."""
    return keygen(HeParams(ring_degree=1024), 1, "lattice")


@pytest.fixture(params=["exact", "lattice"])
def any_key(request: pytest.FixtureRequest, exact_key: KeyMaterial, lattice_key: KeyMaterial):
    """Fixture running a test once per encryption backend."""
    return exact_key if request.param == "exact" else lattice_key


@pytest.fixture
def make_config() -> Callable[..., RoundConfig]:
    """Fixture providing a factory for small, fast experiment configs."""

    def factory(**overrides: Any) -> RoundConfig:
        values: dict[str, Any] = {
            "enterprises": 6,
            "rounds": 2,
            "selected": 4,
            "epochs": 2,
            "batch_size": 32,
            "learning_rate": 0.05,
            "mu": 0.0,
            "medoids": 8,
            "backend": "exact",
            "aggregator": "clustered",
            "seed": 7,
            "miners": 1,
            "validator_ratio": 0.2,
            "optimizers": {"logistic": "sgd", "mlp": "adam"},
            "wgan_budget": 3,
            "wgan_batch": 16,
            "wgan_hidden": 8,
            "wgan_noise_dim": 4,
            "dim": 4,
            "per_class": 60,
            "class_separation": 3.0,
            "alpha": 1.0,
            "gml_iterations": 20,
            "gml_restarts": 1,
            "workers": 1,
            "attack": AttackSettings(kinds=[]),
        }
        values.update(overrides)
        return RoundConfig(**values).validate()

    return factory
