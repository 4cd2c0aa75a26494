"""Experiment configuration for ledgerfl."""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any

from ledgerfl.core.attacks import SCENARIOS, AttackKind
from ledgerfl.core.errors import ConfigError

BACKENDS = ("exact", "lattice")
AGGREGATORS = ("clustered", "fedavg", "fedprox", "fedadam", "krum", "rfa")
MODEL_TYPES = ("logistic", "mlp")
OPTIMIZERS = ("sgd", "adam", "lbfgs")
DATASETS = ("synthetic", "idx")
FEATURE_SKEWS = ("none", "rotate", "scale", "bias")
RING_DEGREES = (1024, 2048, 4096)

DEFAULT_SEED = 0
DEFAULT_ROUNDS = 50
DEFAULT_ENTERPRISES = 100
DEFAULT_BACKEND = "lattice"
DEFAULT_AGGREGATOR = "clustered"
DEFAULT_WORKERS = 1


def _env_int(name: str) -> int | None:
    value = os.getenv(name)
    if value:
        try:
            return int(value)
        except ValueError:
            pass  # Keep default value if env var is not a valid integer
    return None


@dataclass
class AttackSettings:
    """Attack mix run by the malicious share of enterprises."""

    kinds: list[str] = field(
        default_factory=lambda: [
            AttackKind.DATA_POISON_NOISE.value,
            AttackKind.MODEL_POISON_NOISE.value,
        ]
    )
    sigma_data: float = 5.0
    sigma_model: float = 10.0

    def attack_kinds(self) -> frozenset[AttackKind]:
        return frozenset(AttackKind(k) for k in self.kinds)

    def errors(self) -> list[str]:
        problems = []
        known = {k.value for k in AttackKind}
        unknown = sorted(set(self.kinds) - known)
        if unknown:
            problems.append(f"unknown attack kinds: {', '.join(unknown)}")
        if self.sigma_data < 0 or self.sigma_model < 0:
            problems.append("attack noise levels must be non-negative")
        return problems

    def to_dict(self) -> dict[str, Any]:
        """Convert to dictionary."""
        return {
            "kinds": list(self.kinds),
            "sigma_data": self.sigma_data,
            "sigma_model": self.sigma_model,
        }

    @staticmethod
    def from_dict(data: dict[str, Any]) -> AttackSettings:
        """Create from dictionary.

        Raises:
            ConfigError: On unknown keys.
        """
        unknown = sorted(set(data) - {"kinds", "sigma_data", "sigma_model"})
        if unknown:
            raise ConfigError(f"unknown attack keys: {', '.join(unknown)}")
        defaults = AttackSettings()
        return AttackSettings(
            kinds=list(data.get("kinds", defaults.kinds)),
            sigma_data=float(data.get("sigma_data", defaults.sigma_data)),
            sigma_model=float(data.get("sigma_model", defaults.sigma_model)),
        )


@dataclass
class RoundConfig:
    """Every knob of a federation experiment.

    ``seed``, ``rounds``, ``enterprises``, ``backend``, ``aggregator`` and ``workers`` fall
    back to the LEDGERFL_* environment variables when not given explicitly.
    """

    # Protocol
    enterprises: int | None = None
    rounds: int | None = None
    selected: int = 20
    epochs: int = 30
    batch_size: int = 64
    learning_rate: float = 0.01
    alpha: float = 0.1
    mu: float = 0.2
    phi: float = 0.2
    phi1: float = -0.7
    phi2: float = 0.7
    medoids: int = 64
    backend: str = ""
    aggregator: str = ""
    seed: int | None = None

    # Consortium
    miners: int = 2
    validator_ratio: float = 0.1
    reward: float = 1.0
    penalty: float = -1.0
    strike_limit: int = 5
    delays: list[int] = field(default_factory=list)

    # Models and optimizers
    model_types: list[str] = field(default_factory=lambda: ["logistic"])
    hidden: int = 16
    optimizers: dict[str, str] = field(
        default_factory=lambda: {"logistic": "lbfgs", "mlp": "adam"}
    )
    lbfgs_window: int = 5
    adam_betas: tuple[float, float] = (0.9, 0.9)
    prox_mu: float = 0.01
    server_lr: float = 0.01

    # Clustering and distillation
    ap_damping: float = 0.5
    ap_max_iter: int = 200
    ap_window: int = 15
    wgan_budget: int = 30
    wgan_batch: int = 128
    wgan_noise_dim: int = 16
    wgan_hidden: int = 32
    wgan_lr_generator: float = 0.05
    wgan_lr_global: float = 0.1

    # Data
    dataset: str = "synthetic"
    num_classes: int = 2
    dim: int = 8
    per_class: int = 1000
    class_separation: float = 2.0
    idx_train_images: str = ""
    idx_train_labels: str = ""
    idx_test_images: str = ""
    idx_test_labels: str = ""
    test_fraction: float = 0.2
    validation_fraction: float = 0.05
    feature_skew: str = "none"
    rebalance: bool = False
    partition_repair: bool = True

    # Encryption
    ring_degree: int = 1024

    # Attacks and evaluation
    attack: AttackSettings = field(default_factory=AttackSettings)
    scenario: int | None = None
    gml_iterations: int = 300
    gml_restarts: int = 3
    membership_threshold: float = 0.9

    # Outputs and execution
    record_timings: bool = True
    track_gml: bool = True
    charts: bool = False
    workers: int | None = None

    def __post_init__(self) -> None:
        """Fill unset fields from environment variables, then the defaults."""
        if self.seed is None:
            env = _env_int("LEDGERFL_SEED")
            self.seed = DEFAULT_SEED if env is None else env
        if self.rounds is None:
            env = _env_int("LEDGERFL_ROUNDS")
            self.rounds = DEFAULT_ROUNDS if env is None else env
        if self.enterprises is None:
            env = _env_int("LEDGERFL_ENTERPRISES")
            self.enterprises = DEFAULT_ENTERPRISES if env is None else env
        if self.workers is None:
            env = _env_int("LEDGERFL_WORKERS")
            self.workers = DEFAULT_WORKERS if env is None else env
        if not self.backend:
            self.backend = os.getenv("LEDGERFL_BACKEND", DEFAULT_BACKEND)
        if not self.aggregator:
            self.aggregator = os.getenv("LEDGERFL_AGGREGATOR", DEFAULT_AGGREGATOR)
        self.adam_betas = tuple(self.adam_betas)  # type: ignore[assignment]
        if isinstance(self.attack, dict):
            self.attack = AttackSettings.from_dict(self.attack)

    def attack_kinds(self) -> frozenset[AttackKind]:
        """The scenario's attack mix when a scenario is set, else the attack settings'."""
        if self.scenario is not None:
            return SCENARIOS[self.scenario].kinds
        return self.attack.attack_kinds()

    def measures(self, kind: AttackKind) -> bool:
        """Whether an inference measurement runs; a scenario limits them to the kinds it lists."""
        return self.scenario is None or kind in SCENARIOS[self.scenario].kinds

    def delay_of(self, enterprise_id: int) -> int:
        return self.delays[enterprise_id] if enterprise_id < len(self.delays) else 0

    def errors(self) -> list[str]:
        """Validation problems; an empty list means the config is valid."""
        problems: list[str] = []

        def need(condition: bool, message: str) -> None:
            if not condition:
                problems.append(message)

        need(self.enterprises >= 1, "enterprises must be at least 1")
        need(self.rounds >= 1, "rounds must be at least 1")
        need(self.selected >= 1, "selected must be at least 1")
        need(self.epochs >= 1, "epochs must be at least 1")
        need(self.batch_size >= 1 and self.wgan_batch >= 1, "batch sizes must be at least 1")
        need(self.learning_rate > 0, "learning_rate must be positive")
        need(self.alpha > 0, "alpha must be positive")
        need(0.0 <= self.mu <= 1.0, "mu must lie in [0, 1]")
        need(self.phi > 0, "phi must be positive")
        need(-1.0 <= self.phi1 < self.phi2 <= 1.0, "need -1 <= phi1 < phi2 <= 1")
        need(self.medoids >= 1, "medoids must be at least 1")
        need(self.backend in BACKENDS, f"backend must be one of {BACKENDS}")
        need(self.aggregator in AGGREGATORS, f"aggregator must be one of {AGGREGATORS}")
        need(self.miners >= 1, "miners must be at least 1")
        need(0.0 < self.validator_ratio <= 1.0, "validator_ratio must lie in (0, 1]")
        need(self.strike_limit >= 1, "strike_limit must be at least 1")
        need(all(d >= 0 for d in self.delays), "delays must be non-negative")
        need(len(self.delays) <= self.enterprises, "more delays than enterprises")
        need(bool(self.model_types), "model_types must not be empty")
        need(set(self.model_types) <= set(MODEL_TYPES), f"model_types must be in {MODEL_TYPES}")
        need(
            all(self.optimizers.get(t) in OPTIMIZERS for t in self.model_types),
            f"every model type needs an optimizer in {OPTIMIZERS}",
        )
        need(self.hidden >= 1 and self.wgan_hidden >= 1, "hidden widths must be at least 1")
        need(self.lbfgs_window >= 1, "lbfgs_window must be at least 1")
        need(
            len(self.adam_betas) == 2 and all(0 < b < 1 for b in self.adam_betas),
            "adam_betas must be two values in (0, 1)",
        )
        need(self.prox_mu >= 0 and self.server_lr > 0, "prox_mu >= 0 and server_lr > 0")
        need(0.5 <= self.ap_damping < 1.0, "ap_damping must lie in [0.5, 1)")
        need(self.ap_max_iter >= 1 and self.ap_window >= 1, "AP iteration limits must be >= 1")
        need(self.wgan_budget >= 1, "wgan_budget must be at least 1")
        need(self.wgan_noise_dim >= 1, "wgan_noise_dim must be at least 1")
        need(self.wgan_lr_generator > 0 and self.wgan_lr_global > 0, "wgan rates must be > 0")
        need(self.dataset in DATASETS, f"dataset must be one of {DATASETS}")
        if self.dataset == "idx":
            need(
                all([self.idx_train_images, self.idx_train_labels]),
                "idx datasets need idx_train_images and idx_train_labels",
            )
        need(self.num_classes >= 2, "num_classes must be at least 2")
        need(self.dim >= 1 and self.per_class >= 1, "dim and per_class must be at least 1")
        need(self.class_separation >= 0, "class_separation must be non-negative")
        need(0.0 < self.test_fraction < 1.0, "test_fraction must lie in (0, 1)")
        need(0.0 <= self.validation_fraction < 1.0, "validation_fraction must lie in [0, 1)")
        need(self.feature_skew in FEATURE_SKEWS, f"feature_skew must be one of {FEATURE_SKEWS}")
        need(isinstance(self.partition_repair, bool), "partition_repair must be true or false")
        need(isinstance(self.rebalance, bool), "rebalance must be true or false")
        need(self.ring_degree in RING_DEGREES, f"ring_degree must be one of {RING_DEGREES}")
        need(self.scenario is None or self.scenario in SCENARIOS, "unknown attack scenario")
        need(self.gml_iterations >= 1, "gml_iterations must be at least 1")
        need(self.gml_restarts >= 1, "gml_restarts must be at least 1")
        need(0.0 < self.membership_threshold <= 1.0, "membership_threshold must lie in (0, 1]")
        need(self.workers >= 1, "workers must be at least 1")
        problems.extend(self.attack.errors())
        return problems

    def validate(self) -> RoundConfig:
        """Return ``self`` when valid.

        Raises:
            ConfigError: Listing every problem found.
        """
        problems = self.errors()
        if problems:
            raise ConfigError("; ".join(problems))
        return self

    def to_dict(self) -> dict[str, Any]:
        """Convert to dictionary."""
        data = asdict(self)
        data["adam_betas"] = list(self.adam_betas)
        data["attack"] = self.attack.to_dict()
        return data

    @staticmethod
    def from_dict(data: dict[str, Any]) -> RoundConfig:
        """Create from dictionary.

        Raises:
            ConfigError: On unknown keys or values of the wrong type.
        """
        known = {f.name for f in fields(RoundConfig)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        values = dict(data)
        if "attack" in values:
            if not isinstance(values["attack"], dict):
                raise ConfigError("attack must be an object")
            values["attack"] = AttackSettings.from_dict(values["attack"])
        if "adam_betas" in values:
            values["adam_betas"] = tuple(values["adam_betas"])
        try:
            return RoundConfig(**values)
        except TypeError as exc:
            raise ConfigError(f"invalid config: {exc}") from exc


def config_digest(cfg: RoundConfig) -> str:
    """SHA-256 of the canonical JSON form of ``cfg``."""
    canonical = json.dumps(cfg.to_dict(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def get_settings() -> RoundConfig:
    """Default configuration with environment overrides applied."""
    return RoundConfig()


def load_config(path: str | Path) -> RoundConfig:
    """Load and validate a JSON config file.

    Raises:
        ConfigError: If the file cannot be read, is not a JSON object, or is invalid.
    """
    path = Path(path)
    try:
        with path.open("r", encoding="utf-8") as f:
            data = json.load(f)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"config {path} must contain a JSON object")
    return RoundConfig.from_dict(data).validate()
