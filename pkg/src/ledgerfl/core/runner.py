"""Round orchestrator for federated training over a permissioned ledger.

This module provides the FederationRunner class that executes the six steps of a round:
- Consortium keys, published once in round 0
- Miner committee and leader chosen by stake, training set Δc drawn at random
- Local training, quantization and encryption of every update
- Audit gate with validator votes, clustering, merge and distillation
- One block per payload kind, then stake rewards and strike bookkeeping

Progress is reported through an event queue and a FederationLogger, and the baseline
aggregators (FedAvg, FedProx, FedAdam, Krum, RFA) run through the same loop on plaintext
updates.
"""

from __future__ import annotations

import hashlib
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from enum import Enum
from queue import Empty, Queue
from typing import Any, Callable, Sequence, TypeVar

import numpy as np

from ledgerfl.chain.ledger import Ledger, PayloadKind, append_block, canonical_json, ensure_valid
from ledgerfl.chain.roles import (
    EnterpriseState,
    RoundRoles,
    apply_reward,
    assign_roles,
    initial_states,
    sync_strikes,
    with_roles,
)
from ledgerfl.config.settings import RoundConfig, config_digest
from ledgerfl.core.aggregate import (
    ApConfig,
    Cluster,
    cluster_models,
    encrypted_sum,
    fedadam_server_update,
    krum,
    merge_clusters,
    rfa_geometric_median,
)
from ledgerfl.core.attacks import (
    AttackKind,
    AttackPlan,
    BoundaryTag,
    GmlReport,
    TraceEntry,
    build_attack_plan,
    collude,
    poison_data,
    poison_model,
    reconstruct_gml,
    victim_batch,
)
from ledgerfl.core.compress import (
    EncryptedUpdate,
    distinct_count,
    encrypt_update,
    quantize_gradient,
)
from ledgerfl.core.data import (
    FeatureTransform,
    apply_feature_skew,
    dirichlet_partition,
    gen_synthetic,
    load_idx,
    rebalance_equal_counts,
    train_test_split,
)
from ledgerfl.core.defense import (
    AuditStatistics,
    Decision,
    GateConfig,
    StrikeBook,
    Verdict,
    audit_statistics,
    commit_outcome,
    gate,
    similarity_from_statistics,
    tally_votes,
)
from ledgerfl.core.errors import DomainError, FederationError, NumericalError, ProtocolHaltError
from ledgerfl.core.logger import FederationLogger, GateStatus
from ledgerfl.core.metrics import (
    CLIENT_PHASES,
    SERVER_PHASES,
    RoundMetrics,
    accuracy,
    phase_totals,
)
from ledgerfl.core.models import Dataset, ModelKind, ModelSchema, ParamVector, Split
from ledgerfl.core.numerics import (
    OptimizerKind,
    OptimizerState,
    ProxTerm,
    loss_and_grad,
    make_optimizer,
    train_epochs,
)
from ledgerfl.core.wgan import (
    DistillStep,
    GeneratorModel,
    adversarial_round,
    guard_distillation,
    label_prior,
)
from ledgerfl.crypto.base import HeParams, KeyMaterial, KeyScope, decrypt_vector, keygen
from ledgerfl.crypto.codec import serialize_key, serialize_vector

T = TypeVar("T")

_GATE_STATUS = {
    Decision.ACCEPT: GateStatus.ACCEPTED,
    Decision.IGNORE: GateStatus.IGNORED,
    Decision.DISCARD: GateStatus.DISCARDED,
}


class RoundState(Enum):
    """State of the federation runner."""

    PENDING = "pending"
    RUNNING = "running"
    DONE = "done"
    HALTED = "halted"
    FAILED = "failed"


class RoundEventType(Enum):
    """Types of events emitted by the runner."""

    STATE_CHANGED = "state_changed"
    ROUND_STARTED = "round_started"
    VERDICT = "verdict"
    BLOCK_APPENDED = "block_appended"
    ROUND_COMPLETED = "round_completed"
    ROUND_FAILED = "round_failed"


@dataclass
class RoundEvent:
    """Event emitted by the runner for progress reporting."""

    event_type: RoundEventType
    round: int
    data: dict[str, Any] = field(default_factory=dict)


def derive_seed(*parts: int) -> int:
    """Deterministic 31-bit seed for one (seed, round, enterprise, purpose) combination."""
    return int(np.random.default_rng([int(p) for p in parts]).integers(0, 2**31 - 1))


def _timed(fn: Callable[[], T]) -> tuple[T, float]:
    started = time.perf_counter()
    result = fn()
    return result, time.perf_counter() - started


# ---------------------------------------------------------------------------
# Setup
# ---------------------------------------------------------------------------


def load_datasets(cfg: RoundConfig) -> tuple[Dataset, Dataset, Dataset | None]:
    """Training pool, test set and the server-held validation split (None when disabled)."""
    if cfg.dataset == "idx":
        train = load_idx(cfg.idx_train_images, cfg.idx_train_labels)
        if cfg.idx_test_images and cfg.idx_test_labels:
            test = load_idx(cfg.idx_test_images, cfg.idx_test_labels, Split.TEST)
        else:
            train, test = train_test_split(train, cfg.test_fraction, cfg.seed)
    else:
        full = gen_synthetic(
            cfg.num_classes, cfg.dim, cfg.per_class, cfg.class_separation, cfg.seed
        )
        train, test = train_test_split(full, cfg.test_fraction, cfg.seed)
    validation = None
    if cfg.validation_fraction > 0:
        train, validation = train_test_split(train, cfg.validation_fraction, cfg.seed + 1)
    return train, test, validation


def feature_transform(
    kind: str, enterprise_id: int, count: int, dim: int, seed: int
) -> FeatureTransform:
    """Per-enterprise feature skew; the strength grows with the enterprise id."""
    position = enterprise_id / max(1, count)
    if kind == "rotate":
        return FeatureTransform.rotate(np.pi * position)
    if kind == "scale":
        return FeatureTransform.scale(0.5 + position)
    if kind == "bias":
        offset = np.random.default_rng([seed, enterprise_id]).normal(0.0, 0.5, size=dim)
        return FeatureTransform.bias(offset)
    return FeatureTransform()


def partition_shards(cfg: RoundConfig, train: Dataset) -> dict[int, Dataset]:
    """Dirichlet label-skew shards, optionally rebalanced and feature-skewed."""
    assignment = dirichlet_partition(
        train, cfg.enterprises, cfg.alpha, cfg.seed, repair=cfg.partition_repair
    )
    if cfg.rebalance:
        assignment = rebalance_equal_counts(assignment)
    shards = {k: train.subset(indices) for k, indices in enumerate(assignment.shards)}
    if cfg.feature_skew != "none":
        for k, shard in shards.items():
            transform = feature_transform(cfg.feature_skew, k, cfg.enterprises, train.dim, cfg.seed)
            features = apply_feature_skew(shard.features, transform, derive_seed(cfg.seed, k))
            shards[k] = replace(shard, features=features)
    return shards


def model_schema(kind: ModelKind, dim: int, num_classes: int, hidden: int) -> ModelSchema:
    if kind is ModelKind.MLP:
        return ModelSchema.mlp(dim, [hidden], num_classes)
    return ModelSchema.logistic(dim, num_classes)


@dataclass(eq=False)
class FederationState:
    """Everything that carries over from one round to the next.

    ``keys`` holds the consortium secret (enterprise side); the leader and the ledger only
    ever see ``public_key``, and validators read audit statistics with ``audit_key``.
    """

    keys: KeyMaterial
    public_key: KeyMaterial
    audit_key: KeyMaterial
    train: Dataset
    test: Dataset
    validation: Dataset | None
    shards: dict[int, Dataset]
    model_types: dict[int, ModelKind]
    plan: AttackPlan
    enterprises: dict[int, EnterpriseState]
    book: StrikeBook
    ledger: Ledger
    globals: dict[ModelKind, ParamVector]
    generators: dict[ModelKind, GeneratorModel]
    server_optimizers: dict[ModelKind, OptimizerState] = field(default_factory=dict)
    round: int = 0
    roles: list[RoundRoles] = field(default_factory=list)
    trace: list[TraceEntry] = field(default_factory=list)
    distill_trace: list[tuple[int, DistillStep]] = field(default_factory=list)
    gml_reports: list[GmlReport] = field(default_factory=list)
    verdicts: list[Verdict] = field(default_factory=list)
    history: list[RoundMetrics] = field(default_factory=list)

    @property
    def active(self) -> list[int]:
        return sorted(i for i, s in self.enterprises.items() if not s.removed)

    @property
    def removed(self) -> list[int]:
        return sorted(i for i, s in self.enterprises.items() if s.removed)

    def stakes(self) -> dict[int, float]:
        return {i: s.stake for i, s in sorted(self.enterprises.items())}


@dataclass(frozen=True, eq=False)
class LocalJob:
    """Pure inputs of one enterprise's local training."""

    enterprise_id: int
    model_type: ModelKind
    shard: Dataset
    start: ParamVector
    optimizer: OptimizerState
    epochs: int
    batch_size: int
    seed: int
    prox: ProxTerm | None = None


@dataclass(frozen=True, eq=False)
class LocalResult:
    enterprise_id: int
    model_type: ModelKind
    update: ParamVector
    loss: float
    seconds: float


def train_local(job: LocalJob) -> LocalResult:
    """Train from the current global and return the update Δ = ω_k − ω_global."""
    (params, _, loss), seconds = _timed(
        lambda: train_epochs(
            job.start,
            job.shard.as_batch(),
            job.epochs,
            job.batch_size,
            job.optimizer,
            job.seed,
            job.prox,
        )
    )
    return LocalResult(job.enterprise_id, job.model_type, params - job.start, loss, seconds)


def seal_update(
    public_key: KeyMaterial,
    update: ParamVector,
    enterprise_id: int,
    round_index: int,
    model_type: ModelKind,
    medoids: int,
    seed: int,
) -> EncryptedUpdate:
    """Quantize an update to at most ``medoids`` values and encrypt it for upload."""
    k = min(medoids, distinct_count(update.values))
    compressed = quantize_gradient(update, k, derive_seed(seed, round_index, enterprise_id, 1))
    return encrypt_update(
        public_key,
        compressed,
        enterprise_id,
        round_index,
        model_type,
        derive_seed(seed, round_index, enterprise_id, 2),
    )


@dataclass
class _Timers:
    record: bool
    values: dict[str, float] = field(
        default_factory=lambda: dict.fromkeys(CLIENT_PHASES + SERVER_PHASES, 0.0)
    )

    def add(self, phase: str, seconds: float) -> None:
        if self.record:
            self.values[phase] += seconds

    def run(self, phase: str, fn: Callable[[], T]) -> T:
        result, seconds = _timed(fn)
        self.add(phase, seconds)
        return result


@dataclass
class _Outcome:
    verdicts: list[Verdict] = field(default_factory=list)
    clusters: int = 0
    models: dict[ModelKind, ParamVector] = field(default_factory=dict)


class FederationRunner:
    """Runner that executes federation rounds and reports through an event queue.

    The runner owns no round state itself: ``initialize`` builds a FederationState and
    ``run_round`` advances it by one round. Local training may run on a thread pool; the
    ledger, the strike book and the stakes are only touched from the calling thread.
    """

    def __init__(
        self,
        cfg: RoundConfig,
        event_queue: Queue[RoundEvent] | None = None,
        logger: FederationLogger | None = None,
        enable_logging: bool = True,
    ) -> None:
        """Initialize the runner.

        Args:
            cfg: Validated experiment configuration.
            event_queue: Queue for progress events. If None, an internal queue is used.
            logger: Optional logger instance for run messages.
            enable_logging: Whether to enable logging (default True).
        """
        self._cfg = cfg.validate()
        self._event_queue = event_queue if event_queue is not None else Queue()
        self._state = RoundState.PENDING
        self._state_lock = threading.Lock()
        self._round = -1
        self._logger = logger
        self._enable_logging = enable_logging
        self._gate = GateConfig(cfg.phi1, cfg.phi2, cfg.strike_limit)
        self._ap = ApConfig(cfg.ap_damping, None, cfg.ap_max_iter, cfg.ap_window)

    @property
    def config(self) -> RoundConfig:
        return self._cfg

    @property
    def state(self) -> RoundState:
        """Get the current runner state."""
        with self._state_lock:
            return self._state

    @property
    def event_queue(self) -> Queue[RoundEvent]:
        return self._event_queue

    def set_logger(self, logger: FederationLogger) -> None:
        self._logger = logger

    def _log(self, level: str, message: str) -> None:
        """Log a message if logging is enabled.

        Args:
            level: Log level (debug, info, warning, error).
            message: Message to log.
        """
        if not self._enable_logging or not self._logger:
            return

        if level == "debug":
            self._logger.debug(message)
        elif level == "info":
            self._logger.info(message)
        elif level == "warning":
            self._logger.warning(message)
        elif level == "error":
            self._logger.error(message)

    def _set_state(self, new_state: RoundState) -> None:
        """Set the runner state and emit an event."""
        with self._state_lock:
            old_state = self._state
            self._state = new_state

        if old_state != new_state:
            self._emit_event(
                RoundEventType.STATE_CHANGED,
                {"old_state": old_state.value, "new_state": new_state.value},
            )

    def _emit_event(self, event_type: RoundEventType, data: dict[str, Any] | None = None) -> None:
        """Emit an event to the progress queue."""
        self._event_queue.put(RoundEvent(event_type, self._round, data or {}))

    def get_events(self, timeout: float = 0.0) -> list[RoundEvent]:
        """Drain pending events, waiting at most ``timeout`` seconds for the first one."""
        events = []
        try:
            first = self._event_queue.get(timeout=timeout) if timeout else None
            events.append(first if first is not None else self._event_queue.get_nowait())
            while True:
                try:
                    events.append(self._event_queue.get_nowait())
                except Empty:
                    break
        except Empty:
            pass
        return events

    # -- setup ---------------------------------------------------------------

    def initialize(self) -> FederationState:
        """Build data, shards, attack plan, keys, initial models and the genesis block."""
        cfg = self._cfg
        train, test, validation = load_datasets(cfg)
        shards = partition_shards(cfg, train)

        kinds = cfg.attack_kinds()
        plan = build_attack_plan(
            cfg.enterprises,
            cfg.mu if kinds else 0.0,
            kinds,
            cfg.seed,
            cfg.attack.sigma_data,
            cfg.attack.sigma_model,
        )
        for k in sorted(plan.malicious):
            if plan.attacks(k, AttackKind.DATA_POISON_NOISE):
                seed = derive_seed(cfg.seed, k, 0xDA7A)
                shards[k] = poison_data(shards[k], plan.sigma_data, seed)

        type_order = [ModelKind(t) for t in cfg.model_types]
        model_types = {k: type_order[k % len(type_order)] for k in range(cfg.enterprises)}
        prior = label_prior(train.class_counts())
        bound = float(np.max(np.abs(validation.features))) if validation is not None else None
        globals_: dict[ModelKind, ParamVector] = {}
        generators: dict[ModelKind, GeneratorModel] = {}
        for index, kind in enumerate(type_order):
            schema = model_schema(kind, train.dim, train.num_classes, cfg.hidden)
            rng = np.random.default_rng([cfg.seed, 0x1417, index])
            globals_[kind] = ParamVector.random(schema, rng)
            generators[kind] = GeneratorModel.create(
                train.dim,
                prior,
                noise_dim=cfg.wgan_noise_dim,
                hidden=cfg.wgan_hidden,
                seed=derive_seed(cfg.seed, 0x6E4, index),
                output_bound=bound or None,
            )

        keys = keygen(HeParams(ring_degree=cfg.ring_degree), cfg.seed, cfg.backend)
        enterprises = initial_states(cfg.enterprises, cfg.delays)
        fed = FederationState(
            keys=keys,
            public_key=keys.public_view(),
            audit_key=keys.with_scope(KeyScope.AUDIT),
            train=train,
            test=test,
            validation=validation,
            shards=shards,
            model_types=model_types,
            plan=plan,
            enterprises=enterprises,
            book=StrikeBook.for_enterprises(enterprises),
            ledger=Ledger.genesis(config_digest(cfg)),
            globals=globals_,
            generators=generators,
        )
        if cfg.aggregator == "fedadam":
            fed.server_optimizers = {
                kind: make_optimizer(OptimizerKind.ADAM, cfg.server_lr, cfg.adam_betas)
                for kind in type_order
            }
        self._log(
            "info",
            f"Federation ready: {cfg.enterprises} enterprises, {len(plan.malicious)} malicious, "
            f"backend={cfg.backend}, aggregator={cfg.aggregator}",
        )
        return fed

    # -- round ---------------------------------------------------------------

    def run(self, fed: FederationState | None = None, rounds: int | None = None) -> FederationState:
        """Run ``rounds`` rounds (default: the configured count) from ``fed`` or a fresh state.

        Raises:
            ProtocolHaltError: If every enterprise has been removed.
        """
        fed = fed if fed is not None else self.initialize()
        for _ in range(rounds if rounds is not None else self._cfg.rounds):
            fed, _ = self.run_round(fed)
        self._set_state(RoundState.DONE)
        return fed

    def run_round(self, fed: FederationState) -> tuple[FederationState, RoundMetrics]:
        """Advance ``fed`` by one round; the state is updated in place and returned.

        Raises:
            ProtocolHaltError: If every enterprise has been removed.
        """
        self._round = fed.round
        self._set_state(RoundState.RUNNING)
        try:
            metrics = self._run_round(fed)
        except ProtocolHaltError as exc:
            self._set_state(RoundState.HALTED)
            self._log("error", f"Round {fed.round} halted: {exc}")
            self._emit_event(RoundEventType.ROUND_FAILED, {"error": str(exc)})
            raise
        except FederationError as exc:
            self._set_state(RoundState.FAILED)
            self._log("error", f"Round {fed.round} failed: {exc}")
            self._emit_event(RoundEventType.ROUND_FAILED, {"error": str(exc)})
            raise
        fed.history.append(metrics)
        fed.round += 1
        self._emit_event(RoundEventType.ROUND_COMPLETED, metrics.to_dict())
        return fed, metrics

    def _run_round(self, fed: FederationState) -> RoundMetrics:
        cfg = self._cfg
        r = fed.round
        if not fed.active:
            raise ProtocolHaltError(f"every enterprise has been removed before round {r}")
        timers = _Timers(cfg.record_timings)

        if not fed.ledger.blocks_of(PayloadKind.KEYS):
            self._publish_keys(fed)

        roles = assign_roles(
            fed.enterprises, cfg.selected, cfg.seed, r, cfg.miners, cfg.validator_ratio
        )
        fed.enterprises = with_roles(fed.enterprises, roles)
        fed.roles.append(roles)
        if self._logger and self._enable_logging:
            self._logger.log_round_start(r, list(roles.selected), roles.leader)
        self._emit_event(RoundEventType.ROUND_STARTED, roles.to_dict())

        prior = dict(fed.globals)
        results = self._train_selected(fed, roles, timers)
        updates = self._apply_collusion(fed, roles, results)

        if cfg.aggregator == "clustered":
            uploads = {
                k: timers.run("T_CKKS", lambda k=k: self._seal(fed, k, updates[k], r))
                for k in roles.selected
            }
            gml = self._attempt_reconstruction(fed, roles, prior, uploads)
            outcome = self._aggregate_clustered(fed, roles, prior, uploads, timers)
            timers.run("T_Agg", lambda: self._write_blocks(fed, roles, outcome, uploads))
        else:
            gml = self._attempt_reconstruction(fed, roles, prior, None)
            outcome = timers.run(
                "T_Agg", lambda: self._aggregate_plain(fed, roles, prior, updates)
            )
            timers.run("T_Agg", lambda: self._write_blocks(fed, roles, outcome, None))

        fed.globals.update(outcome.models)
        fed.verdicts.extend(outcome.verdicts)
        if gml is not None:
            fed.gml_reports.append(gml)
        ensure_valid(fed.ledger)

        selected = max(1, len(roles.selected))
        phases = dict(timers.values)
        for name in CLIENT_PHASES:
            phases[name] /= selected
        comp_client, comp_server = phase_totals(phases)
        by_type = {kind.value: accuracy(model, fed.test) for kind, model in fed.globals.items()}
        counts = {d: sum(1 for v in outcome.verdicts if v.decision is d) for d in Decision}
        if cfg.aggregator != "clustered":
            counts[Decision.ACCEPT] = len(roles.selected)
        metrics = RoundMetrics(
            round=r,
            accuracy=float(np.mean(list(by_type.values()))),
            comp_client=comp_client,
            comp_server=comp_server,
            clusters=outcome.clusters,
            accepted=counts[Decision.ACCEPT],
            ignored=counts[Decision.IGNORE],
            discarded=counts[Decision.DISCARD],
            gml=gml.gml if gml is not None else None,
            stakes=fed.stakes(),
            phases=phases,
            accuracy_by_type=by_type,
        )
        if self._logger and self._enable_logging:
            self._logger.log_round_end(
                r, metrics.accepted, metrics.ignored, metrics.discarded, metrics.accuracy
            )
        return metrics

    # -- keys ------------------------------------------------------------------

    def _publish_keys(self, fed: FederationState) -> None:
        public = serialize_key(fed.public_key)
        payload = {
            "key_id": fed.public_key.key_id,
            "backend": fed.public_key.backend,
            "params": fed.public_key.params.to_dict(),
            "public_key_sha256": hashlib.sha256(public).hexdigest(),
        }
        self._append(fed, PayloadKind.KEYS, payload, miner=0)

    # -- local training --------------------------------------------------------

    def _local_job(self, fed: FederationState, k: int) -> LocalJob:
        cfg = self._cfg
        kind = fed.model_types[k]
        start = fed.globals[kind]
        optimizer = make_optimizer(
            cfg.optimizers[kind.value], cfg.learning_rate, cfg.adam_betas, cfg.lbfgs_window
        )
        prox = ProxTerm(cfg.prox_mu, start) if cfg.aggregator == "fedprox" else None
        return LocalJob(
            enterprise_id=k,
            model_type=kind,
            shard=fed.shards[k],
            start=start,
            optimizer=optimizer,
            epochs=cfg.epochs,
            batch_size=cfg.batch_size,
            seed=derive_seed(cfg.seed, fed.round, k),
            prox=prox,
        )

    def _train_selected(
        self, fed: FederationState, roles: RoundRoles, timers: _Timers
    ) -> dict[int, LocalResult]:
        jobs = [self._local_job(fed, k) for k in roles.selected]
        if self._cfg.workers > 1 and len(jobs) > 1:
            with ThreadPoolExecutor(max_workers=self._cfg.workers) as pool:
                results = list(pool.map(train_local, jobs))
        else:
            results = [train_local(job) for job in jobs]

        trained: dict[int, LocalResult] = {}
        for result in results:
            timers.add("T_LT", result.seconds)
            k = result.enterprise_id
            fed.trace.append(self._trace(fed, "local", k, k, "gradient", BoundaryTag.PLAINTEXT))
            if fed.plan.attacks(k, AttackKind.MODEL_POISON_NOISE):
                poisoned = poison_model(
                    result.update,
                    fed.plan.sigma_model,
                    derive_seed(self._cfg.seed, fed.round, k, 7),
                )
                result = replace(result, update=poisoned)
            trained[k] = result
        return trained

    def _apply_collusion(
        self, fed: FederationState, roles: RoundRoles, results: dict[int, LocalResult]
    ) -> dict[int, ParamVector]:
        updates = {k: res.update for k, res in results.items()}
        if AttackKind.WITHIN_UPDATE_COLLUDE not in fed.plan.kinds:
            return updates
        for kind in sorted({fed.model_types[k] for k in updates}, key=lambda t: t.value):
            group = {
                k: updates[k]
                for k in fed.plan.colluders
                if k in updates and fed.model_types[k] is kind
            }
            if len(group) < 2:
                continue
            rng = np.random.default_rng([self._cfg.seed, fed.round, 0xC011])
            target = rng.normal(size=len(next(iter(group.values()))))
            updates.update(collude(group, target, roles.selected))
            self._log("debug", f"{len(group)} colluders aligned their {kind.value} updates")
        return updates

    def _seal(
        self, fed: FederationState, k: int, update: ParamVector, round_index: int
    ) -> EncryptedUpdate:
        return seal_update(
            fed.public_key,
            update,
            k,
            round_index,
            fed.model_types[k],
            self._cfg.medoids,
            self._cfg.seed,
        )

    # -- audit and aggregation -------------------------------------------------

    def _trace(
        self,
        fed: FederationState,
        role: str,
        holder: int,
        subject: int,
        item: str,
        tag: BoundaryTag,
        individual: bool = True,
    ) -> TraceEntry:
        iteration = fed.enterprises[subject].global_iteration(fed.round) if subject >= 0 else None
        return TraceEntry(fed.round, role, holder, subject, item, tag, individual, iteration)

    def _vote(
        self, fed: FederationState, roles: RoundRoles, k: int, stats: AuditStatistics
    ) -> tuple[float, list[Verdict]]:
        voters = roles.validators or (roles.leader,)
        votes = []
        theta = 0.0
        for voter in voters:
            try:
                theta = similarity_from_statistics(stats, fed.audit_key)
            except DomainError:
                self._log("debug", f"enterprise {k} sent a zero update")
                theta = 0.0
            role = "validator" if roles.validators else "leader_miner"
            fed.trace.append(
                self._trace(fed, role, voter, k, "similarity", BoundaryTag.PLAINTEXT)
            )
            votes.append(gate(theta, self._gate, fed.book, k)[0])
        return theta, votes

    def _aggregate_clustered(
        self,
        fed: FederationState,
        roles: RoundRoles,
        prior: dict[ModelKind, ParamVector],
        uploads: dict[int, EncryptedUpdate],
        timers: _Timers,
    ) -> _Outcome:
        outcome = _Outcome()
        thetas: dict[int, float] = {}
        tags: dict[int, ModelKind] = {}

        def audit() -> None:
            for k, eu in uploads.items():
                fed.trace.append(
                    self._trace(fed, "leader_miner", roles.leader, k, "gradient",
                                BoundaryTag.CIPHERTEXT)
                )
                for miner in roles.miners:
                    if miner != roles.leader:
                        fed.trace.append(
                            self._trace(fed, "simple_miner", miner, k, "gradient",
                                        BoundaryTag.CIPHERTEXT)
                        )
                stats = audit_statistics(eu, prior[eu.model_type], fed.public_key)
                theta, votes = self._vote(fed, roles, k, stats)
                verdict, fed.book = commit_outcome(
                    theta, tally_votes(votes), self._gate, fed.book, k
                )
                outcome.verdicts.append(verdict)
                self._report_verdict(fed, verdict)
                if verdict.decision is Decision.ACCEPT:
                    thetas[k] = theta
                    tags[k] = eu.model_type

        timers.run("T_CS", audit)
        if not thetas:
            self._log("warning", f"Round {fed.round}: no update passed the gate")
            return outcome

        clusters = timers.run("T_Agg", lambda: cluster_models(thetas, tags, self._ap))
        outcome.clusters = clusters.count
        for kind, groups in clusters.by_type.items():
            merged, members = timers.run(
                "T_Agg", lambda groups=groups: self._merge(fed, roles, groups, uploads)
            )
            base = prior[kind]
            model = base.with_values(base.values + merged)
            members = [base.with_values(base.values + m) for m in members]
            if members:
                model = timers.run(
                    "T_WGAN", lambda model=model, kind=kind, members=members: self._distill(
                        fed, kind, model, members
                    )
                )
            fed.trace.append(
                self._trace(fed, "leader_miner", roles.leader, -1, "parameters",
                            BoundaryTag.PLAINTEXT, individual=False)
            )
            outcome.models[kind] = model
        return outcome

    def _merge(
        self,
        fed: FederationState,
        roles: RoundRoles,
        groups: Sequence[Cluster],
        uploads: dict[int, EncryptedUpdate],
    ) -> tuple[np.ndarray, list[np.ndarray]]:
        """Stake-weighted merge of cluster sums; clusters of two or more become members."""
        sums, sizes, stakes, members = [], [], [], []
        for cluster in groups:
            total = encrypted_sum([uploads[k].enc_values for k in cluster.members])
            sums.append(total)
            sizes.append(len(cluster))
            stakes.append(sum(fed.enterprises[k].stake for k in cluster.members))
            if len(cluster) >= 2:
                members.append(decrypt_vector(fed.keys, total.plain_mul(1.0 / len(cluster))))
                fed.trace.append(
                    self._trace(fed, "leader_miner", roles.leader, -1, "parameters",
                                BoundaryTag.PLAINTEXT, individual=False)
                )
        merged = decrypt_vector(fed.keys, merge_clusters(sums, sizes, stakes))
        return merged, members

    def _distill(
        self,
        fed: FederationState,
        kind: ModelKind,
        merged: ParamVector,
        members: list[ParamVector],
    ) -> ParamVector:
        cfg = self._cfg
        try:
            distilled, generator, steps = adversarial_round(
                fed.generators[kind],
                merged,
                members,
                cfg.phi,
                cfg.wgan_budget,
                batch_size=cfg.wgan_batch,
                seed=derive_seed(cfg.seed, fed.round, 0xD157),
                lr_generator=cfg.wgan_lr_generator,
                lr_global=cfg.wgan_lr_global,
                validation=fed.validation,
                round_index=fed.round,
            )
        except NumericalError as exc:
            self._log("warning", f"Distillation of {kind.value} skipped: {exc}")
            return merged
        fed.generators[kind] = generator
        fed.distill_trace.extend((fed.round, step) for step in steps)
        if fed.validation is None:
            return distilled
        model, kept = guard_distillation(merged, distilled, fed.validation)
        if not kept:
            self._log("info", f"Round {fed.round}: kept the merged {kind.value} model")
        return model

    def _aggregate_plain(
        self,
        fed: FederationState,
        roles: RoundRoles,
        prior: dict[ModelKind, ParamVector],
        updates: dict[int, ParamVector],
    ) -> _Outcome:
        outcome = _Outcome()
        by_type: dict[ModelKind, list[int]] = {}
        for k in roles.selected:
            by_type.setdefault(fed.model_types[k], []).append(k)
            fed.trace.append(
                self._trace(fed, "leader_miner", roles.leader, k, "gradient",
                            BoundaryTag.PLAINTEXT)
            )
        for kind, ids in by_type.items():
            base = prior[kind]
            deltas = [updates[k] for k in ids]
            mean = ParamVector(np.mean([d.values for d in deltas], axis=0), base.schema)
            aggregator = self._cfg.aggregator
            if aggregator == "fedadam":
                model, fed.server_optimizers[kind] = fedadam_server_update(
                    base, mean, fed.server_optimizers[kind]
                )
            elif aggregator == "krum" and len(deltas) >= 3:
                m = min(sum(1 for k in ids if k in fed.plan.malicious), len(deltas) - 3)
                model = base + deltas[krum(deltas, m)]
            elif aggregator == "rfa":
                model = base.with_values(base.values + rfa_geometric_median(deltas))
            else:
                model = base + mean
            outcome.models[kind] = model
        return outcome

    def _report_verdict(self, fed: FederationState, verdict: Verdict) -> None:
        if self._logger and self._enable_logging:
            strikes = fed.book.strikes_of(verdict.enterprise_id)
            reason = f"{strikes} strike(s)" if strikes else ""
            self._logger.log_verdict(
                _GATE_STATUS[verdict.decision], verdict.enterprise_id, verdict.theta, reason
            )
        self._emit_event(RoundEventType.VERDICT, verdict.to_dict())

    # -- reconstruction attempt ------------------------------------------------------

    def _attempt_reconstruction(
        self,
        fed: FederationState,
        roles: RoundRoles,
        prior: dict[ModelKind, ParamVector],
        uploads: dict[int, EncryptedUpdate] | None,
    ) -> GmlReport | None:
        """Gradient matching by the leader against the lowest-id trainer of the round.

        Under the clustered pipeline the leader only holds ciphertext; under the baselines it
        holds the plaintext single-sample gradient of the trainer's first sample.
        A scenario without the reconstruction attack skips the attempt.
        """
        cfg = self._cfg
        if not cfg.track_gml or not roles.selected:
            return None
        if not cfg.measures(AttackKind.RECONSTRUCTION):
            return None
        victim = roles.selected[0]
        model = prior[fed.model_types[victim]]
        if uploads is not None:
            return reconstruct_gml(uploads[victim], model)
        gradient = loss_and_grad(model, victim_batch(fed.shards[victim]))[1]
        try:
            return reconstruct_gml(
                gradient,
                model,
                iters=cfg.gml_iterations,
                seed=derive_seed(cfg.seed, fed.round),
                restarts=cfg.gml_restarts,
            )
        except DomainError as exc:
            self._log("debug", f"reconstruction attempt skipped: {exc}")
            return None

    # -- blocks and rewards ----------------------------------------------------------

    def _append(self, fed: FederationState, kind: PayloadKind, payload: Any, miner: int) -> None:
        block = append_block(fed.ledger, kind, canonical_json(payload), miner, fed.enterprises)
        self._emit_event(
            RoundEventType.BLOCK_APPENDED, {"height": block.height, "kind": kind.value}
        )

    def _write_blocks(
        self,
        fed: FederationState,
        roles: RoundRoles,
        outcome: _Outcome,
        uploads: dict[int, EncryptedUpdate] | None,
    ) -> None:
        r = fed.round
        leader = roles.leader
        if uploads is not None:
            commitments = []
            for k, eu in sorted(uploads.items()):
                digest = hashlib.sha256(serialize_vector(eu.enc_psi))
                digest.update(serialize_vector(eu.enc_upsilon))
                commitments.append(
                    {"enterprise": k, "model_type": eu.model_type.value,
                     "commitment": digest.hexdigest()}
                )
            self._append(fed, PayloadKind.UPDATE, {"round": r, "updates": commitments}, leader)
            verdicts = [v.to_dict() for v in outcome.verdicts]
            self._append(fed, PayloadKind.VERDICTS, {"round": r, "verdicts": verdicts}, leader)

        models = {
            kind.value: {"schema": model.schema.to_dict(), "values": model.values.tolist()}
            for kind, model in sorted(
                {**fed.globals, **outcome.models}.items(), key=lambda item: item[0].value
            )
        }
        self._append(fed, PayloadKind.GLOBAL_MODEL, {"round": r, "models": models}, leader)

        if uploads is not None:
            fed.enterprises = apply_reward(
                fed.enterprises, outcome.verdicts, self._cfg.reward, self._cfg.penalty
            )
            stakes = {str(k): v for k, v in fed.stakes().items()}
            self._append(fed, PayloadKind.REWARDS, {"round": r, "stakes": stakes}, leader)
            fed.enterprises = sync_strikes(fed.enterprises, fed.book)


def run_round(
    state: FederationState, cfg: RoundConfig, runner: FederationRunner | None = None
) -> tuple[FederationState, RoundMetrics]:
    """Advance ``state`` by one round under ``cfg``."""
    return (runner or FederationRunner(cfg, enable_logging=False)).run_round(state)
