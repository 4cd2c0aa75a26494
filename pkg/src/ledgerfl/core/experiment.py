"""Experiment drivers: full runs, overhead sweeps and the attack evaluation suite."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from queue import Queue
from typing import Any, Sequence

from ledgerfl.config.settings import RoundConfig
from ledgerfl.core.attacks import (
    SCENARIOS,
    AttackKind,
    AuditReport,
    GmlReport,
    exposure_audit,
    inference_advantage,
    reconstruct_gml,
    summarize_reports,
    victim_batch,
)
from ledgerfl.core.errors import ProtocolHaltError
from ledgerfl.core.logger import FederationLogger
from ledgerfl.core.metrics import RoundMetrics
from ledgerfl.core.numerics import loss_and_grad
from ledgerfl.core.report import ExperimentReport
from ledgerfl.core.runner import FederationRunner, FederationState, RoundEvent, seal_update
from ledgerfl.persistence.charts import write_line_chart
from ledgerfl.persistence.result_storage import ResultStorage

logger = logging.getLogger(__name__)


@dataclass
class ExperimentResult:
    """A finished run and the artifacts written for it."""

    state: FederationState
    report: ExperimentReport
    paths: dict[str, Path] = field(default_factory=dict)
    membership_advantage: dict[str, float] | None = None

    @property
    def metrics(self) -> list[RoundMetrics]:
        return self.state.history


def membership_advantages(cfg: RoundConfig, fed: FederationState) -> dict[str, float]:
    """Confidence-attack advantage of every final global, training pool against the test set."""
    return {
        kind.value: inference_advantage(model, fed.train, fed.test, cfg.membership_threshold)
        for kind, model in fed.globals.items()
    }


def _write_artifacts(
    cfg: RoundConfig,
    fed: FederationState,
    report: ExperimentReport,
    out_dir: str | Path,
    membership: dict[str, float] | None = None,
) -> dict[str, Path]:
    storage = ResultStorage(out_dir)
    paths = {
        "metrics": storage.write_metrics(fed.history),
        "summary": storage.write_summary(report),
        "ledger": storage.write_ledger(fed.ledger),
        "trace": storage.write_trace(fed.distill_trace),
        "audit": storage.write_json("audit_report.json", exposure_audit(fed.trace).to_dict()),
        "gml": storage.write_json(
            "gml_report.json",
            {
                "summary": summarize_reports(fed.gml_reports),
                "rounds": [r.to_dict() for r in fed.gml_reports],
            },
        ),
    }
    if membership is not None:
        paths["membership"] = storage.write_json(
            "membership_report.json",
            {"threshold": cfg.membership_threshold, "advantage": membership},
        )
    if cfg.charts and fed.history:
        rounds = [m.round for m in fed.history]
        charts = {
            "accuracy": ({"accuracy": [m.accuracy for m in fed.history]}, "accuracy (%)"),
            "overhead": (
                {
                    "client": [m.comp_client for m in fed.history],
                    "server": [m.comp_server for m in fed.history],
                    "total": [m.comp_total for m in fed.history],
                },
                "seconds",
            ),
            "gml": ({"gml": [m.gml for m in fed.history]}, "GML"),
        }
        for name, (series, ylabel) in charts.items():
            chart = write_line_chart(
                storage.out_dir / f"{name}.svg", rounds, series, name, ylabel=ylabel
            )
            if chart is not None:
                paths[f"chart_{name}"] = chart
    return paths


def run_experiment(
    cfg: RoundConfig,
    out_dir: str | Path | None = None,
    event_queue: Queue[RoundEvent] | None = None,
    run_logger: FederationLogger | None = None,
) -> ExperimentResult:
    """Run every configured round and write the artifacts into ``out_dir``.

    A protocol halt still writes the artifacts of the completed rounds before re-raising.
    The membership advantage of the final globals is measured unless a scenario that leaves
    out membership inference is set; the per-round reconstruction follows the same rule.

    Raises:
        ProtocolHaltError: If every enterprise gets removed.
        StorageError: If an artifact cannot be written.
    """
    runner = FederationRunner(cfg, event_queue, run_logger)
    fed = runner.initialize()
    started = ExperimentReport()
    started.set_start_time()
    halt: ProtocolHaltError | None = None
    try:
        fed = runner.run(fed)
    except ProtocolHaltError as exc:
        halt = exc
    report = ExperimentReport.from_state(cfg, fed)
    report.start_time = started.start_time
    report.set_end_time()
    if halt is not None:
        report.errors.append(str(halt))

    membership = None
    if fed.history and cfg.measures(AttackKind.MEMBERSHIP_INFERENCE):
        membership = membership_advantages(cfg, fed)
    paths: dict[str, Path] = {}
    if out_dir is not None:
        paths = _write_artifacts(cfg, fed, report, out_dir, membership)
    if halt is not None:
        raise halt
    logger.info(
        "run finished: %d rounds, final accuracy %.2f%%", report.rounds, report.final_accuracy
    )
    return ExperimentResult(fed, report, paths, membership)


@dataclass(frozen=True)
class BenchRow:
    """Mean per-round computing cost for one consortium size."""

    enterprises: int
    comp_client: float
    comp_server: float

    @property
    def comp_total(self) -> float:
        return self.comp_client + self.comp_server

    def csv_row(self) -> list[str]:
        return [
            str(self.enterprises),
            f"{self.comp_client:.6f}",
            f"{self.comp_server:.6f}",
            f"{self.comp_total:.6f}",
        ]


def bench_config(cfg: RoundConfig, enterprises: int) -> RoundConfig:
    """``cfg`` resized to ``enterprises`` members."""
    data = cfg.to_dict()
    data["enterprises"] = enterprises
    data["selected"] = min(cfg.selected, enterprises)
    data["delays"] = list(cfg.delays[:enterprises])
    return RoundConfig.from_dict(data).validate()


def run_bench(
    cfg: RoundConfig, sizes: Sequence[int], out_dir: str | Path | None = None
) -> list[BenchRow]:
    """Overhead sweep: the same experiment at every consortium size in ``sizes``."""
    rows = []
    for size in sizes:
        fed = FederationRunner(bench_config(cfg, size), enable_logging=False).run()
        count = max(1, len(fed.history))
        rows.append(
            BenchRow(
                size,
                sum(m.comp_client for m in fed.history) / count,
                sum(m.comp_server for m in fed.history) / count,
            )
        )
        logger.info("bench: %d enterprises, %.4fs per round", size, rows[-1].comp_total)
    if out_dir is not None:
        storage = ResultStorage(out_dir)
        storage.write_bench(row.csv_row() for row in rows)
        if cfg.charts and rows:
            write_line_chart(
                storage.out_dir / "bench.svg",
                [row.enterprises for row in rows],
                {
                    "client": [row.comp_client for row in rows],
                    "server": [row.comp_server for row in rows],
                    "total": [row.comp_total for row in rows],
                },
                "overhead",
                xlabel="enterprises",
                ylabel="seconds per round",
            )
    return rows


@dataclass
class AttackEvalReport:
    """Reconstruction, membership-inference and exposure results of one configuration."""

    plaintext: GmlReport
    encrypted: GmlReport
    membership_advantage: dict[str, float]
    audit: AuditReport
    rounds: dict[str, Any]
    scenario: dict[str, Any] | None = None

    def to_dict(self) -> dict[str, Any]:
        """Serialize to dictionary."""
        return {
            "reconstruction": {
                "plaintext_gradient": self.plaintext.to_dict(),
                "ciphertext_update": self.encrypted.to_dict(),
            },
            "membership_advantage": self.membership_advantage,
            "exposure_audit": self.audit.to_dict(),
            "per_round_gml": self.rounds,
            "scenario": self.scenario,
        }


def run_attack_eval(
    cfg: RoundConfig,
    out_dir: str | Path | None = None,
    run_logger: FederationLogger | None = None,
) -> AttackEvalReport:
    """Attack the pipeline with the reconstruction, inference and exposure checks.

    The reconstruction victim is enterprise 0's single-sample gradient at the initial global:
    once in plaintext, as an undefended server would see it, and once sealed the way the
    clustered pipeline uploads it. The membership advantage is measured on the final global
    of a full run, with the pooled training data as members and the test set as non-members.
    """
    runner = FederationRunner(cfg, logger=run_logger)
    fed = runner.initialize()
    victim = 0
    kind = fed.model_types[victim]
    model = fed.globals[kind]
    gradient = loss_and_grad(model, victim_batch(fed.shards[victim]))[1]
    plaintext = reconstruct_gml(
        gradient, model, iters=cfg.gml_iterations, seed=cfg.seed, restarts=cfg.gml_restarts
    )
    sealed = seal_update(fed.public_key, gradient, victim, 0, kind, cfg.medoids, cfg.seed)
    encrypted = reconstruct_gml(sealed, model)

    fed = runner.run(fed)
    advantage = membership_advantages(cfg, fed)
    scenario = None
    if cfg.scenario is not None:
        preset = SCENARIOS[cfg.scenario]
        scenario = {
            "id": preset.id,
            "name": preset.name,
            "kinds": sorted(k.value for k in preset.kinds),
            "protection": preset.protection.value,
        }
    report = AttackEvalReport(
        plaintext=plaintext,
        encrypted=encrypted,
        membership_advantage=advantage,
        audit=exposure_audit(fed.trace),
        rounds=summarize_reports(fed.gml_reports),
        scenario=scenario,
    )
    if out_dir is not None:
        storage = ResultStorage(out_dir)
        storage.write_json("attack_eval.json", report.to_dict())
        storage.write_json("audit_report.json", report.audit.to_dict())
        storage.write_json(
            "gml_report.json",
            {"summary": report.rounds, "rounds": [r.to_dict() for r in fed.gml_reports]},
        )
    logger.info(
        "attack eval: plaintext GML %s, ciphertext %s, audit %s",
        plaintext.verdict.value,
        encrypted.verdict.value,
        "passed" if report.audit.passed else "failed",
    )
    return report
