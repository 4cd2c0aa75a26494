"""Experiment report for ledgerfl.

This module provides:
- ExperimentReport dataclass summarizing one federation run
- Gate summary by status (ACCEPTED/IGNORED/DISCARDED)
- Export report to JSON
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path
from typing import TYPE_CHECKING, Any

from ledgerfl.chain.ledger import verify_chain
from ledgerfl.core.defense import Decision
from ledgerfl.core.errors import StorageError

if TYPE_CHECKING:
    from ledgerfl.config.settings import RoundConfig
    from ledgerfl.core.runner import FederationState


@dataclass
class GateSummary:
    """Verdict counts over all rounds."""

    accepted: int = 0
    ignored: int = 0
    discarded: int = 0

    @property
    def total(self) -> int:
        return self.accepted + self.ignored + self.discarded

    def add(self, decision: Decision) -> None:
        if decision is Decision.ACCEPT:
            self.accepted += 1
        elif decision is Decision.IGNORE:
            self.ignored += 1
        else:
            self.discarded += 1

    def to_dict(self) -> dict[str, int]:
        """Serialize to dictionary."""
        return {
            "ACCEPTED": self.accepted,
            "IGNORED": self.ignored,
            "DISCARDED": self.discarded,
            "TOTAL": self.total,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> GateSummary:
        """Deserialize from dictionary."""
        return cls(
            accepted=data.get("ACCEPTED", 0),
            ignored=data.get("IGNORED", 0),
            discarded=data.get("DISCARDED", 0),
        )


@dataclass
class ExperimentReport:
    """Summary of a federation run, written as ``summary.json``.

    Attributes:
        config: Echo of the RoundConfig.
        start_time: Run start timestamp (ISO format).
        end_time: Run end timestamp (ISO format).
        rounds: Rounds completed.
        final_accuracy: Test accuracy after the last round, in percent.
        final_accuracy_by_type: Test accuracy per model type.
        gate: Verdict counts.
        comp_client: Summed per-round client seconds.
        comp_server: Summed per-round server seconds.
        removed: Enterprises removed by the strike rule.
        malicious: Enterprises planned as attackers.
        stakes: Final stake per enterprise.
        ledger_height: Height of the last block.
        ledger_valid: Whether the whole chain verifies.
        phases: Component timers per round.
        errors: Problems met during the run.
    """

    config: dict[str, Any] = field(default_factory=dict)
    start_time: str = ""
    end_time: str = ""
    rounds: int = 0
    final_accuracy: float = 0.0
    final_accuracy_by_type: dict[str, float] = field(default_factory=dict)
    gate: GateSummary = field(default_factory=GateSummary)
    comp_client: float = 0.0
    comp_server: float = 0.0
    removed: list[int] = field(default_factory=list)
    malicious: list[int] = field(default_factory=list)
    stakes: dict[str, float] = field(default_factory=dict)
    ledger_height: int = -1
    ledger_valid: bool = False
    phases: list[dict[str, float]] = field(default_factory=list)
    errors: list[str] = field(default_factory=list)

    @property
    def comp_total(self) -> float:
        return self.comp_client + self.comp_server

    @classmethod
    def from_state(cls, cfg: RoundConfig, fed: FederationState) -> ExperimentReport:
        """Collect the summary of ``fed`` after its last round."""
        report = cls(config=cfg.to_dict())
        for verdict in fed.verdicts:
            report.gate.add(verdict.decision)
        report.rounds = len(fed.history)
        if fed.history:
            last = fed.history[-1]
            report.final_accuracy = last.accuracy
            report.final_accuracy_by_type = dict(last.accuracy_by_type)
        report.comp_client = sum(m.comp_client for m in fed.history)
        report.comp_server = sum(m.comp_server for m in fed.history)
        report.removed = fed.removed
        report.malicious = sorted(fed.plan.malicious)
        report.stakes = {str(k): v for k, v in fed.stakes().items()}
        report.ledger_height = fed.ledger.height
        report.ledger_valid = verify_chain(fed.ledger)
        report.phases = [dict(m.phases, round=m.round) for m in fed.history]
        return report

    def to_dict(self) -> dict[str, Any]:
        """Serialize to dictionary."""
        return {
            "config": self.config,
            "start_time": self.start_time,
            "end_time": self.end_time,
            "rounds": self.rounds,
            "final_accuracy": self.final_accuracy,
            "final_accuracy_by_type": self.final_accuracy_by_type,
            "gate": self.gate.to_dict(),
            "comp_client_s": self.comp_client,
            "comp_server_s": self.comp_server,
            "comp_total_s": self.comp_total,
            "removed": self.removed,
            "malicious": self.malicious,
            "stakes": self.stakes,
            "ledger_height": self.ledger_height,
            "ledger_valid": self.ledger_valid,
            "phases": self.phases,
            "errors": self.errors,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> ExperimentReport:
        """Deserialize from dictionary."""
        return cls(
            config=data.get("config", {}),
            start_time=data.get("start_time", ""),
            end_time=data.get("end_time", ""),
            rounds=data.get("rounds", 0),
            final_accuracy=data.get("final_accuracy", 0.0),
            final_accuracy_by_type=data.get("final_accuracy_by_type", {}),
            gate=GateSummary.from_dict(data.get("gate", {})),
            comp_client=data.get("comp_client_s", 0.0),
            comp_server=data.get("comp_server_s", 0.0),
            removed=data.get("removed", []),
            malicious=data.get("malicious", []),
            stakes=data.get("stakes", {}),
            ledger_height=data.get("ledger_height", -1),
            ledger_valid=data.get("ledger_valid", False),
            phases=data.get("phases", []),
            errors=data.get("errors", []),
        )

    def to_json(self, indent: int = 2) -> str:
        return json.dumps(self.to_dict(), ensure_ascii=False, indent=indent)

    @classmethod
    def from_json(cls, json_str: str) -> ExperimentReport:
        return cls.from_dict(json.loads(json_str))

    def export_to_json(self, output_path: str | Path) -> Path:
        """Export report to a JSON file.

        Raises:
            StorageError: If the file cannot be written.
        """
        path = Path(output_path)
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(self.to_json(), encoding="utf-8")
        except OSError as exc:
            raise StorageError(path, str(exc)) from exc
        return path

    @classmethod
    def load_from_json(cls, file_path: str | Path) -> ExperimentReport | None:
        """Load a report, or None if the file is missing or unreadable."""
        path = Path(file_path)
        if not path.exists():
            return None
        try:
            return cls.from_json(path.read_text(encoding="utf-8"))
        except (json.JSONDecodeError, KeyError):
            return None

    def set_start_time(self) -> None:
        self.start_time = datetime.now().isoformat()

    def set_end_time(self) -> None:
        self.end_time = datetime.now().isoformat()
