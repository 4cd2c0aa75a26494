"""Tests for persistence modules."""

from __future__ import annotations

import csv
import json
from pathlib import Path

import pytest

from ledgerfl.chain.ledger import Ledger, PayloadKind, canonical_json
from ledgerfl.core.errors import FormatError, StorageError
from ledgerfl.core.metrics import CSV_COLUMNS, RoundMetrics
from ledgerfl.core.report import ExperimentReport, GateSummary
from ledgerfl.core.wgan import DistillStep
from ledgerfl.persistence.charts import write_line_chart
from ledgerfl.persistence.result_storage import ResultStorage, load_ledger_jsonl


@pytest.fixture
def storage(tmp_path: Path) -> ResultStorage:
    """Create ResultStorage instance."""
    return ResultStorage(tmp_path / "results")


@pytest.fixture
def sample_metrics() -> list[RoundMetrics]:
    """Create metrics for two rounds, the second with a GML value."""
    return [
        RoundMetrics(round=0, accuracy=50.0, comp_client=0.1, comp_server=0.2, accepted=3),
        RoundMetrics(round=1, accuracy=75.5, clusters=2, accepted=2, ignored=1, gml=0.3),
    ]


class TestResultStorage:
    """Tests for ResultStorage."""

    def test_storage_directory_creation(self, storage: ResultStorage) -> None:
        """Test that the output directory is created."""
        assert storage.out_dir.is_dir()

    def test_unwritable_directory_raises(self, tmp_path: Path) -> None:
        """Test that a file in the way raises StorageError."""
        blocker = tmp_path / "blocker"
        blocker.write_text("x", encoding="utf-8")
        with pytest.raises(StorageError):
            ResultStorage(blocker / "results")

    def test_metrics_roundtrip(
        self, storage: ResultStorage, sample_metrics: list[RoundMetrics]
    ) -> None:
        """Test writing and reading metrics.csv."""
        path = storage.write_metrics(sample_metrics)
        assert path == storage.metrics_file
        rows = storage.read_metrics()
        assert list(rows[0]) == list(CSV_COLUMNS)
        assert rows[0]["gml"] == ""
        assert rows[1]["gml"] == "0.300000"
        assert rows[1]["acc_pct"] == "75.5000"
        assert rows[0]["comp_total_s"] == "0.300000"

    def test_read_missing_metrics_raises(self, storage: ResultStorage) -> None:
        """Test that reading before writing raises StorageError."""
        with pytest.raises(StorageError):
            storage.read_metrics()

    def test_summary(self, storage: ResultStorage) -> None:
        """Test writing summary.json from a report."""
        report = ExperimentReport(rounds=3, final_accuracy=91.0, gate=GateSummary(4, 1, 0))
        storage.write_summary(report)
        data = json.loads(storage.summary_file.read_text(encoding="utf-8"))
        assert data["rounds"] == 3
        assert data["gate"] == {"ACCEPTED": 4, "IGNORED": 1, "DISCARDED": 0, "TOTAL": 5}

    def test_trace(self, storage: ResultStorage) -> None:
        """Test one trace row per distillation step."""
        storage.write_trace(
            [(0, DistillStep(0, 0.5, 0.6, 0.55, 80.0)), (1, DistillStep(1, 0.25, 0.3, 0.2))]
        )
        with open(storage.trace_file, newline="", encoding="utf-8") as f:
            rows = list(csv.reader(f))
        assert rows[0] == ["round", "step", "L_LG", "global_acc"]
        assert rows[2][0] == "1"
        assert rows[2][-1] == ""

    def test_json(self, storage: ResultStorage) -> None:
        """Test arbitrary JSON artifacts."""
        path = storage.write_json("audit_report.json", {"passed": True, "violations": []})
        assert json.loads(path.read_text(encoding="utf-8"))["passed"] is True


class TestLedgerDump:
    """Tests for writing and loading ledger.jsonl."""

    def test_roundtrip(self, storage: ResultStorage) -> None:
        """Test that a dumped ledger loads with the same hashes."""
        ledger = Ledger.genesis("cfg")
        ledger.append(PayloadKind.GLOBAL_MODEL, canonical_json({"round": 0}), 0)
        loaded = load_ledger_jsonl(storage.write_ledger(ledger))
        assert [b.hash for b in loaded] == [b.hash for b in ledger]

    def test_missing_file_raises(self, tmp_path: Path) -> None:
        """Test that a missing dump raises StorageError."""
        with pytest.raises(StorageError):
            load_ledger_jsonl(tmp_path / "none.jsonl")

    def test_malformed_file_raises(self, tmp_path: Path) -> None:
        """Test that a corrupt dump raises FormatError."""
        path = tmp_path / "ledger.jsonl"
        path.write_text('{"height": 0}\n', encoding="utf-8")
        with pytest.raises(FormatError):
            load_ledger_jsonl(path)


class TestCharts:
    """Tests for the optional SVG charts."""

    def test_chart_or_none(self, tmp_path: Path) -> None:
        """Test that a chart is written, or skipped without matplotlib."""
        path = write_line_chart(
            tmp_path / "acc.svg", [0, 1, 2], {"accuracy": [50.0, None, 70.0]}, "accuracy"
        )
        assert path is None or path.exists()

    def test_svg_content(self, tmp_path: Path) -> None:
        """Test the written file is an SVG."""
        pytest.importorskip("matplotlib")
        path = write_line_chart(tmp_path / "gml.svg", [0, 1], {"gml": [0.4, 0.2]}, "gml")
        assert path is not None
        assert "<svg" in path.read_text(encoding="utf-8")
