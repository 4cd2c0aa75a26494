"""Result storage for experiment outputs."""

from __future__ import annotations

import csv
import json
import logging
from pathlib import Path
from typing import TYPE_CHECKING, Any, Iterable, Sequence

from ledgerfl.chain.ledger import Ledger, from_jsonl, to_jsonl
from ledgerfl.core.errors import StorageError
from ledgerfl.core.metrics import CSV_COLUMNS, RoundMetrics

if TYPE_CHECKING:
    from ledgerfl.core.report import ExperimentReport
    from ledgerfl.core.wgan import DistillStep

logger = logging.getLogger(__name__)

TRACE_COLUMNS = ("round", "step", "L_LG", "global_acc")
BENCH_COLUMNS = ("enterprises", "comp_client_s", "comp_server_s", "comp_total_s")


class ResultStorage:
    """Writes the artifacts of one run into an output directory."""

    def __init__(self, out_dir: str | Path) -> None:
        """Initialize result storage.

        Args:
            out_dir: Output directory; created if missing.

        Raises:
            StorageError: If the directory cannot be created.
        """
        self.out_dir = Path(out_dir)
        try:
            self.out_dir.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise StorageError(self.out_dir, f"cannot create output directory ({exc})") from exc
        self.metrics_file = self.out_dir / "metrics.csv"
        self.summary_file = self.out_dir / "summary.json"
        self.ledger_file = self.out_dir / "ledger.jsonl"
        self.trace_file = self.out_dir / "trace.csv"
        self.bench_file = self.out_dir / "bench.csv"

    def _write_text(self, path: Path, text: str) -> Path:
        try:
            with open(path, "w", encoding="utf-8", newline="") as f:
                f.write(text)
        except OSError as exc:
            raise StorageError(path, f"cannot write ({exc})") from exc
        logger.debug("wrote %s", path)
        return path

    def _write_csv(
        self, path: Path, header: Sequence[str], rows: Iterable[Sequence[object]]
    ) -> Path:
        try:
            with open(path, "w", encoding="utf-8", newline="") as f:
                writer = csv.writer(f, lineterminator="\n")
                writer.writerow(header)
                writer.writerows(rows)
        except OSError as exc:
            raise StorageError(path, f"cannot write ({exc})") from exc
        logger.debug("wrote %s", path)
        return path

    def write_metrics(self, metrics: Sequence[RoundMetrics]) -> Path:
        """Write ``metrics.csv``; times are in seconds."""
        return self._write_csv(self.metrics_file, CSV_COLUMNS, (m.csv_row() for m in metrics))

    def read_metrics(self) -> list[dict[str, str]]:
        """Read ``metrics.csv`` back as one dict per row.

        Raises:
            StorageError: If the file cannot be read.
        """
        try:
            with open(self.metrics_file, "r", encoding="utf-8", newline="") as f:
                return list(csv.DictReader(f))
        except OSError as exc:
            raise StorageError(self.metrics_file, f"cannot read ({exc})") from exc

    def write_summary(self, report: ExperimentReport) -> Path:
        return report.export_to_json(self.summary_file)

    def write_ledger(self, ledger: Ledger) -> Path:
        return self._write_text(self.ledger_file, to_jsonl(ledger))

    def write_trace(self, steps: Iterable[tuple[int, DistillStep]]) -> Path:
        """Write the distillation trace, one row per inner step."""
        rows = ([str(r), *step.csv_row()] for r, step in steps)
        return self._write_csv(self.trace_file, TRACE_COLUMNS, rows)

    def write_bench(self, rows: Iterable[Sequence[object]]) -> Path:
        return self._write_csv(self.bench_file, BENCH_COLUMNS, rows)

    def write_json(self, name: str, data: Any) -> Path:
        """Write ``data`` as pretty-printed JSON under ``name``."""
        path = self.out_dir / name
        return self._write_text(path, json.dumps(data, indent=2, ensure_ascii=False) + "\n")


def load_ledger_jsonl(path: str | Path) -> Ledger:
    """Parse a ``ledger.jsonl`` dump.

    Raises:
        StorageError: If the file cannot be read.
        FormatError: If a row is malformed or misses a field.
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise StorageError(path, f"cannot read ({exc})") from exc
    return from_jsonl(text)
