"""Run logger for ledgerfl experiments.

This module provides:
- Timestamped logging with configurable levels
- Log export to .txt files
- Gate status tracking (ACCEPTED, IGNORED, DISCARDED)
- Round start/end summaries
"""

from __future__ import annotations

import logging
from datetime import datetime
from enum import Enum
from pathlib import Path


class GateStatus(Enum):
    """Status of an update at the similarity gate."""

    ACCEPTED = "ACCEPTED"
    IGNORED = "IGNORED"
    DISCARDED = "DISCARDED"


class LogLevel(Enum):
    """Log levels for ledgerfl."""

    DEBUG = logging.DEBUG
    INFO = logging.INFO
    WARNING = logging.WARNING
    ERROR = logging.ERROR


class FederationLogger:
    """Logger for federation runs with timestamp and level support.

    Handlers are attached to the ``ledgerfl`` logger, so library modules logging through
    ``logging.getLogger(__name__)`` share the console and file output.
    """

    TIMESTAMP_FORMAT = "%Y-%m-%d %H:%M:%S"

    LOG_FORMAT = "%(asctime)s [%(levelname)s] %(message)s"

    # Cap on entries kept in memory for export
    MAX_LOG_ENTRIES = 100000

    def __init__(
        self,
        name: str = "ledgerfl",
        level: LogLevel = LogLevel.INFO,
        log_file: str | Path | None = None,
        max_entries: int | None = None,
        console: bool = True,
    ) -> None:
        """Initialize the logger.

        Args:
            name: Logger name identifier.
            level: Minimum log level to capture.
            log_file: Optional path to write logs to a file.
            max_entries: Maximum entries to keep in memory. Defaults to MAX_LOG_ENTRIES.
            console: Whether to attach a stderr handler.
        """
        self._logger = logging.getLogger(name)
        self._logger.setLevel(level.value)
        self._logger.handlers.clear()
        self._formatter = logging.Formatter(self.LOG_FORMAT, datefmt=self.TIMESTAMP_FORMAT)

        if console:
            console_handler = logging.StreamHandler()
            console_handler.setFormatter(self._formatter)
            self._logger.addHandler(console_handler)

        self._log_file_path: Path | None = None
        self._file_handler: logging.FileHandler | None = None
        if log_file:
            self.set_log_file(log_file)

        self._log_entries: list[str] = []
        self._max_entries = max_entries if max_entries is not None else self.MAX_LOG_ENTRIES

    @property
    def log_file(self) -> Path | None:
        return self._log_file_path

    def set_log_file(self, log_file: str | Path) -> None:
        """Set or change the log file path.

        Args:
            log_file: Path to the log file.
        """
        if self._file_handler:
            self._logger.removeHandler(self._file_handler)
            self._file_handler.close()

        self._log_file_path = Path(log_file)
        self._log_file_path.parent.mkdir(parents=True, exist_ok=True)
        self._file_handler = logging.FileHandler(self._log_file_path, mode="a", encoding="utf-8")
        self._file_handler.setFormatter(self._formatter)
        self._logger.addHandler(self._file_handler)

    def _format_entry(self, level: str, message: str) -> str:
        timestamp = datetime.now().strftime(self.TIMESTAMP_FORMAT)
        return f"{timestamp} [{level}] {message}"

    def _log(self, level: LogLevel, message: str) -> None:
        """Log a message and store it for export.

        Args:
            level: Log level.
            message: Message to log.
        """
        if level.value < self._logger.getEffectiveLevel():
            return
        self._log_entries.append(self._format_entry(level.name, message))
        if len(self._log_entries) > self._max_entries:
            self._log_entries = self._log_entries[-self._max_entries :]
        self._logger.log(level.value, message)

    def debug(self, message: str) -> None:
        self._log(LogLevel.DEBUG, message)

    def info(self, message: str) -> None:
        self._log(LogLevel.INFO, message)

    def warning(self, message: str) -> None:
        self._log(LogLevel.WARNING, message)

    def error(self, message: str) -> None:
        self._log(LogLevel.ERROR, message)

    def log_verdict(
        self, status: GateStatus, enterprise_id: int, theta: float, reason: str = ""
    ) -> None:
        """Log the gate outcome of one update.

        Args:
            status: Gate status.
            enterprise_id: Enterprise that sent the update.
            theta: Cosine similarity to the prior global model.
            reason: Optional explanation (for example the strike count).
        """
        reason_info = f" ({reason})" if reason else ""
        message = f"[{status.value}] enterprise {enterprise_id} θ={theta:+.4f}{reason_info}"
        if status is GateStatus.DISCARDED:
            self.warning(message)
        else:
            self.info(message)

    def log_round_start(self, round_index: int, selected: list[int], leader: int) -> None:
        self.info(
            f"=== ROUND {round_index} START: {len(selected)} enterprises, leader {leader} ==="
        )

    def log_round_end(
        self,
        round_index: int,
        accepted: int,
        ignored: int,
        discarded: int,
        accuracy: float,
    ) -> None:
        """Log the end of a round with its gate summary and accuracy.

        Args:
            round_index: Round number.
            accepted: Updates accepted.
            ignored: Updates ignored with a strike.
            discarded: Updates from removed enterprises.
            accuracy: Global test accuracy in percent.
        """
        self.info(f"=== ROUND {round_index} END ===")
        summary = f"ACCEPTED={accepted}, IGNORED={ignored}, DISCARDED={discarded}"
        self.info(f"Summary: {summary}, ACC={accuracy:.2f}%")

    def export_to_txt(self, output_path: str | Path) -> Path:
        """Export all log entries to a .txt file.

        Returns:
            Path where the log was saved.
        """
        path = Path(output_path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", encoding="utf-8") as f:
            f.write("\n".join(self._log_entries))
            if self._log_entries:
                f.write("\n")
        return path

    def get_log_entries(self) -> list[str]:
        return self._log_entries.copy()

    def clear_entries(self) -> None:
        self._log_entries.clear()

    def close(self) -> None:
        """Close the logger and release resources."""
        if self._file_handler:
            self._logger.removeHandler(self._file_handler)
            self._file_handler.close()
            self._file_handler = None


_global_logger: FederationLogger | None = None


def get_logger(
    name: str = "ledgerfl",
    level: LogLevel = LogLevel.INFO,
    log_file: str | Path | None = None,
) -> FederationLogger:
    """Get or create the global logger instance."""
    global _global_logger
    if _global_logger is None:
        _global_logger = FederationLogger(name=name, level=level, log_file=log_file)
    return _global_logger


def reset_logger() -> None:
    """Reset the global logger instance."""
    global _global_logger
    if _global_logger:
        _global_logger.close()
    _global_logger = None
