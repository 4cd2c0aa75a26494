"""Unit tests for the logger module."""

from __future__ import annotations

import logging
import re
from pathlib import Path

from ledgerfl.core.logger import (
    FederationLogger,
    GateStatus,
    LogLevel,
    get_logger,
    reset_logger,
)


class TestGateStatus:
    """Tests for GateStatus enum."""

    def test_all_statuses_exist(self) -> None:
        """Test that every gate outcome has a status."""
        assert GateStatus.ACCEPTED.value == "ACCEPTED"
        assert GateStatus.IGNORED.value == "IGNORED"
        assert GateStatus.DISCARDED.value == "DISCARDED"


class TestLogLevel:
    """Tests for LogLevel enum."""

    def test_levels_match_logging(self) -> None:
        """Test that levels map onto the standard logging levels."""
        assert LogLevel.DEBUG.value == logging.DEBUG
        assert LogLevel.INFO.value == logging.INFO
        assert LogLevel.WARNING.value == logging.WARNING
        assert LogLevel.ERROR.value == logging.ERROR


class TestFederationLogger:
    """Tests for FederationLogger class."""

    def test_log_entries_stored(self) -> None:
        """Test that log entries are stored with their level."""
        logger = FederationLogger(name="test_store", console=False)
        logger.info("Test message")
        entries = logger.get_log_entries()
        assert len(entries) == 1
        assert "Test message" in entries[0]
        assert "[INFO]" in entries[0]
        logger.close()

    def test_entries_below_level_are_dropped(self) -> None:
        """Test that DEBUG messages are not kept at INFO level."""
        logger = FederationLogger(name="test_level", console=False)
        logger.debug("hidden")
        assert logger.get_log_entries() == []
        logger.close()

    def test_debug_level_logging(self) -> None:
        """Test debug level logging."""
        logger = FederationLogger(name="test_debug", level=LogLevel.DEBUG, console=False)
        logger.debug("Debug message")
        assert "[DEBUG]" in logger.get_log_entries()[0]
        logger.close()

    def test_accepted_verdict(self) -> None:
        """Test logging an accepted update."""
        logger = FederationLogger(name="test_accepted", console=False)
        logger.log_verdict(GateStatus.ACCEPTED, 7, 0.25)
        entries = logger.get_log_entries()
        assert len(entries) == 1
        assert "[ACCEPTED] enterprise 7" in entries[0]
        assert "θ=+0.2500" in entries[0]
        assert "[INFO]" in entries[0]
        logger.close()

    def test_ignored_verdict_with_reason(self) -> None:
        """Test logging an ignored update with its strike count."""
        logger = FederationLogger(name="test_ignored", console=False)
        logger.log_verdict(GateStatus.IGNORED, 3, -0.9, reason="2 strike(s)")
        assert "(2 strike(s))" in logger.get_log_entries()[0]
        logger.close()

    def test_discarded_verdict_is_a_warning(self) -> None:
        """Test that discards are logged at WARNING level."""
        logger = FederationLogger(name="test_discarded", console=False)
        logger.log_verdict(GateStatus.DISCARDED, 1, 0.95)
        assert "[WARNING]" in logger.get_log_entries()[0]
        logger.close()

    def test_round_start_and_end(self) -> None:
        """Test the round banners and summary line."""
        logger = FederationLogger(name="test_round", console=False)
        logger.log_round_start(4, [1, 2, 5], leader=0)
        logger.log_round_end(4, accepted=2, ignored=1, discarded=0, accuracy=87.5)
        entries = logger.get_log_entries()
        assert len(entries) == 3
        assert "ROUND 4 START: 3 enterprises, leader 0" in entries[0]
        assert "ROUND 4 END" in entries[1]
        assert "ACCEPTED=2, IGNORED=1, DISCARDED=0, ACC=87.50%" in entries[2]
        logger.close()

    def test_export_to_txt(self, tmp_path: Path) -> None:
        """Test exporting log to .txt file."""
        logger = FederationLogger(name="test_export", console=False)
        logger.info("Line 1")
        logger.warning("Line 2")
        logger.error("Line 3")

        output_file = tmp_path / "logs" / "run.txt"
        result_path = logger.export_to_txt(output_file)

        assert result_path == output_file
        content = output_file.read_text(encoding="utf-8")
        assert "Line 1" in content
        assert "[WARNING]" in content
        assert "[ERROR]" in content
        logger.close()

    def test_clear_entries(self) -> None:
        """Test clearing log entries."""
        logger = FederationLogger(name="test_clear", console=False)
        logger.info("Message 1")
        logger.clear_entries()
        assert logger.get_log_entries() == []
        logger.close()

    def test_max_entries_limit(self) -> None:
        """Test that only the newest entries are kept."""
        logger = FederationLogger(name="test_max_entries", max_entries=5, console=False)
        for i in range(10):
            logger.info(f"Message {i}")
        entries = logger.get_log_entries()
        assert len(entries) == 5
        assert "Message 5" in entries[0]
        assert "Message 9" in entries[-1]
        logger.close()

    def test_set_log_file(self, tmp_path: Path) -> None:
        """Test writing through a file handler."""
        logger = FederationLogger(name="test_set_file", console=False)
        log_file = tmp_path / "run.log"
        logger.set_log_file(log_file)
        logger.info("Test message")
        logger.close()

        assert logger.log_file == log_file
        assert "Test message" in log_file.read_text(encoding="utf-8")

    def test_library_loggers_reach_the_file(self, tmp_path: Path) -> None:
        """Test that module loggers under the run logger share its file."""
        log_file = tmp_path / "shared.log"
        logger = FederationLogger(name="ledgerfl_shared", log_file=log_file, console=False)
        logging.getLogger("ledgerfl_shared.core.runner").info("from a module")
        logger.close()
        assert "from a module" in log_file.read_text(encoding="utf-8")

    def test_timestamp_in_log_entries(self) -> None:
        """Test that timestamps are present in log entries."""
        logger = FederationLogger(name="test_timestamp", console=False)
        logger.info("Test message")
        timestamp_pattern = r"\d{4}-\d{2}-\d{2} \d{2}:\d{2}:\d{2}"
        assert re.search(timestamp_pattern, logger.get_log_entries()[0]) is not None
        logger.close()


class TestGlobalLogger:
    """Tests for global logger functions."""

    def test_get_logger_creates_singleton(self) -> None:
        """Test that get_logger returns the same instance."""
        reset_logger()
        assert get_logger() is get_logger()
        reset_logger()

    def test_reset_logger_clears_singleton(self) -> None:
        """Test that reset_logger gives a fresh instance."""
        reset_logger()
        first = get_logger()
        first.info("old")
        reset_logger()
        second = get_logger()
        assert second is not first
        assert second.get_log_entries() == []
        reset_logger()
