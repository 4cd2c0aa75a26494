"""Tests for the command-line interface."""

from __future__ import annotations

import argparse
import io
import json
from dataclasses import replace
from pathlib import Path
from typing import Callable

import pytest

from ledgerfl.app import main
from ledgerfl.chain.ledger import Ledger, PayloadKind, canonical_json, to_jsonl
from ledgerfl.config.settings import RoundConfig
from ledgerfl.ui.cli import EXIT_FAILURE, EXIT_OK, _sizes, build_parser, config_from_args, run_cli

ConfigFactory = Callable[..., RoundConfig]


@pytest.fixture
def config_file(make_config: ConfigFactory, tmp_path: Path) -> Path:
    """Write a small one-round config to disk."""
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(make_config(rounds=1).to_dict()), encoding="utf-8")
    return path


@pytest.fixture
def ledger_file(tmp_path: Path) -> Path:
    """Write a two-block ledger dump."""
    ledger = Ledger.genesis("cfg")
    ledger.append(PayloadKind.KEYS, canonical_json({"key_id": "k"}), 0)
    path = tmp_path / "ledger.jsonl"
    path.write_text(to_jsonl(ledger), encoding="utf-8")
    return path


class TestParser:
    """Tests for argument parsing."""

    def test_sizes(self) -> None:
        """Test the comma-separated size list."""
        assert _sizes("10,20, 40") == [10, 20, 40]

    @pytest.mark.parametrize("text", ["a,b", "0,5", ""])
    def test_invalid_sizes(self, text: str) -> None:
        """Test that bad size lists are rejected."""
        with pytest.raises(argparse.ArgumentTypeError):
            _sizes(text)

    def test_verb_is_required(self) -> None:
        """Test that a missing verb exits with an argparse error."""
        with pytest.raises(SystemExit):
            build_parser().parse_args([])

    def test_overrides_apply_on_top_of_the_file(self, config_file: Path) -> None:
        """Test that flags win over the config file."""
        args = build_parser().parse_args(
            ["run", "--config", str(config_file), "--seed", "11", "--mu", "0.5"]
        )
        cfg = config_from_args(args)
        assert cfg.seed == 11
        assert cfg.mu == 0.5
        assert cfg.enterprises == 6


class TestCommands:
    """Tests for run_cli verbs."""

    def test_run(self, config_file: Path, tmp_path: Path) -> None:
        """Test a full run with progress lines and artifacts."""
        out = io.StringIO()
        code = run_cli(["run", "--config", str(config_file), "--out", str(tmp_path / "r")], out)
        text = out.getvalue()
        assert code == EXIT_OK
        assert "round   0" in text
        assert "ledger: height 5, valid True" in text
        assert (tmp_path / "r" / "metrics.csv").exists()
        assert (tmp_path / "r" / "run.log").exists()

    def test_bench(self, config_file: Path, tmp_path: Path) -> None:
        """Test the overhead sweep table."""
        out = io.StringIO()
        code = run_cli(
            ["bench", "--config", str(config_file), "--sizes", "4", "--out", str(tmp_path)], out
        )
        assert code == EXIT_OK
        assert "enterprises" in out.getvalue()
        assert (tmp_path / "bench.csv").exists()

    def test_attack_eval(self, config_file: Path, tmp_path: Path) -> None:
        """Test the attack evaluation summary."""
        out = io.StringIO()
        code = run_cli(["attack-eval", "--config", str(config_file), "--out", str(tmp_path)], out)
        assert code == EXIT_OK
        assert "ciphertext update: blocked" in out.getvalue()
        assert (tmp_path / "attack_eval.json").exists()

    def test_bad_config_exits_with_failure(
        self, tmp_path: Path, capsys: pytest.CaptureFixture[str]
    ) -> None:
        """Test that a missing config file gives exit code 2."""
        code = run_cli(["run", "--config", str(tmp_path / "absent.json")], io.StringIO())
        assert code == EXIT_FAILURE
        assert "error:" in capsys.readouterr().err

    def test_inspect_valid_ledger(self, ledger_file: Path) -> None:
        """Test listing and verifying a dump."""
        out = io.StringIO()
        assert run_cli(["inspect-ledger", str(ledger_file)], out) == EXIT_OK
        assert "keys" in out.getvalue()
        assert "chain valid (2 blocks)" in out.getvalue()

    def test_inspect_broken_ledger(
        self, ledger_file: Path, capsys: pytest.CaptureFixture[str]
    ) -> None:
        """Test that a tampered dump reports the broken height."""
        ledger = Ledger.genesis("cfg")
        ledger.append(PayloadKind.KEYS, canonical_json({"key_id": "k"}), 0)
        blocks = list(ledger)
        blocks[1] = replace(blocks[1], payload=b'{"key_id":"forged"}')
        ledger_file.write_text(to_jsonl(blocks), encoding="utf-8")

        assert run_cli(["inspect-ledger", str(ledger_file)], io.StringIO()) == EXIT_FAILURE
        assert "chain broken at height 1" in capsys.readouterr().err


class TestMain:
    """Tests for the application entrypoint."""

    def test_main_exits_with_the_command_code(self, ledger_file: Path) -> None:
        """Test that main raises SystemExit with run_cli's result."""
        with pytest.raises(SystemExit) as exc_info:
            main(["inspect-ledger", str(ledger_file)])
        assert exc_info.value.code == EXIT_OK
