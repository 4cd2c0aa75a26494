"""Command-line interface for ledgerfl."""

from __future__ import annotations

import argparse
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from queue import Empty, Queue
from typing import Callable, Sequence, TextIO, TypeVar

from ledgerfl.chain.ledger import find_first_invalid
from ledgerfl.config.settings import AGGREGATORS, BACKENDS, RoundConfig, load_config
from ledgerfl.core.errors import FederationError
from ledgerfl.core.logger import FederationLogger, LogLevel
from ledgerfl.core.runner import RoundEvent, RoundEventType
from ledgerfl.persistence.result_storage import load_ledger_jsonl

T = TypeVar("T")

EXIT_OK = 0
EXIT_FAILURE = 2

# Flags that override the matching RoundConfig field
OVERRIDES = ("seed", "backend", "aggregator", "rounds", "enterprises", "alpha", "mu")


def _sizes(text: str) -> list[int]:
    try:
        sizes = [int(part) for part in text.split(",") if part.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"invalid size list {text!r}") from exc
    if not sizes or min(sizes) < 1:
        raise argparse.ArgumentTypeError("sizes must be positive integers")
    return sizes


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, help="JSON config file")
    parser.add_argument("--seed", type=int, help="master seed")
    parser.add_argument("--out", type=Path, default=Path("results"), help="output directory")
    parser.add_argument("--backend", choices=BACKENDS)
    parser.add_argument("--aggregator", choices=AGGREGATORS)
    parser.add_argument("--rounds", type=int)
    parser.add_argument("--enterprises", type=int)
    parser.add_argument("--alpha", type=float, help="Dirichlet concentration")
    parser.add_argument("--mu", type=float, help="fraction of malicious enterprises")
    parser.add_argument("-v", "--verbose", action="store_true", help="log at DEBUG level")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ledgerfl",
        description="Ledger-coordinated, privacy-preserving federated learning simulator.",
    )
    verbs = parser.add_subparsers(dest="verb", required=True)

    _add_config_flags(verbs.add_parser("run", help="run a full experiment"))

    bench = verbs.add_parser("bench", help="overhead sweep over enterprise counts")
    _add_config_flags(bench)
    bench.add_argument("--sizes", type=_sizes, default=[10, 20, 40], help="e.g. 10,20,40")

    _add_config_flags(verbs.add_parser("attack-eval", help="reconstruction and inference suite"))

    inspect = verbs.add_parser("inspect-ledger", help="print and verify a ledger.jsonl dump")
    inspect.add_argument("path", type=Path)
    return parser


def config_from_args(args: argparse.Namespace) -> RoundConfig:
    """The config file (or the defaults) with the command-line overrides applied.

    Raises:
        ConfigError: If the file or the resulting config is invalid.
    """
    base = load_config(args.config) if args.config is not None else RoundConfig()
    data = base.to_dict()
    for name in OVERRIDES:
        value = getattr(args, name, None)
        if value is not None:
            data[name] = value
    return RoundConfig.from_dict(data).validate()


def _print_progress(event: RoundEvent, out: TextIO) -> None:
    if event.event_type is RoundEventType.ROUND_COMPLETED:
        data = event.data
        print(
            f"round {data['round']:>3}  acc {data['accuracy']:6.2f}%  "
            f"clusters {data['clusters']}  accepted {data['accepted']}  "
            f"ignored {data['ignored']}  discarded {data['discarded']}  "
            f"comp {data['comp_total']:.3f}s",
            file=out,
        )
    elif event.event_type is RoundEventType.ROUND_FAILED:
        print(f"round {event.round} failed: {event.data.get('error', '')}", file=out)


def run_with_progress(
    task: Callable[[], T], events: Queue[RoundEvent], out: TextIO, poll: float = 0.1
) -> T:
    """Run ``task`` on a worker thread while printing round events from ``events``."""
    with ThreadPoolExecutor(max_workers=1) as pool:
        future = pool.submit(task)
        while not future.done():
            try:
                _print_progress(events.get(timeout=poll), out)
            except Empty:
                continue
    while not events.empty():
        _print_progress(events.get_nowait(), out)
    return future.result()


def _make_logger(args: argparse.Namespace, log_file: Path | None) -> FederationLogger:
    """File logging at INFO; the console only gets the log with --verbose."""
    level = LogLevel.DEBUG if args.verbose else LogLevel.INFO
    return FederationLogger(level=level, log_file=log_file, console=args.verbose)


def _cmd_run(args: argparse.Namespace, out: TextIO) -> int:
    from ledgerfl.core.experiment import run_experiment

    cfg = config_from_args(args)
    events: Queue[RoundEvent] = Queue()
    run_logger = _make_logger(args, args.out / "run.log")
    try:
        result = run_with_progress(
            lambda: run_experiment(cfg, args.out, events, run_logger), events, out
        )
    finally:
        run_logger.close()
    report = result.report
    print(f"final accuracy: {report.final_accuracy:.2f}%", file=out)
    print(f"verdicts: {report.gate.to_dict()}", file=out)
    print(f"removed: {report.removed or 'none'}", file=out)
    print(f"ledger: height {report.ledger_height}, valid {report.ledger_valid}", file=out)
    print(f"results written to {args.out}", file=out)
    return EXIT_OK


def _cmd_bench(args: argparse.Namespace, out: TextIO) -> int:
    from ledgerfl.core.experiment import run_bench

    cfg = config_from_args(args)
    rows = run_bench(cfg, args.sizes, args.out)
    print(f"{'enterprises':>11}  {'client_s':>10}  {'server_s':>10}  {'total_s':>10}", file=out)
    for row in rows:
        print(
            f"{row.enterprises:>11}  {row.comp_client:>10.4f}  "
            f"{row.comp_server:>10.4f}  {row.comp_total:>10.4f}",
            file=out,
        )
    print(f"results written to {args.out}", file=out)
    return EXIT_OK


def _cmd_attack_eval(args: argparse.Namespace, out: TextIO) -> int:
    from ledgerfl.core.experiment import run_attack_eval

    cfg = config_from_args(args)
    run_logger = _make_logger(args, None)
    try:
        report = run_attack_eval(cfg, args.out, run_logger)
    finally:
        run_logger.close()
    plaintext = report.plaintext
    print(f"plaintext gradient: {plaintext.verdict.value} (GML {plaintext.gml})", file=out)
    print(f"ciphertext update: {report.encrypted.verdict.value}", file=out)
    for kind, advantage in sorted(report.membership_advantage.items()):
        print(f"membership advantage ({kind}): {advantage:+.4f}", file=out)
    print(
        f"exposure audit: {'passed' if report.audit.passed else 'failed'} "
        f"({len(report.audit.violations)} violations)",
        file=out,
    )
    print(f"results written to {args.out}", file=out)
    return EXIT_OK


def _cmd_inspect_ledger(args: argparse.Namespace, out: TextIO) -> int:
    ledger = load_ledger_jsonl(args.path)
    for block in ledger:
        print(
            f"{block.height:>5}  {block.kind.value:<13} miner {block.miner:>4}  "
            f"{block.hash[:16]}  {len(block.payload)} bytes",
            file=out,
        )
    bad = find_first_invalid(ledger)
    if bad is not None:
        print(f"chain broken at height {bad}", file=sys.stderr)
        return EXIT_FAILURE
    print(f"chain valid ({len(ledger)} blocks)", file=out)
    return EXIT_OK


COMMANDS: dict[str, Callable[[argparse.Namespace, TextIO], int]] = {
    "run": _cmd_run,
    "bench": _cmd_bench,
    "attack-eval": _cmd_attack_eval,
    "inspect-ledger": _cmd_inspect_ledger,
}


def run_cli(argv: Sequence[str] | None = None, out: TextIO | None = None) -> int:
    """Parse ``argv`` and run the verb; returns the process exit code."""
    args = build_parser().parse_args(argv)
    out = out if out is not None else sys.stdout
    try:
        return COMMANDS[args.verb](args, out)
    except FederationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE
