"""Application entrypoint for ledgerfl."""

from __future__ import annotations

import sys
from typing import Sequence

try:
    from dotenv import load_dotenv
except ImportError:
    # Fallback if python-dotenv is not installed
    def load_dotenv() -> None:
        """Dummy function if dotenv is not available."""
        pass


def main(argv: Sequence[str] | None = None) -> None:
    """Main application entrypoint."""
    # LEDGERFL_* overrides may come from a .env file
    load_dotenv()

    from ledgerfl.ui.cli import run_cli

    sys.exit(run_cli(argv))


if __name__ == "__main__":
    main()
