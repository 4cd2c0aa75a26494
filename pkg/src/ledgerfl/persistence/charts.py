"""Optional SVG line charts (needs the ``plots`` extra)."""

from __future__ import annotations

import logging
from pathlib import Path
from typing import Mapping, Sequence

from ledgerfl.core.errors import StorageError

logger = logging.getLogger(__name__)


def write_line_chart(
    path: str | Path,
    xs: Sequence[float],
    series: Mapping[str, Sequence[float | None]],
    title: str,
    xlabel: str = "round",
    ylabel: str = "",
) -> Path | None:
    """Plot one line per series and save as SVG.

    Returns:
        The written path, or None when matplotlib is not installed.

    Raises:
        StorageError: If the figure cannot be saved.
    """
    try:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        logger.warning("matplotlib is not installed; skipping chart %s", path)
        return None

    path = Path(path)
    fig, ax = plt.subplots(figsize=(6.4, 4.0))
    try:
        for name, values in series.items():
            points = [(x, y) for x, y in zip(xs, values) if y is not None]
            if points:
                ax.plot([p[0] for p in points], [p[1] for p in points], label=name)
        ax.set_title(title)
        ax.set_xlabel(xlabel)
        ax.set_ylabel(ylabel)
        ax.grid(True, alpha=0.3)
        if series:
            ax.legend()
        fig.savefig(path, format="svg", bbox_inches="tight")
    except OSError as exc:
        raise StorageError(path, f"cannot save chart ({exc})") from exc
    finally:
        plt.close(fig)
    return path
