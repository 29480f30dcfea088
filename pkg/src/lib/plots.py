"""
Static SVG line charts for curves and reports.

Rendering goes through the Agg backend with a fixed hash salt and no date
metadata, so identical inputs give byte-identical files.
"""

from pathlib import Path
from typing import Optional, Sequence, Tuple

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from src.lib.artifacts import write_lock  # noqa: E402

matplotlib.rcParams["svg.hashsalt"] = "radial-spectral"
matplotlib.rcParams["svg.fonttype"] = "none"

Series = Tuple[np.ndarray, np.ndarray, str]


def line_plot(path: Path, series: Sequence[Series], xlabel: str, ylabel: str,
              title: Optional[str] = None) -> Path:
    """One SVG with a line per (x, y, label) series."""
    path = Path(path)
    with write_lock:
        path.parent.mkdir(parents=True, exist_ok=True)
        fig, ax = plt.subplots(figsize=(6, 4))
        for x, y, label in series:
            ax.plot(np.asarray(x), np.asarray(y), label=label, linewidth=1.2)
        ax.set_xlabel(xlabel)
        ax.set_ylabel(ylabel)
        if title:
            ax.set_title(title)
        if len(series) > 1:
            ax.legend()
        ax.grid(True, linewidth=0.3)
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)
    return path
