"""SVG line plots for experiment artifacts."""

import io
import logging
from dataclasses import dataclass
from typing import Sequence

import matplotlib
import numpy as np
from matplotlib.figure import Figure

logger = logging.getLogger(__name__)

# Stable element ids and no timestamp, so identical data gives identical files
SVG_RC = {"svg.hashsalt": "epochnoise", "svg.fonttype": "none"}


@dataclass
class Series:
    label: str
    x: Sequence[float]
    y: Sequence[float]
    markers: bool = False  # Dots instead of a line


def line_plot(
    series: Sequence[Series],
    title: str = "",
    xlabel: str = "",
    ylabel: str = "",
    log_x: bool = False,
    log_y: bool = False,
) -> str:
    """Render ``series`` into one SVG document."""
    with matplotlib.rc_context(SVG_RC):
        fig = Figure(figsize=(6.4, 4.2))
        ax = fig.add_subplot()
        plotted = 0
        for s in series:
            x = np.asarray(s.x, dtype=float)
            y = np.asarray(s.y, dtype=float)
            keep = np.isfinite(x) & np.isfinite(y)
            if log_x:
                keep &= x > 0
            if log_y:
                keep &= y > 0
            plotted += int(keep.sum())
            if s.markers:
                ax.plot(x[keep], y[keep], "o", markersize=2.5, label=s.label)
            else:
                ax.plot(x[keep], y[keep], "-", linewidth=1.2, label=s.label)

        if plotted and log_x:
            ax.set_xscale("log")
        if plotted and log_y:
            ax.set_yscale("log")
        if not plotted and (log_x or log_y):
            logger.warning(f"No plottable points for '{title}'; using linear axes")
        ax.set_title(title)
        ax.set_xlabel(xlabel)
        ax.set_ylabel(ylabel)
        ax.grid(True, alpha=0.3)
        if series:
            ax.legend(fontsize="small")
        fig.tight_layout()

        buffer = io.StringIO()
        fig.savefig(buffer, format="svg", metadata={"Date": None})
    return buffer.getvalue()
