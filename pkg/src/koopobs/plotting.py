"""Measurement-versus-time overlays written as SVG files."""
from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .dynamics import Trajectory  # noqa: E402

# fixed ids and no timestamp, so identical runs give identical files
matplotlib.rcParams["svg.hashsalt"] = "koopobs"
_SVG_META = {"Date": None, "Creator": None}


def plot_measurements(runs: Sequence[tuple[str, Trajectory]], path: str | Path, title: str = "") -> Path:
    """Overlay every measurement channel of each run against time."""
    if not runs:
        raise ValueError("nothing to plot")
    q = runs[0][1].q
    fig, axes = plt.subplots(q, 1, figsize=(6.4, 2.4 * q + 0.6), sharex=True, squeeze=False)
    styles = ["-", "--", ":", "-."]
    for k, (label, traj) in enumerate(runs):
        for j in range(q):
            axes[j, 0].plot(traj.times, traj.measurements[:, j], styles[k % len(styles)], lw=1.4, label=label)
    for j in range(q):
        axes[j, 0].set_ylabel(f"y{j + 1}")
        axes[j, 0].grid(alpha=0.3)
    axes[-1, 0].set_xlabel("t")
    axes[0, 0].legend(frameon=False, fontsize="small")
    if title:
        axes[0, 0].set_title(title)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, format="svg", metadata=_SVG_META)
    plt.close(fig)
    return path
