"""Static figures for the report path (PNG files, no interactive backends)."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def plot_revenue(rounds, revenue, path: Path, title: str = "", benchmarks: dict | None = None) -> Path:
    """Cumulative revenue against the round index, with optional per-round benchmark lines."""
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(rounds, revenue, label="revenue")
    for label, rate in (benchmarks or {}).items():
        ax.plot(rounds, np.asarray(rounds) * rate, linestyle="--", linewidth=1, label=f"{label} x t")
    ax.set_xlabel("round")
    ax.set_ylabel("cumulative revenue")
    ax.set_title(title)
    ax.legend(loc="upper left", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return path


def plot_expected_bid(rounds, occupancy, bids, values, path: Path, title: str = "") -> Path:
    """Mean bid label played by each value context over time.

    ``occupancy`` has shape (bins, m, K) and holds the share of each arm.
    """
    ebid = np.asarray(occupancy) @ np.asarray(bids)
    fig, ax = plt.subplots(figsize=(6, 4))
    styles = ["-", "--", ":", "-."]
    for c, v in enumerate(values):
        # overlapping contexts stay distinguishable through the line style
        ax.step(rounds, ebid[:, c], where="pre", linestyle=styles[c % 4], label=f"v = {v:g}")
    ax.set_xlabel("round")
    ax.set_ylabel("expected bid")
    ax.set_ylim(-0.02, max(1.0, float(np.max(bids))) + 0.02)
    ax.set_title(title)
    ax.legend(loc="best", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return path
