"""Headless figure rendering for run reports: learning curves and reward CCDFs."""

from __future__ import annotations

import csv

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def _read_csv(path: str) -> dict[str, list[float]]:
    cols: dict[str, list[float]] = {}
    with open(path) as fh:
        for row in csv.DictReader(fh):
            for k, v in row.items():
                cols.setdefault(k, []).append(float(v))
    return cols


def plot_learning_curve(plotdata_path: str, out_png: str,
                        title: str = "Vehicular reward") -> str:
    cols = _read_csv(plotdata_path)
    fig, ax = plt.subplots(figsize=(7, 4.5))
    ax.plot(cols["episode"], cols["mean"], color="tab:blue", lw=1.5,
            label="mean over vehicles")
    ax.fill_between(cols["episode"], cols["p05"], cols["p95"],
                    color="tab:blue", alpha=0.25, label="90% band")
    ax.set_xlabel("episode")
    ax.set_ylabel("smoothed reward")
    ax.set_title(title)
    ax.grid(alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(out_png, dpi=130)
    plt.close(fig)
    return out_png


def plot_ccdf(series: dict[str, str], out_png: str,
              title: str = "Per-slot vehicular reward CCDF") -> str:
    """series: label -> ccdf.csv path (columns reward, ccdf)."""
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for label, path in series.items():
        cols = _read_csv(path)
        ax.step(cols["reward"], cols["ccdf"], where="post", lw=1.5, label=label)
    ax.set_xlabel("reward")
    ax.set_ylabel("P(reward > x)")
    ax.set_ylim(0.0, 1.02)
    ax.set_title(title)
    ax.grid(alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(out_png, dpi=130)
    plt.close(fig)
    return out_png
