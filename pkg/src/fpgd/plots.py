"""Static SVG charts rendered purely from emitted CSV files."""

from __future__ import annotations

import csv
from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

matplotlib.rcParams["svg.hashsalt"] = "fpgd"


def _save(fig, out_svg) -> None:
    """Write SVG deterministically (no embedded creation date)."""
    fig.savefig(out_svg, format="svg", metadata={"Date": None})
    plt.close(fig)


def _read_csv(path: Path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def plot_cdf(csv_path: Path, out_svg: Path, value: str, group: str) -> None:
    """Empirical CDF of `value`, one curve per `group` level."""
    rows = _read_csv(csv_path)
    series = defaultdict(list)
    for row in rows:
        series[row[group]].append(float(row[value]))
    fig, ax = plt.subplots(figsize=(6, 4))
    for key in sorted(series, key=float):
        vals = np.sort(np.array(series[key]))
        ax.step(vals, np.arange(1, len(vals) + 1) / len(vals), where="post", label=f"{group}={key}")
    ax.set_xlabel(value)
    ax.set_ylabel("empirical CDF")
    ax.legend(fontsize=8)
    fig.tight_layout()
    _save(fig, out_svg)


def plot_histogram(hist_csv: Path, summary_csv: Path, out_svg: Path) -> None:
    """Log-log density plot per depth with fitted and reference slopes."""
    rows = _read_csv(hist_csv)
    summaries = {row["layers"]: row for row in _read_csv(summary_csv)}
    groups = defaultdict(list)
    for row in rows:
        groups[row["layers"]].append(row)
    fig, ax = plt.subplots(figsize=(6, 4))
    for key in sorted(groups, key=float):
        rs = groups[key]
        centers = np.array([np.sqrt(float(r["bin_lo"]) * float(r["bin_hi"])) for r in rs])
        dens = np.array([float(r["density"]) for r in rs])
        mask = dens > 0
        ax.loglog(centers[mask], dens[mask], drawstyle="steps-mid", label=f"L={key}")
        s = summaries.get(key)
        if s is not None:
            c = float(s["ref_constant"])
            xs = np.logspace(np.log10(float(s["fit_lo"])), 0, 50)
            ax.loglog(xs, c * xs**-0.5, "--", linewidth=0.8)
    ax.set_xlabel("update magnitude")
    ax.set_ylabel("density")
    ax.legend(fontsize=8)
    fig.tight_layout()
    _save(fig, out_svg)


def plot_training_curves(csv_path: Path, out_svg: Path, value: str) -> None:
    """Mean of `value` over repetitions vs iteration, per (layers, noise)."""
    rows = [r for r in _read_csv(csv_path) if r[value] != ""]
    layer_levels = sorted({r["layers"] for r in rows}, key=float)
    fig, axes = plt.subplots(1, len(layer_levels), figsize=(6 * len(layer_levels), 4), squeeze=False)
    for ax, layers in zip(axes[0], layer_levels):
        grouped = defaultdict(lambda: defaultdict(list))
        for r in rows:
            if r["layers"] == layers:
                grouped[r["noise"]][int(r["iteration"])].append(float(r[value]))
        for noise in sorted(grouped, key=float):
            its = sorted(grouped[noise])
            means = [float(np.mean(grouped[noise][i])) for i in its]
            ax.plot(its, means, label=f"noise={noise}")
        ax.set_title(f"L={layers}")
        ax.set_xlabel("iteration")
        ax.set_ylabel(value)
        if value == "risk":
            ax.set_yscale("log")
        ax.legend(fontsize=7)
    fig.tight_layout()
    _save(fig, out_svg)
