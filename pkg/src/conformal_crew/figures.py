"""Matplotlib renderers for report artifacts.

Everything draws through the Agg backend and writes PNG files, so rendering
works in headless environments and never opens a window.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .harness import Report
from .selection import OptimalTeamSize

_DPI = 150


def _finish(fig, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=_DPI, bbox_inches="tight")
    plt.close(fig)
    return path


def render_run_figure(report: Report, path: str | Path) -> Path:
    """Bar chart of mean success per method with a stddev whisker."""
    names = list(report.method_names)
    means = [report.summaries[n].mean_success for n in names]
    stds = [report.summaries[n].std_success for n in names]
    fig, ax = plt.subplots(figsize=(1.2 + 1.1 * len(names), 4.0))
    positions = np.arange(len(names))
    ax.bar(positions, means, yerr=stds, capsize=4, color="#4878a8")
    ax.set_xticks(positions)
    ax.set_xticklabels(names, rotation=20, ha="right")
    ax.set_ylabel("success rate")
    ax.set_ylim(0.0, 1.05)
    ax.set_title(f"success by method ({report.x_label}={report.x_value:g})")
    ax.grid(axis="y", alpha=0.3)
    return _finish(fig, path)


def render_sweep_figure(reports: list[Report], path: str | Path) -> Path:
    """Per-method success curves over the swept parameter, with a one
    stddev band around each."""
    if not reports:
        raise ValueError("no reports to render")
    fig, ax = plt.subplots(figsize=(6.5, 4.0))
    xs = np.array([r.x_value for r in reports], dtype=float)
    for name in reports[0].method_names:
        means = np.array([r.summaries[name].mean_success for r in reports])
        stds = np.array([r.summaries[name].std_success for r in reports])
        ax.plot(xs, means, marker="o", label=name)
        ax.fill_between(xs, means - stds, means + stds, alpha=0.15)
    ax.set_xlabel(reports[0].x_label)
    ax.set_ylabel("success rate")
    ax.set_title(f"success vs {reports[0].x_label}")
    ax.legend(fontsize=8)
    ax.grid(alpha=0.3)
    return _finish(fig, path)


def render_find_m_figure(result: OptimalTeamSize, path: str | Path) -> Path:
    """Both accuracy curves against the candidate team size, with the
    chosen size marked."""
    sizes = np.arange(1, len(result.phi_alpha) + 1)
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    ax.plot(sizes, result.phi_alpha, marker="o", label="set-guided team")
    ax.plot(sizes, result.phi_expert, marker="s", label="plain majority")
    ax.axvline(result.m_hat, color="#888888", linestyle="--", label=f"chosen m={result.m_hat}")
    ax.set_xlabel("team size m")
    ax.set_ylabel("accuracy on estimation split")
    ax.set_xticks(sizes)
    ax.set_title("team size selection")
    ax.legend(fontsize=8)
    ax.grid(alpha=0.3)
    return _finish(fig, path)


def render_bounds_figure(report: Report, path: str | Path) -> Path:
    """Per-run comparison of the observed joint success against its
    certified lower bound."""
    rows = [(r.run_index, r.lemma1) for r in report.runs if r.lemma1 is not None]
    if not rows:
        raise ValueError("report carries no bound estimates")
    runs = [row[0] for row in rows]
    lhs = [row[1].lhs for row in rows]
    rhs = [row[1].rhs for row in rows]
    fig, ax = plt.subplots(figsize=(6.5, 4.0))
    ax.plot(runs, lhs, marker="o", label="observed joint success")
    ax.plot(runs, rhs, marker="s", label="certified lower bound")
    ax.set_xlabel("run")
    ax.set_ylabel("frequency")
    ax.set_title("joint success bound by run")
    ax.legend(fontsize=8)
    ax.grid(alpha=0.3)
    return _finish(fig, path)
