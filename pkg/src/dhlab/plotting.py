"""Static SVG figures.

The SVG writer is pinned (no date stamp, fixed id salt) so that re-running an
experiment rewrites identical files.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

plt.rcParams["svg.hashsalt"] = "dhlab"

_META = {"Date": None, "Creator": "dhlab"}


def _save(fig, filename) -> None:
    fig.tight_layout()
    fig.savefig(filename, format="svg", metadata=_META)
    plt.close(fig)


def mean_band(times, mean, se, analytic, label: str, filename, title: str = "") -> None:
    """Monte Carlo mean with a +-2 SE band and the exact mean on top."""
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.fill_between(times, mean - 2 * se, mean + 2 * se, color="C0", alpha=0.25, lw=0, label="MC mean +- 2 SE")
    ax.plot(times, mean, color="C0", lw=1.0)
    ax.plot(times, analytic, color="C3", lw=1.0, ls="--", label="exact mean")
    ax.set_xlabel("t")
    ax.set_ylabel(f"E[{label}]")
    if title:
        ax.set_title(title, fontsize=9)
    ax.legend(fontsize=8, frameon=False)
    _save(fig, filename)


def histogram(values, filename, title: str = "", xlabel: str = "") -> None:
    """Freedman-Diaconis histogram with the moment-matched normal density."""
    v = np.asarray(values, dtype=float)
    edges = np.histogram_bin_edges(v, bins="fd")
    fig, ax = plt.subplots(figsize=(4, 3))
    ax.hist(v, bins=edges, density=True, color="C0", alpha=0.6)
    sd = v.std()
    if sd > 0:
        grid = np.linspace(edges[0], edges[-1], 200)
        ax.plot(grid, np.exp(-0.5 * ((grid - v.mean()) / sd) ** 2) / (sd * np.sqrt(2 * np.pi)), color="C3", lw=1.0)
    ax.set_xlabel(xlabel)
    if title:
        ax.set_title(title, fontsize=9)
    _save(fig, filename)
