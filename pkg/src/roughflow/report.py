"""Figure rendering for CLI artifacts.

Each renderer reads a delimited artifact already on disk and writes a PNG
next to it; matplotlib is imported lazily with the Agg backend so headless
runs never touch a display.
"""

from __future__ import annotations

import csv
from pathlib import Path


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def render_path_plot(csv_path, png_path, title: str = "") -> None:
    """Plot every component column of a path CSV against its time column."""
    import numpy as np

    data = np.loadtxt(csv_path, delimiter=",", skiprows=1, ndmin=2)
    with open(csv_path) as fh:
        names = fh.readline().strip().split(",")[1:]
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(7, 4))
    for j, name in enumerate(names):
        ax.plot(data[:, 0], data[:, j + 1], lw=1.0, label=name)
    ax.set_xlabel("t")
    ax.set_title(title or Path(csv_path).stem)
    if len(names) <= 8:
        ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(png_path, dpi=120)
    plt.close(fig)


def render_trend_plot(csv_path, png_path, x_col: str, y_col: str, group_col: str | None = None,
                      err_col: str | None = None, logx: bool = True, title: str = "") -> None:
    """Plot y against x from a table CSV, one line per group value."""
    with open(csv_path) as fh:
        rows = list(csv.DictReader(fh))
    groups = sorted({r[group_col] for r in rows}) if group_col else [None]
    plt = _pyplot()
    fig, ax = plt.subplots(figsize=(7, 4))
    for g in groups:
        sel = [r for r in rows if group_col is None or r[group_col] == g]
        xs = [float(r[x_col]) for r in sel]
        ys = [float(r[y_col]) for r in sel]
        if err_col and all(r.get(err_col) not in (None, "", "None") for r in sel):
            es = [float(r[err_col]) for r in sel]
            ax.errorbar(xs, ys, yerr=es, marker="o", capsize=3, label=str(g) if g else y_col)
        else:
            ax.plot(xs, ys, marker="o", label=str(g) if g else y_col)
    if logx:
        ax.set_xscale("log")
    ax.set_xlabel(x_col)
    ax.set_ylabel(y_col)
    ax.set_title(title or Path(csv_path).stem)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(png_path, dpi=120)
    plt.close(fig)
