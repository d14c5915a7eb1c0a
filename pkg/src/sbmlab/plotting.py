"""PNG figures written next to the CLI's CSV/JSON outputs."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

# no timestamps or version strings, so reruns give identical files
_META = {"Software": None}


def _save(fig, path) -> Path:
    path = Path(path)
    fig.tight_layout()
    fig.savefig(path, dpi=110, metadata=_META)
    plt.close(fig)
    return path


def plot_lines(x, series: dict, path, *, xlabel: str, ylabel: str, title: str = "",
               vlines: dict | None = None, markers: dict | None = None, logx: bool = False) -> Path:
    """One axis, one line per entry of ``series``; ``markers`` maps a label to (xs, ys)."""
    fig, ax = plt.subplots(figsize=(6, 4))
    for label, y in series.items():
        ax.plot(x, y, label=label, lw=1.4)
    for label, (mx, my) in (markers or {}).items():
        ax.plot(mx, my, "o", ms=5, label=label)
    for label, xv in (vlines or {}).items():
        ax.axvline(xv, ls="--", lw=1, color="gray", label=label)
    if logx:
        ax.set_xscale("log")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    if len(series) + len(markers or {}) + len(vlines or {}) > 1:
        ax.legend(fontsize=8)
    return _save(fig, path)


def plot_label_map(xs, ys, labels: np.ndarray, path, *, xlabel: str, ylabel: str, title: str = "") -> Path:
    """Categorical map; ``labels`` has shape (len(xs), len(ys))."""
    names = sorted(set(labels.ravel().tolist()))
    codes = np.vectorize(names.index)(labels)
    fig, ax = plt.subplots(figsize=(6, 5))
    cmap = plt.get_cmap("tab10", len(names))
    mesh = ax.pcolormesh(xs, ys, codes.T, cmap=cmap, vmin=-0.5, vmax=len(names) - 0.5, shading="nearest")
    cbar = fig.colorbar(mesh, ax=ax, ticks=range(len(names)))
    cbar.ax.set_yticklabels(names, fontsize=8)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    if title:
        ax.set_title(title)
    return _save(fig, path)


def plot_panels(t, panels: dict, path, *, xlabel: str = "t", bands: dict | None = None) -> Path:
    """Stacked axes sharing x; each panel maps a curve label to values.

    ``bands`` maps a curve label to its half-width, drawn as a shaded band.
    """
    fig, axes = plt.subplots(len(panels), 1, figsize=(6, 2.6 * len(panels)), sharex=True, squeeze=False)
    for ax, (name, curves) in zip(axes[:, 0], panels.items()):
        for label, y in curves.items():
            (line,) = ax.plot(t, y, label=label, lw=1.3)
            if bands and label in bands:
                ax.fill_between(t, y - bands[label], y + bands[label], color=line.get_color(), alpha=0.25, lw=0)
        ax.set_ylabel(name)
        if len(curves) > 1:
            ax.legend(fontsize=8)
    axes[-1, 0].set_xlabel(xlabel)
    return _save(fig, path)
