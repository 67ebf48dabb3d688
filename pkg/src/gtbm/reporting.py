"""Report emission: JSON, long-format CSVs, and matplotlib figures.

All writers are deterministic (sorted keys, repr floats, no timestamps) so
re-running an identical config reproduces files bitwise.
"""

import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np


def write_json(payload, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def write_csv(path, columns):
    """Write a dict of equal-length columns as CSV (insertion order)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    names = list(columns)
    arrays = [np.asarray(columns[n]).ravel() for n in names]
    length = len(arrays[0])
    with open(path, "w") as fh:
        fh.write(",".join(names) + "\n")
        for i in range(length):
            fh.write(",".join(repr(float(a[i])) for a in arrays) + "\n")
    return path


def emit_plot_data(report, outdir, base):
    """Dump every series attached to a report as a long-format CSV."""
    written = []
    for name, columns in report.series.items():
        written.append(write_csv(Path(outdir) / f"{base}_{name}.csv", columns))
    return written


def _finish(fig, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=110, bbox_inches="tight")
    plt.close(fig)
    return path


def fig_histogram(samples, title, xlabel, path, bins=60):
    fig, ax = plt.subplots(figsize=(5, 3.2))
    ax.hist(np.asarray(samples), bins=bins, color="steelblue", alpha=0.85)
    ax.set_xlabel(xlabel)
    ax.set_ylabel("count")
    ax.set_title(title)
    return _finish(fig, path)


def fig_cdf_overlay(sample_a, sample_b, labels, title, path):
    fig, ax = plt.subplots(figsize=(5, 3.2))
    for s, lab in zip((sample_a, sample_b), labels):
        s = np.sort(np.asarray(s))
        ax.step(s, np.arange(1, len(s) + 1) / len(s), where="post", label=lab)
    ax.set_xlabel("g(0) distance from start")
    ax.set_ylabel("empirical CDF")
    ax.set_title(title)
    ax.legend(loc="lower right")
    return _finish(fig, path)


def fig_curves(x, curves, xlabel, ylabel, title, path, logy=False):
    fig, ax = plt.subplots(figsize=(5, 3.2))
    for label, y in curves.items():
        ax.plot(np.asarray(x), np.asarray(y), marker="o", ms=3, label=label)
    if logy:
        ax.set_yscale("log")
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    ax.legend()
    return _finish(fig, path)


def fig_bars(labels, values, errors, title, ylabel, path, hline=None, hlabel=None):
    fig, ax = plt.subplots(figsize=(5, 3.2))
    xs = np.arange(len(labels))
    ax.bar(xs, values, yerr=errors, color="steelblue", alpha=0.85, capsize=3)
    if hline is not None:
        ax.axhline(hline, color="firebrick", ls="--", label=hlabel)
        ax.legend()
    ax.set_xticks(xs)
    ax.set_xticklabels(labels, rotation=20, ha="right", fontsize=8)
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    return _finish(fig, path)


def fig_fields(fields, titles, path, suptitle=None):
    n = len(fields)
    fig, axes = plt.subplots(1, n, figsize=(3.2 * n, 3.0))
    if n == 1:
        axes = [axes]
    for ax, field, title in zip(axes, fields, titles):
        im = ax.imshow(np.asarray(field).T, origin="lower", cmap="viridis",
                       extent=(0, 2 * np.pi, 0, 2 * np.pi))
        fig.colorbar(im, ax=ax, shrink=0.85)
        ax.set_title(title, fontsize=9)
    if suptitle:
        fig.suptitle(suptitle)
    return _finish(fig, path)
