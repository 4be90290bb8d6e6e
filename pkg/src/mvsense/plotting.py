"""SVG figures written next to the CSV outputs of the CLI."""

from __future__ import annotations

import math

import matplotlib
import numpy as np
from matplotlib.figure import Figure

# Fixed salt and no timestamp so re-running a command reproduces the SVG bytes.
matplotlib.rcParams["svg.hashsalt"] = "mvsense"


def _save(fig: Figure, path) -> None:
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})


def _x_label(x) -> str:
    return "inf" if math.isinf(x) else f"{x:g}"


def plot_curve(xs, ys, path, ylabel: str, title: str) -> None:
    """Line plot over the decoding interval, with X on a log axis."""
    xs = [float(x) for x in xs]
    finite = [x for x in xs if not math.isinf(x)]
    fig = Figure(figsize=(5, 3.5))
    ax = fig.add_subplot()
    ax.plot(finite, [y for x, y in zip(xs, ys) if not math.isinf(x)], marker="o")
    if len(finite) > 1 and min(finite) > 0:
        ax.set_xscale("log")
        ax.set_xticks(finite, [_x_label(x) for x in finite])
    ax.set_xlabel("decoding interval X (frames)")
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    ax.grid(True, alpha=0.3)
    _save(fig, path)


def plot_fps_curve(results, path) -> None:
    plot_curve([r.x for r in results], [r.fps for r in results], path,
               "frames per second", "Selective decoding throughput")


def plot_ssim_curve(rows, path) -> None:
    plot_curve([x for x, _ in rows], [s for _, s in rows], path,
               "mean SSIM vs full decode", "Rendering fidelity")


def plot_bench(results, path) -> None:
    """One bar per bench task (log scale, since MV extraction is far faster)."""
    labels = [r.task if r.x is None else f"{r.task}\nX={_x_label(r.x)}" for r in results]
    fig = Figure(figsize=(max(4, 1.4 * len(results)), 3.5))
    ax = fig.add_subplot()
    ax.bar(range(len(results)), [r.fps for r in results], color="tab:blue")
    ax.set_xticks(range(len(results)), labels, fontsize=8)
    ax.set_yscale("log")
    ax.set_ylabel("frames per second")
    _save(fig, path)


def plot_cost(rows, path) -> None:
    """Stacked per-component dollar cost for each framework."""
    parts = [("C_flow", "flow"), ("C_decode", "decode"), ("C_t", "temporal stream"),
             ("C_s", "spatial stream")]
    names = [r["framework"] for r in rows]
    fig = Figure(figsize=(6, 3.5))
    ax = fig.add_subplot()
    bottom = np.zeros(len(rows))
    for key, label in parts:
        vals = np.array([r[key] for r in rows], dtype=float)
        ax.bar(range(len(rows)), vals, bottom=bottom, label=label)
        bottom += vals
    ax.set_xticks(range(len(rows)), names, fontsize=8, rotation=15)
    ax.set_ylabel("dollars per inference pass")
    ax.set_yscale("symlog", linthresh=0.01)
    ax.legend(fontsize=8)
    _save(fig, path)


def plot_kappa(names, matrix, path) -> None:
    matrix = np.asarray(matrix)
    fig = Figure(figsize=(4.5, 4))
    ax = fig.add_subplot()
    im = ax.imshow(matrix, vmin=-1, vmax=1, cmap="RdBu_r")
    ax.set_xticks(range(len(names)), names, rotation=30)
    ax.set_yticks(range(len(names)), names)
    for i in range(len(names)):
        for j in range(len(names)):
            ax.text(j, i, f"{matrix[i, j]:.2f}", ha="center", va="center", fontsize=8)
    fig.colorbar(im, ax=ax, label="Cohen's kappa")
    _save(fig, path)


def plot_recall_difference(diff, path) -> None:
    """Per-class temporal minus spatial recall; bars above zero lean temporal."""
    diff = np.asarray(diff, dtype=float)
    colors = ["tab:orange" if d > 0 else "tab:blue" for d in diff]
    fig = Figure(figsize=(max(4, 0.6 * diff.size), 3.5))
    ax = fig.add_subplot()
    ax.bar(range(diff.size), diff, color=colors)
    ax.axhline(0, color="black", linewidth=0.8)
    ax.set_xticks(range(diff.size), [str(c) for c in range(diff.size)])
    ax.set_xlabel("class")
    ax.set_ylabel("recall(temporal) - recall(spatial)")
    ax.set_ylim(-1.05, 1.05)
    _save(fig, path)
