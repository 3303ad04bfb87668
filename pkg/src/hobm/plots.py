"""Static SVG figures drawn from a results CSV, and nothing else.

Output is byte-stable: no timestamps in the metadata and a fixed hash salt
for SVG element ids.
"""

from __future__ import annotations

import csv
from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

# log axes cannot show the exact zeros of saturated models
FLOOR = 1e-12
COMPONENTS = (("total_nats", "Total error"), ("bias_nats", "Bias"), ("variance_nats", "Variance"))
LABELS = {"hbm": ("HBM", "order"), "rbm": ("RBM", "hidden")}


def read_results(path) -> list[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    for row in rows:
        for key in ("n", "complexity", "param_count", "sample_size", "replicates_ok"):
            row[key] = int(row[key])
        for key in ("bias_nats", "variance_nats", "variance_stderr", "total_nats"):
            row[key] = float(row[key])
    return rows


def _floor(values):
    return [max(v, FLOOR) for v in values]


def _legend(ax) -> None:
    if ax.get_legend_handles_labels()[0]:
        ax.legend()


def _save(fig, path: Path) -> Path:
    with plt.rc_context({"svg.hashsalt": "hobm", "svg.fonttype": "path"}):
        fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path


def _grouped(rows, family):
    groups = defaultdict(list)
    for row in rows:
        if row["family"] == family and row["status"] != "failed":
            groups[row["complexity"]].append(row)
    for key in groups:
        groups[key].sort(key=lambda r: r["sample_size"])
    return dict(sorted(groups.items()))


def error_vs_sample_size(rows, family, path) -> Path:
    """Total / bias / variance against N, one line per complexity."""
    name, unit = LABELS[family]
    groups = _grouped(rows, family)
    fig, axes = plt.subplots(1, 3, figsize=(13, 4), sharex=True)
    for ax, (column, title) in zip(axes, COMPONENTS):
        for complexity, group in groups.items():
            xs = [r["sample_size"] for r in group]
            ax.plot(xs, _floor([r[column] for r in group]), marker="o", label=f"{unit} {complexity}")
        ax.set(xscale="log", yscale="log", xlabel="sample size N", ylabel="KL (nats)", title=title)
        ax.grid(True, which="both", alpha=0.3)
    _legend(axes[0])
    fig.suptitle(f"{name}: error against sample size")
    fig.tight_layout()
    return _save(fig, path)


def error_by_complexity(rows, family, path) -> Path:
    """One panel per complexity, total / bias / variance against N."""
    name, unit = LABELS[family]
    groups = _grouped(rows, family)
    fig, axes = plt.subplots(1, max(len(groups), 1), figsize=(4 * max(len(groups), 1), 3.6), squeeze=False)
    for ax, (complexity, group) in zip(axes[0], groups.items()):
        xs = [r["sample_size"] for r in group]
        for column, title in COMPONENTS:
            ax.plot(xs, _floor([r[column] for r in group]), marker="o", label=title)
        ax.set(xscale="log", yscale="log", xlabel="sample size N", title=f"{unit} {complexity}")
        ax.grid(True, which="both", alpha=0.3)
    axes[0][0].set_ylabel("KL (nats)")
    _legend(axes[0][0])
    fig.suptitle(f"{name}: error by model complexity")
    fig.tight_layout()
    return _save(fig, path)


def error_by_sample_size(rows, family, path) -> Path:
    """One panel per N, total / bias / variance against parameter count."""
    name, _ = LABELS[family]
    sizes = sorted({r["sample_size"] for r in rows if r["family"] == family})
    fig, axes = plt.subplots(1, max(len(sizes), 1), figsize=(4 * max(len(sizes), 1), 3.6), squeeze=False)
    for ax, size in zip(axes[0], sizes):
        sel = sorted(
            (r for r in rows if r["family"] == family and r["sample_size"] == size and r["status"] != "failed"),
            key=lambda r: r["param_count"],
        )
        xs = [r["param_count"] for r in sel]
        for column, title in COMPONENTS:
            ax.plot(xs, _floor([r[column] for r in sel]), marker="o", label=title)
        ax.set(yscale="log", xlabel="parameters", title=f"N = {size}")
        ax.grid(True, which="both", alpha=0.3)
    axes[0][0].set_ylabel("KL (nats)")
    _legend(axes[0][0])
    fig.suptitle(f"{name}: error by sample size")
    fig.tight_layout()
    return _save(fig, path)


def total_vs_params(rows, path) -> Path:
    """HBM and RBM total error against parameter count, one panel per N."""
    sizes = sorted({r["sample_size"] for r in rows})
    fig, axes = plt.subplots(1, max(len(sizes), 1), figsize=(4 * max(len(sizes), 1), 3.6), squeeze=False)
    for ax, size in zip(axes[0], sizes):
        for family in ("hbm", "rbm"):
            sel = sorted(
                (r for r in rows if r["family"] == family and r["sample_size"] == size and r["status"] != "failed"),
                key=lambda r: r["param_count"],
            )
            if sel:
                ax.plot(
                    [r["param_count"] for r in sel],
                    _floor([r["total_nats"] for r in sel]),
                    marker="o",
                    label=LABELS[family][0],
                )
        ax.set(yscale="log", xlabel="parameters", title=f"N = {size}")
        ax.grid(True, which="both", alpha=0.3)
        _legend(ax)
    axes[0][0].set_ylabel("total KL (nats)")
    fig.suptitle("Total error against number of parameters")
    fig.tight_layout()
    return _save(fig, path)


def plot_results(csv_path, out_dir) -> list[Path]:
    rows = read_results(csv_path)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for family in ("hbm", "rbm"):
        if any(r["family"] == family for r in rows):
            written.append(error_vs_sample_size(rows, family, out / f"{family}_error_vs_sample_size.svg"))
            written.append(error_by_complexity(rows, family, out / f"{family}_by_complexity.svg"))
            written.append(error_by_sample_size(rows, family, out / f"{family}_by_sample_size.svg"))
    if rows:
        written.append(total_vs_params(rows, out / "total_vs_params.svg"))
    return written
