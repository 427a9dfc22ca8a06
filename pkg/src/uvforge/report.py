"""Run reports: aligned text table, TSV, manifest, and a loss curve plot."""

import os

import numpy as np

from . import fileio as F


def format_table(rows, columns=None, floatfmt="{:.3f}"):
    """Aligned text table from a list of dicts; missing cells print as '-'."""
    if not rows:
        return "(no rows)\n"
    if columns is None:
        columns = []
        for r in rows:
            for k in r:
                if k not in columns:
                    columns.append(k)

    def cell(r, c):
        v = r.get(c)
        if v is None:
            return "-"
        if isinstance(v, float):
            return floatfmt.format(v) if np.isfinite(v) else "-"
        return str(v)

    grid = [[str(c) for c in columns]] + [[cell(r, c) for c in columns] for r in rows]
    widths = [max(len(row[i]) for row in grid) for i in range(len(columns))]
    lines = []
    for j, row in enumerate(grid):
        lines.append("  ".join(s.ljust(w) for s, w in zip(row, widths)).rstrip())
        if j == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def write_tsv(path, rows, columns=None):
    if columns is None:
        columns = []
        for r in rows:
            for k in r:
                if k not in columns:
                    columns.append(k)

    def cell(r, c):
        v = r.get(c)
        if v is None:
            return ""
        return repr(v) if isinstance(v, float) else str(v)

    lines = ["\t".join(columns)]
    lines += ["\t".join(cell(r, c) for c in columns) for r in rows]
    F.atomic_write_bytes(path, ("\n".join(lines) + "\n").encode())


def plot_loss_curve(history, path):
    """history: list of {step, loss, ...} dicts from the trainer."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    steps = [h["step"] for h in history]
    losses = [h["loss"] for h in history]
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.plot(steps, losses, lw=1)
    ax.set_xlabel("step")
    ax.set_ylabel("masked mse")
    ax.set_yscale("log")
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def run_files(out_dir):
    """Every artifact under out_dir except the manifest itself."""
    found = []
    for root, _, names in os.walk(out_dir):
        for name in names:
            rel = os.path.relpath(os.path.join(root, name), out_dir)
            if rel != "manifest.json":
                found.append(rel)
    return sorted(found)


def write_report(out_dir, rows, title, extra=None):
    """Text table + TSV + manifest over everything in out_dir."""
    table = format_table(rows)
    body = f"{title}\n{'=' * len(title)}\n\n{table}"
    if extra:
        body += "\n" + "\n".join(f"{k}: {v}" for k, v in extra.items()) + "\n"
    F.atomic_write_bytes(os.path.join(out_dir, "report.txt"), body.encode())
    write_tsv(os.path.join(out_dir, "metrics.tsv"), rows)
    F.write_manifest(out_dir, run_files(out_dir), extra={"title": title})
    return body
