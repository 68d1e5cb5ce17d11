"""PNG figures rendered from the CSV/JSON a command just wrote.

Only reads the emitted files, so a figure never shows anything the delimited
output does not contain.  matplotlib is imported lazily with the Agg backend.
"""
import csv
import json
import os

__all__ = ["render"]

MAX_PATHS = 8


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def _read_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def _by_path(header, rows, columns):
    out = {}
    idx = [header.index(c) for c in columns]
    for row in rows:
        series = out.setdefault(row[0], [[] for _ in idx])
        for s, i in zip(series, idx):
            s.append(float(row[i]))
    return out


def _solve(plt, csv_path, stem):
    header, rows = _read_csv(csv_path)
    cols = [c for c in header[2:] if c.startswith("Y_")] or header[2:3]
    data = _by_path(header, rows, ["t"] + cols)
    fig, axes = plt.subplots(len(cols), 1, figsize=(7, 2.4 * len(cols)), squeeze=False, sharex=True)
    for pid in list(data)[:MAX_PATHS]:
        t, *ys = data[pid]
        for ax, y in zip(axes[:, 0], ys):
            ax.plot(t, y, lw=0.8, label=f"path {pid}")
    for ax, c in zip(axes[:, 0], cols):
        ax.set_ylabel(c)
    axes[-1, 0].set_xlabel("t")
    axes[0, 0].legend(fontsize="x-small", ncol=4)
    return [_save(fig, plt, stem + "_paths.png")]


def _verify(plt, csv_path, stem):
    header, rows = _read_csv(csv_path)
    data = _by_path(header, rows, ["t", "semiflow_defect", "periodicity_defect"])
    fig, ax = plt.subplots(figsize=(7, 3.2))
    for pid in list(data)[:MAX_PATHS]:
        t, semi, per = data[pid]
        ax.semilogy(t, [max(v, 1e-18) for v in semi], lw=0.8, color="C0")
        if not all(v != v for v in per):
            ax.semilogy(t, [max(v, 1e-18) for v in per], lw=0.8, color="C1")
    ax.plot([], [], color="C0", label="semiflow defect")
    ax.plot([], [], color="C1", label="periodicity defect")
    ax.set_xlabel("t")
    ax.legend(fontsize="small")
    return [_save(fig, plt, stem + "_defects.png")]


def _stationary(plt, csv_path, stem):
    header, rows = _read_csv(csv_path)
    cols = header[1:]
    fig, axes = plt.subplots(1, len(cols), figsize=(3.2 * len(cols), 3), squeeze=False)
    for j, (ax, c) in enumerate(zip(axes[0], cols)):
        ax.hist([float(r[j + 1]) for r in rows], bins=40, density=True)
        ax.set_xlabel(c + "(0)")
    return [_save(fig, plt, stem + "_hist.png")]


def _sweep(plt, json_path, stem):
    with open(json_path, encoding="utf-8") as fh:
        summary = json.load(fh)
    rows = summary["rows"]
    keys = [k for k in ("semiflow_max", "periodicity_max", "tail_total", "iterations")
            if any(isinstance(r.get(k), (int, float)) for r in rows)]
    fig, ax = plt.subplots(figsize=(6, 3.2))
    labels = [str(r["value"]) for r in rows]
    for k in keys:
        ax.plot(labels, [r.get(k) if isinstance(r.get(k), (int, float)) else float("nan") for r in rows],
                marker="o", label=k)
    ax.set_yscale("log")
    ax.set_xlabel(summary["parameter"])
    ax.legend(fontsize="small")
    return [_save(fig, plt, stem + "_sweep.png")]


def _save(fig, plt, path):
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata={"Software": None})
    plt.close(fig)
    return path


def render(command, out_dir, csv_path, json_path):
    """Write the figures for ``command``; returns the list of files written."""
    plt = _pyplot()
    stem = os.path.join(out_dir, command)
    if command == "solve":
        return _solve(plt, csv_path, stem)
    if command == "verify":
        return _verify(plt, csv_path, stem)
    if command == "stationary":
        return _stationary(plt, csv_path, stem)
    if command == "sweep":
        return _sweep(plt, json_path, stem)
    return []
