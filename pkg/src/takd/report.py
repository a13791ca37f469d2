"""Render run records and experiment CSVs into summary tables and figures."""

from __future__ import annotations

import csv
from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .records import read_records

MODE_ORDER = ("NOKD", "BLKD", "TAKD")


def summarize_records(records: list[dict]) -> list[dict]:
    """Aggregate final test accuracy per (experiment, mode)."""
    groups: dict[tuple[str, str], list[float]] = defaultdict(list)
    for rec in records:
        groups[(rec.get("experiment", "?"), rec.get("mode", "?"))].append(
            float(rec.get("final_test_acc", float("nan"))))
    rows = []
    for (experiment, mode), accs in sorted(groups.items()):
        arr = np.asarray(accs)
        rows.append({
            "experiment": experiment,
            "mode": mode,
            "runs": len(accs),
            "mean_test_acc": float(np.nanmean(arr)),
            "max_test_acc": float(np.nanmax(arr)),
        })
    return rows


def write_summary_csv(rows: list[dict], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=["experiment", "mode", "runs",
                                                "mean_test_acc", "max_test_acc"])
        writer.writeheader()
        for row in rows:
            writer.writerow({**row,
                             "mean_test_acc": f"{row['mean_test_acc']:.9g}",
                             "max_test_acc": f"{row['max_test_acc']:.9g}"})


def _fig_mode_comparison(rows: list[dict], path: Path) -> None:
    modes = [m for m in MODE_ORDER if any(r["mode"] == m for r in rows)]
    if not modes:
        return
    means = [np.mean([r["mean_test_acc"] for r in rows if r["mode"] == m])
             for m in modes]
    fig, ax = plt.subplots(figsize=(5, 3.2))
    ax.bar(modes, means, color=["#888888", "#4878cf", "#6acc65"][:len(modes)])
    ax.set_ylabel("mean test accuracy")
    ax.set_title("Training mode comparison")
    for i, v in enumerate(means):
        ax.text(i, v, f"{v:.3f}", ha="center", va="bottom", fontsize=9)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def _fig_training_curves(records: list[dict], path: Path) -> None:
    fig, ax = plt.subplots(figsize=(6, 3.6))
    plotted = 0
    for rec in records:
        curve = rec.get("epoch_test_acc") or []
        if len(curve) > 1:
            label = f"{rec.get('mode', '?')} {'-'.join(map(str, rec.get('path', [])))}"
            ax.plot(range(1, len(curve) + 1), curve, label=label, alpha=0.8)
            plotted += 1
        if plotted >= 12:
            break
    if not plotted:
        plt.close(fig)
        return
    ax.set_xlabel("epoch")
    ax.set_ylabel("test accuracy")
    ax.set_title("Training curves")
    ax.legend(fontsize=7, loc="lower right")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def _fig_gap_sweep(csv_path: Path, out: Path) -> None:
    with open(csv_path, encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        return
    sizes = [int(r["varied_size"]) for r in rows]
    distilled = [float(r["distilled_acc"]) for r in rows]
    scratch = [float(r["scratch_acc"]) for r in rows]
    order = np.argsort(sizes)
    fig, ax = plt.subplots(figsize=(5, 3.4))
    ax.plot(np.asarray(sizes)[order], np.asarray(distilled)[order], "o-",
            label="distilled")
    ax.plot(np.asarray(sizes)[order], np.asarray(scratch)[order], "s--",
            label="scratch", color="crimson")
    ax.set_xlabel("varied size")
    ax.set_ylabel("test accuracy")
    ax.set_title("Gap sweep")
    ax.legend()
    fig.tight_layout()
    fig.savefig(out, dpi=150)
    plt.close(fig)


def _fig_surface(csv_path: Path, out: Path) -> None:
    from .landscape import read_surface_csv

    surface = read_surface_csv(csv_path)
    fig, ax = plt.subplots(figsize=(4.6, 3.8))
    extent = [surface.offsets[0], surface.offsets[-1],
              surface.offsets[0], surface.offsets[-1]]
    im = ax.imshow(surface.grid, origin="lower", extent=extent, cmap="viridis")
    fig.colorbar(im, ax=ax, label="loss")
    ax.set_xlabel("direction b")
    ax.set_ylabel("direction a")
    ax.set_title("Loss surface")
    fig.tight_layout()
    fig.savefig(out, dpi=150)
    plt.close(fig)


def _fig_bounds(csv_path: Path, out: Path) -> None:
    with open(csv_path, encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        return
    n = [float(r["n"]) for r in rows]
    fig, ax = plt.subplots(figsize=(5, 3.4))
    for key in ("nokd", "blkd", "takd"):
        ax.plot(n, [float(r[key]) for r in rows], "o-", label=key.upper())
    ax.set_xscale("log")
    ax.set_xlabel("sample count n")
    ax.set_ylabel("bound value")
    ax.set_title("Generalization-bound chain")
    ax.legend()
    fig.tight_layout()
    fig.savefig(out, dpi=150)
    plt.close(fig)


def render_report(records_path, out_dir) -> list[Path]:
    """Write summary.csv plus figures for everything found alongside the
    records file.  Returns the paths written."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []

    records = []
    records_path = Path(records_path)
    if records_path.exists():
        records = read_records(records_path)
    rows = summarize_records(records)
    summary = out_dir / "summary.csv"
    write_summary_csv(rows, summary)
    written.append(summary)

    if rows:
        fig = out_dir / "mode_comparison.png"
        _fig_mode_comparison(rows, fig)
        if fig.exists():
            written.append(fig)
    if records:
        fig = out_dir / "training_curves.png"
        _fig_training_curves(records, fig)
        if fig.exists():
            written.append(fig)

    scan_dir = records_path.parent if records_path.exists() else out_dir
    for name, renderer in (("gap_sweep.csv", _fig_gap_sweep),
                           ("surface.csv", _fig_surface),
                           ("bounds.csv", _fig_bounds)):
        src = scan_dir / name
        if src.exists():
            out = out_dir / (src.stem + ".png")
            renderer(src, out)
            if out.exists():
                written.append(out)
    return written
