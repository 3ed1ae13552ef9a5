"""Summaries of sweep results: aggregated CSV tables and matplotlib figures.

The CSV tables are the contract; the PNG figures are a convenience rendered
from the same aggregates.
"""

from __future__ import annotations

import csv
import io
from collections import defaultdict
from pathlib import Path

import numpy as np


def group_mean(rows: list[dict], keys: tuple, metric: str) -> list[dict]:
    """Mean, standard error and count of ``metric`` per distinct ``keys`` tuple, in first-seen order."""
    groups = defaultdict(list)
    for row in rows:
        value = row.get(metric)
        if value is None:
            continue
        groups[tuple(row[k] for k in keys)].append(float(value))
    out = []
    for key, values in groups.items():
        v = np.asarray(values)
        sem = float(v.std(ddof=1) / np.sqrt(v.size)) if v.size > 1 else 0.0
        out.append({**dict(zip(keys, key)), "mean": float(v.mean()), "sem": sem, "count": int(v.size)})
    return out


def table_to_csv(table: list[dict], metric: str) -> str:
    if not table:
        return ""
    columns = [k for k in table[0] if k not in ("mean", "sem", "count")]
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns + [f"{metric}_mean", f"{metric}_sem", "count"])
    for row in table:
        writer.writerow([row[c] for c in columns] + [repr(row["mean"]), repr(row["sem"]), row["count"]])
    return buf.getvalue()


def summaries(rows: list[dict]) -> dict[str, str]:
    """File name -> CSV text for each summary table."""
    by_loss = ("loss", "beta", "flip_rate", "pointwise_rho")
    drdpo = [r for r in rows if r["loss"] == "drdpo"]
    return {
        "accuracy_by_loss.csv": table_to_csv(group_mean(rows, by_loss, "preference_accuracy"), "preference_accuracy"),
        "reward_by_loss.csv": table_to_csv(group_mean(rows, by_loss, "expected_reward"), "expected_reward"),
        "kl_by_loss.csv": table_to_csv(group_mean(rows, by_loss, "kl"), "kl"),
        "accuracy_by_beta_prime.csv": table_to_csv(
            group_mean(drdpo, ("beta_prime", "flip_rate", "pointwise_rho"), "preference_accuracy"),
            "preference_accuracy"),
    }


def _plot_lines(ax, table, x_key, series_key, label_fmt):
    series = defaultdict(list)
    for row in table:
        series[row[series_key]].append((row[x_key], row["mean"], row["sem"]))
    for name, points in series.items():
        points.sort()
        x, y, e = (np.array(c) for c in zip(*points))
        ax.errorbar(x, y, yerr=e, marker="o", capsize=3, label=label_fmt(name))


def render_figures(rows: list[dict], out_dir) -> list[Path]:
    """Write PNG figures of accuracy against flip rate and against beta'."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out_dir = Path(out_dir)
    written = []

    table = group_mean(rows, ("loss", "flip_rate"), "preference_accuracy")
    if table:
        fig, ax = plt.subplots(figsize=(5, 3.5))
        _plot_lines(ax, table, "flip_rate", "loss", str)
        ax.set_xlabel("flip rate")
        ax.set_ylabel("test preference accuracy")
        ax.legend()
        fig.tight_layout()
        path = out_dir / "accuracy_vs_flip_rate.png"
        fig.savefig(path, dpi=120)
        plt.close(fig)
        written.append(path)

    drdpo = [r for r in rows if r["loss"] == "drdpo"]
    table = group_mean(drdpo, ("beta_prime", "flip_rate"), "preference_accuracy")
    if table:
        fig, ax = plt.subplots(figsize=(5, 3.5))
        _plot_lines(ax, table, "beta_prime", "flip_rate", lambda f: f"flip {f:g}")
        ax.set_xscale("log")
        ax.set_xlabel("beta'")
        ax.set_ylabel("test preference accuracy")
        ax.legend()
        fig.tight_layout()
        path = out_dir / "accuracy_vs_beta_prime.png"
        fig.savefig(path, dpi=120)
        plt.close(fig)
        written.append(path)
    return written


def write_report(rows: list[dict], out_dir, figures: bool = True) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for name, text in summaries(rows).items():
        path = out_dir / name
        path.write_text(text, encoding="utf-8")
        written.append(path)
    if figures:
        written += render_figures(rows, out_dir)
    return written
