"""Panels and tables from the documented advwm CSV schemas.

Strictly a downstream consumer: reads the per-iteration metrics CSVs, the
mode report, and per-arm evaluation CSVs; writes PNG panels and a markdown
comparison table. Never writes into run directories; file names are fixed
functions of the output directory.
"""

from __future__ import annotations

import logging
import math
from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

log = logging.getLogger(__name__)

METRICS_COLUMNS = (
    "iteration", "episode_return", "k3_kl", "camera_velocity",
    "buffer_mean_regret", "buffer_size", "wm_cycle",
)
EVAL_COLUMNS = ("traj_id", "l_regret", "l_afs", "pixel_mse")
MODE_COLUMNS = ("label", "source", "count")
REPORT_METRICS = ("l_regret", "l_afs", "pixel_mse")


class SchemaError(ValueError):
    """A CSV is missing required columns."""


def read_csv(path: str | Path, required: Sequence[str]) -> dict[str, list[str]]:
    text = Path(path).read_text().strip()
    if not text:
        return {}
    lines = text.split("\n")
    header = lines[0].split(",")
    missing = [c for c in required if c not in header]
    if missing:
        raise SchemaError(f"{path}: missing column {missing[0]!r}")
    cols: dict[str, list[str]] = {h: [] for h in header}
    for line in lines[1:]:
        for h, v in zip(header, line.split(",")):
            cols[h].append(v)
    return cols


def _floats(cols: Mapping[str, list[str]], name: str) -> np.ndarray:
    return np.array([float(v) for v in cols[name]])


def _empty_placeholder(path: Path, title: str) -> None:
    fig, ax = plt.subplots(figsize=(6, 3))
    ax.text(0.5, 0.5, "no data", ha="center", va="center", color="gray")
    ax.set_title(title)
    ax.set_axis_off()
    fig.savefig(path)
    plt.close(fig)
    log.warning("%s: empty input, wrote placeholder", path)


def render_dynamics(metrics_by_arm: Mapping[str, str | Path], out_path: str | Path) -> Path:
    """Three panels per run set: return, KL to the reference, camera velocity."""
    out_path = Path(out_path)
    loaded = {arm: read_csv(p, METRICS_COLUMNS) for arm, p in metrics_by_arm.items()}
    if all(not cols for cols in loaded.values()):
        _empty_placeholder(out_path, "policy dynamics")
        return out_path
    panels = (
        ("episode_return", "episodic return"),
        ("k3_kl", "k3 KL to reference"),
        ("camera_velocity", "camera velocity (bins/step)"),
    )
    fig, axes = plt.subplots(1, 3, figsize=(13, 3.4), constrained_layout=True)
    for ax, (colname, title) in zip(axes, panels):
        for arm, cols in sorted(loaded.items()):
            if not cols:
                continue
            ax.plot(_floats(cols, "iteration"), _floats(cols, colname), label=arm, lw=1.0)
        ax.set_title(title)
        ax.set_xlabel("iteration")
        ax.grid(alpha=0.3)
    axes[0].legend(fontsize=8)
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return out_path


def render_buffer_regret(metrics_by_arm: Mapping[str, str | Path], out_path: str | Path) -> Path:
    """Mean buffer regret over iterations, one labeled curve per arm."""
    out_path = Path(out_path)
    loaded = {arm: read_csv(p, METRICS_COLUMNS) for arm, p in metrics_by_arm.items()}
    if all(not cols for cols in loaded.values()):
        _empty_placeholder(out_path, "buffer mean regret")
        return out_path
    fig, ax = plt.subplots(figsize=(6.5, 3.6), constrained_layout=True)
    for arm, cols in sorted(loaded.items()):
        if not cols:
            continue
        ax.plot(_floats(cols, "iteration"), _floats(cols, "buffer_mean_regret"),
                label=arm, lw=1.2)
    ax.set_title("buffer mean latent regret")
    ax.set_xlabel("iteration")
    ax.grid(alpha=0.3)
    ax.legend(fontsize=8)
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return out_path


def render_novel_modes(mode_report: str | Path, out_path: str | Path, top_n: int = 8) -> Path:
    """Bar counts of strictly novel composite modes, grouped per source."""
    out_path = Path(out_path)
    cols = read_csv(mode_report, MODE_COLUMNS)
    if not cols or not cols["label"]:
        _empty_placeholder(out_path, "novel composite modes")
        return out_path
    totals: dict[str, int] = {}
    per_source: dict[str, dict[str, int]] = {}
    for label, source, count in zip(cols["label"], cols["source"], cols["count"]):
        n = int(count)
        totals[label] = totals.get(label, 0) + n
        per_source.setdefault(source, {})[label] = n
    labels = sorted(totals, key=lambda l: (-totals[l], l))[:top_n]
    sources = sorted(per_source)
    x = np.arange(len(labels))
    width = 0.8 / max(len(sources), 1)
    fig, ax = plt.subplots(figsize=(7.5, 3.8), constrained_layout=True)
    for i, src in enumerate(sources):
        ax.bar(x + i * width, [per_source[src].get(l, 0) for l in labels],
               width=width, label=src)
    ax.set_xticks(x + width * (len(sources) - 1) / 2)
    ax.set_xticklabels(labels, rotation=30, ha="right", fontsize=8)
    ax.set_ylabel("trajectories")
    ax.set_title("strictly novel composite modes")
    ax.legend(fontsize=8)
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return out_path


def comparison_table(
    eval_by_arm: Sequence[tuple[str, str | Path]],
    fractions: Sequence[float] = (0.25, 0.10),
) -> list[dict]:
    """Per-arm metric means and delta-percent rows, 100 * (b - a) / a.

    Mirrors the trainer's report aggregation exactly: the first arm is the
    baseline, hardest subsets are selected by its regret column with
    ceil(fraction * n) ids (ties by id).
    """
    if len(eval_by_arm) < 2:
        raise ValueError("comparison needs at least two arms")
    arms = []
    for label, path in eval_by_arm:
        cols = read_csv(path, EVAL_COLUMNS)
        if not cols:
            raise ValueError(f"{path}: empty evaluation CSV")
        rows = {
            tid: {m: float(cols[m][i]) for m in REPORT_METRICS}
            for i, tid in enumerate(cols["traj_id"])
        }
        arms.append((label, rows))
    base_label, base_rows = arms[0]
    ids = sorted(base_rows)
    for label, rows in arms[1:]:
        if sorted(rows) != ids:
            raise ValueError(f"arm {label} covers different trajectories than {base_label}")

    subsets = {"mean": list(ids)}
    ranked = sorted(ids, key=lambda i: (-base_rows[i]["l_regret"], i))
    for frac in fractions:
        subsets[f"top{int(round(frac * 100))}"] = ranked[: math.ceil(frac * len(ids))]

    out = []
    means: dict[tuple[str, str], dict[str, float]] = {}
    for subset_name, subset_ids in subsets.items():
        for label, rows in arms:
            m = {
                k: float(np.mean([rows[i][k] for i in subset_ids]))
                for k in REPORT_METRICS
            }
            means[(subset_name, label)] = m
            out.append({"subset": subset_name, "row": label, **m})
        for j in range(1, len(arms)):
            for i in range(j):
                a, b = arms[i][0], arms[j][0]
                ma, mb = means[(subset_name, a)], means[(subset_name, b)]
                delta = {k: 100.0 * (mb[k] - ma[k]) / ma[k] for k in REPORT_METRICS}
                out.append({"subset": subset_name, "row": f"delta_pct {b} vs {a}", **delta})
    return out


def write_markdown_table(rows: Sequence[dict], out_path: str | Path) -> Path:
    out_path = Path(out_path)
    lines = [
        "| subset | row | l_regret | l_afs | pixel_mse |",
        "| --- | --- | --- | --- | --- |",
    ]
    for r in rows:
        lines.append(
            f"| {r['subset']} | {r['row']} | {r['l_regret']!r} | {r['l_afs']!r} "
            f"| {r['pixel_mse']!r} |"
        )
    out_path.write_text("\n".join(lines) + "\n")
    return out_path


def render_all(
    metrics_by_arm: Mapping[str, str | Path],
    out_dir: str | Path,
    mode_report: str | Path | None = None,
    eval_by_arm: Sequence[tuple[str, str | Path]] = (),
) -> list[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    if metrics_by_arm:
        written.append(render_dynamics(metrics_by_arm, out_dir / "dynamics.png"))
        written.append(render_buffer_regret(metrics_by_arm, out_dir / "buffer_regret.png"))
    if mode_report is not None:
        written.append(render_novel_modes(mode_report, out_dir / "novel_modes.png"))
    if len(eval_by_arm) >= 2:
        rows = comparison_table(eval_by_arm)
        written.append(write_markdown_table(rows, out_dir / "comparison.md"))
    return written
