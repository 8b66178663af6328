"""Evaluation protocols: held-out metrics, hardest subsets, cross-buffer
transfer, and long-horizon rollout.

Every protocol is a pure function of (checkpoint, dataset, seed); the CSV
writers produce byte-identical files on reruns.
"""

from __future__ import annotations

import logging
import math
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import wm
from .env import Trajectory
from .latent import LatentCodec, decode, encode
from .scoring import latent_regret, measure_trajectory, pixel_mse
from .seeding import STREAM_EVAL, stable_hash, substream

log = logging.getLogger(__name__)

METRICS_COLUMNS = (
    "run_id", "arm", "dataset", "traj_id",
    "l_regret", "l_afs", "pixel_mse", "horizon", "subset_tag",
)


def eval_checkpoint(
    params: wm.WmParams,
    codec: LatentCodec,
    dataset: Sequence[Trajectory],
    rng_seed: int,
    seed_chunks: int = 2,
    horizon_chunks: int = 2,
    rollout_fn=None,
) -> list[dict]:
    """Score every trajectory; too-short trajectories are skipped with a
    warning. Per-trajectory rng is derived from (rng_seed, traj_id)."""
    records = []
    need = (seed_chunks + horizon_chunks) * wm.K
    for traj in dataset:
        if len(traj) < need:
            log.warning("skipping %s: %d steps < %d", traj.traj_id, len(traj), need)
            continue
        rng = substream(STREAM_EVAL, rng_seed, stable_hash(traj.traj_id))
        s = measure_trajectory(
            params, codec, traj, rng, seed_chunks, horizon_chunks, rollout_fn=rollout_fn
        )
        records.append(
            {
                "traj_id": traj.traj_id,
                "l_regret": s.l_regret,
                "l_afs": s.l_afs,
                "pixel_mse": s.pixel_mse,
            }
        )
    return records


def select_hardest(
    metric_ids: Sequence[str], phase1_regrets: Mapping[str, float], fraction: float
) -> list[str]:
    """ceil(fraction * n) ids with the highest reference regret; ties by id."""
    ids = list(metric_ids)
    if set(ids) != set(phase1_regrets):
        raise ValueError("metric ids and reference regrets must cover the same set")
    k = math.ceil(fraction * len(ids))
    ranked = sorted(ids, key=lambda i: (-phase1_regrets[i], i))
    return ranked[:k]


def cross_buffer_eval(
    checkpoints: Mapping[str, wm.WmParams],
    buffers: Mapping[str, Sequence[Trajectory]],
    codec: LatentCodec,
    rng_seed: int,
) -> dict[str, dict[str, float]]:
    """Each checkpoint scored on every other arm's buffer, never its own;
    per-buffer means averaged unweighted."""
    if len(checkpoints) < 2:
        raise ValueError("cross-buffer evaluation needs at least 2 arms")
    if set(checkpoints) != set(buffers):
        raise ValueError("checkpoint and buffer arms must match")
    out = {}
    for arm, params in checkpoints.items():
        per_buffer = []
        for other, trajs in buffers.items():
            if other == arm:
                continue  # structural guarantee: own buffer never read
            recs = eval_checkpoint(params, codec, trajs, rng_seed)
            per_buffer.append(
                {m: float(np.mean([r[m] for r in recs])) for m in ("l_regret", "l_afs", "pixel_mse")}
            )
        out[arm] = {
            m: float(np.mean([pb[m] for pb in per_buffer]))
            for m in ("l_regret", "l_afs", "pixel_mse")
        }
    return out


def long_horizon_eval(
    params: wm.WmParams,
    codec: LatentCodec,
    dataset: Sequence[Trajectory],
    rng_seed: int,
    seed_chunks: int = 2,
    horizon_chunks: int = 18,
) -> list[dict]:
    """Extended autoregressive rollout; metrics reported on the final chunk.

    Also reports first-chunk metrics and a structural proxy (mean absolute
    per-element difference) so error compounding is directly visible.
    """
    records = []
    need = (seed_chunks + horizon_chunks) * wm.K
    for traj in dataset:
        if len(traj) < need:
            log.warning("skipping %s: %d steps < %d", traj.traj_id, len(traj), need)
            continue
        rng = substream(STREAM_EVAL, rng_seed, stable_hash(traj.traj_id))
        real = encode(codec, traj.frames)
        n_seed = seed_chunks * wm.K
        pred = wm.rollout(params, real[:n_seed], traj.actions, horizon_chunks, rng)
        k = wm.K
        first_p, first_r = pred[:k], real[n_seed : n_seed + k]
        last = (horizon_chunks - 1) * k
        final_p, final_r = pred[last : last + k], real[n_seed + last : n_seed + last + k]
        final_pf = decode(codec, final_p)
        final_rf = traj.frames[n_seed + last : n_seed + last + k]
        first_pf = decode(codec, first_p)
        first_rf = traj.frames[n_seed : n_seed + k]
        records.append(
            {
                "traj_id": traj.traj_id,
                "l_regret_final": latent_regret(final_p, final_r),
                "pixel_mse_final": pixel_mse(final_pf, final_rf),
                "mean_abs_diff_final": float(np.mean(np.abs(final_pf - final_rf))),
                "l_regret_first": latent_regret(first_p, first_r),
                "pixel_mse_first": pixel_mse(first_pf, first_rf),
            }
        )
    return records


def write_metrics_csv(
    path: str | Path,
    records: Sequence[dict],
    run_id: str,
    arm: str,
    dataset: str,
    horizon: int,
    subset_tag: str = "all",
) -> None:
    """Documented eval CSV schema; floats via repr for byte stability."""
    lines = [",".join(METRICS_COLUMNS)]
    for r in records:
        lines.append(
            ",".join(
                [
                    run_id, arm, dataset, r["traj_id"],
                    repr(r["l_regret"]), repr(r["l_afs"]), repr(r["pixel_mse"]),
                    str(horizon), subset_tag,
                ]
            )
        )
    Path(path).write_text("\n".join(lines) + "\n")


REPORT_METRICS = ("l_regret", "l_afs", "pixel_mse")


def comparison_report(
    arm_csvs: Sequence[tuple[str, str | Path]],
    fractions: Sequence[float] = (0.25, 0.10),
) -> list[dict]:
    """Aggregate per-arm eval CSVs into a comparison table.

    The first arm is the baseline: hardest subsets are selected by its
    regret column, and delta rows report 100 * (b - a) / a for every later
    arm b against every earlier arm a. All CSVs must cover the same
    trajectory ids.
    """
    if len(arm_csvs) < 2:
        raise ValueError("comparison needs at least two arms")
    arms = [(label, read_metrics_csv(path)) for label, path in arm_csvs]
    base_label, base_records = arms[0]
    ids = sorted(r["traj_id"] for r in base_records)
    for label, records in arms[1:]:
        if sorted(r["traj_id"] for r in records) != ids:
            raise ValueError(f"arm {label} covers different trajectories than {base_label}")
    base_regret = {r["traj_id"]: r["l_regret"] for r in base_records}

    subsets = {"mean": set(ids)}
    for frac in fractions:
        subsets[f"top{int(round(frac * 100))}"] = set(
            select_hardest(ids, base_regret, frac)
        )

    rows = []
    means: dict[tuple[str, str], dict[str, float]] = {}
    for subset_name, subset_ids in subsets.items():
        for label, records in arms:
            picked = [r for r in records if r["traj_id"] in subset_ids]
            m = {k: float(np.mean([r[k] for r in picked])) for k in REPORT_METRICS}
            means[(subset_name, label)] = m
            rows.append({"subset": subset_name, "row": label, **m})
        for j in range(1, len(arms)):
            for i in range(j):
                a, b = arms[i][0], arms[j][0]
                ma, mb = means[(subset_name, a)], means[(subset_name, b)]
                delta = {k: 100.0 * (mb[k] - ma[k]) / ma[k] for k in REPORT_METRICS}
                rows.append({"subset": subset_name, "row": f"delta_pct {b} vs {a}", **delta})
    return rows


def write_report_csv(path: str | Path, rows: Sequence[dict]) -> None:
    lines = ["subset,row," + ",".join(REPORT_METRICS)]
    for r in rows:
        lines.append(
            ",".join([r["subset"], r["row"]] + [repr(r[k]) for k in REPORT_METRICS])
        )
    Path(path).write_text("\n".join(lines) + "\n")


def read_metrics_csv(path: str | Path) -> list[dict]:
    lines = Path(path).read_text().strip().split("\n")
    header = lines[0].split(",")
    missing = set(METRICS_COLUMNS) - set(header)
    if missing:
        raise ValueError(f"metrics CSV {path} missing columns {sorted(missing)}")
    out = []
    for line in lines[1:]:
        row = dict(zip(header, line.split(",")))
        for col in ("l_regret", "l_afs", "pixel_mse"):
            row[col] = float(row[col])
        out.append(row)
    return out
