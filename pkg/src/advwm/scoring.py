"""Trajectory error measurement and the composite buffer priority.

Three error signals per trajectory: latent regret (RMSE between predicted
and ground-truth latents over the rollout horizon), a motion-fidelity
score built on per-element temporal differences of decoded frames, and a
plain pixel MSE kept as a diagnostic. The composite priority z-normalizes
regret and motion error over the current buffer and adds the raw
learning-progress delta.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import wm
from .env import Trajectory
from .latent import LatentCodec, decode, encode

STD_FLOOR = 1e-8


@dataclass
class TrajectoryScore:
    l_regret: float
    l_afs: float
    pixel_mse: float  # diagnostic only; never enters the composite
    delta_regret: float = 0.0


@dataclass
class BufferStats:
    n: int
    regret_mean: float
    regret_std: float  # population std
    afs_mean: float
    afs_std: float


def latent_regret(pred_latents: np.ndarray, real_latents: np.ndarray) -> float:
    """RMSE over every latent element of the prediction horizon."""
    pred = np.asarray(pred_latents, dtype=np.float64)
    real = np.asarray(real_latents, dtype=np.float64)
    if pred.shape != real.shape:
        raise ValueError(f"latent shape mismatch: {pred.shape} vs {real.shape}")
    return float(np.sqrt(np.mean((pred - real) ** 2)))


def motion_field(frames: np.ndarray) -> np.ndarray:
    """Per-step temporal differences; the 1-d stand-in for optical flow."""
    frames = np.asarray(frames, dtype=np.float64)
    if frames.shape[0] < 2:
        raise ValueError("motion field needs at least 2 frames")
    return np.diff(frames, axis=0)


def afs_epe(pred_frames: np.ndarray, real_frames: np.ndarray) -> float:
    """Mean motion-difference norm per frame element.

    Sensitive to wrong motion, blind to static offsets: a constant shift of
    every predicted frame cancels in the differences.
    """
    pred = np.asarray(pred_frames, dtype=np.float64)
    real = np.asarray(real_frames, dtype=np.float64)
    if pred.shape != real.shape:
        raise ValueError(f"frame shape mismatch: {pred.shape} vs {real.shape}")
    dp = motion_field(pred)
    dr = motion_field(real)
    step_norms = np.linalg.norm(dp - dr, axis=1)
    return float(step_norms.mean() / pred.shape[1])


def pixel_mse(pred_frames: np.ndarray, real_frames: np.ndarray) -> float:
    pred = np.asarray(pred_frames, dtype=np.float64)
    real = np.asarray(real_frames, dtype=np.float64)
    if pred.shape != real.shape:
        raise ValueError(f"frame shape mismatch: {pred.shape} vs {real.shape}")
    return float(np.mean((pred - real) ** 2))


def compute_stats(regrets, afss) -> BufferStats:
    regrets = np.asarray(list(regrets), dtype=np.float64)
    afss = np.asarray(list(afss), dtype=np.float64)
    if regrets.size == 0:
        raise ValueError("stats over an empty buffer")
    return BufferStats(
        n=regrets.size,
        regret_mean=float(regrets.mean()),
        regret_std=float(regrets.std()),
        afs_mean=float(afss.mean()),
        afs_std=float(afss.std()),
    )


def znorm(stats: BufferStats, value: float, which: str) -> float:
    """Z-score against buffer statistics; degenerate buffers map to 0."""
    if stats.n < 2:
        return 0.0
    if which == "regret":
        mean, std = stats.regret_mean, stats.regret_std
    elif which == "afs":
        mean, std = stats.afs_mean, stats.afs_std
    else:
        raise ValueError(f"unknown statistic {which!r}")
    return (value - mean) / max(std, STD_FLOOR)


def composite_score(
    score: TrajectoryScore, stats: BufferStats, lambda_afs: float, beta_prog: float = 1.0
) -> float:
    """z(regret) + lambda * z(motion error) + beta * progress delta."""
    return (
        znorm(stats, score.l_regret, "regret")
        + lambda_afs * znorm(stats, score.l_afs, "afs")
        + beta_prog * score.delta_regret
    )


def measure_trajectory(
    params: wm.WmParams,
    codec: LatentCodec,
    traj: Trajectory,
    rng: np.random.Generator,
    seed_chunks: int = 2,
    horizon_chunks: int = 2,
    rollout_fn=None,
) -> TrajectoryScore:
    """Roll the world model over a recorded episode and score the mismatch.

    rollout_fn(seed_latents, actions, horizon, rng) is a diagnostics hook
    replacing the model rollout (e.g. an oracle that returns the ground
    truth).
    """
    n_seed = seed_chunks * wm.K
    n_pred = horizon_chunks * wm.K
    if len(traj) < n_seed + n_pred:
        raise ValueError(
            f"trajectory {traj.traj_id} has {len(traj)} steps; "
            f"needs {n_seed + n_pred} for this protocol"
        )
    real_latents = encode(codec, traj.frames)
    seed_latents = real_latents[:n_seed]
    if rollout_fn is None:
        pred = wm.rollout(params, seed_latents, traj.actions, horizon_chunks, rng)
    else:
        pred = rollout_fn(seed_latents, traj.actions, horizon_chunks, rng)
    real_tail = real_latents[n_seed : n_seed + n_pred]
    pred_frames = decode(codec, pred)
    real_frames = traj.frames[n_seed : n_seed + n_pred]
    return TrajectoryScore(
        l_regret=latent_regret(pred, real_tail),
        l_afs=afs_epe(pred_frames, real_frames),
        pixel_mse=pixel_mse(pred_frames, real_frames),
    )
