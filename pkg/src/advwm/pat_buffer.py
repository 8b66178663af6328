"""Bounded prioritized trajectory buffer with staleness-mixed sampling.

Entries are ranked by the composite score; sampling mixes a rank-based
score distribution with a staleness distribution so stale discoveries
keep getting revisited. After every world-model update the whole buffer
is rescored under the new model, which is what turns "solved" failures
into low-priority entries.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .env import Trajectory, load_trajectory, save_trajectory
from .latent import LatentCodec
from .scoring import BufferStats, TrajectoryScore, composite_score, compute_stats, measure_trajectory
from .seeding import scoring_rng
from .wm import WmParams

log = logging.getLogger(__name__)


@dataclass
class BufferEntry:
    trajectory: Trajectory
    scores: TrajectoryScore
    priority: float
    insert_iter: int
    last_scored_iter: int
    last_rescore_regret: Optional[float] = None  # unset until the first rescore

    @property
    def traj_id(self) -> str:
        return self.trajectory.traj_id


@dataclass
class PatBuffer:
    capacity: int = 64
    rho_stale: float = 0.1
    lambda_afs: float = 0.25
    beta_prog: float = 1.0
    seed_chunks: int = 2
    horizon_chunks: int = 2
    entries: list[BufferEntry] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.entries)

    def ids(self) -> list[str]:
        return [e.traj_id for e in self.entries]

    def stats(self) -> BufferStats:
        if not self.entries:
            raise ValueError("stats over an empty buffer")
        return compute_stats(
            (e.scores.l_regret for e in self.entries),
            (e.scores.l_afs for e in self.entries),
        )

    def mean_regret(self) -> float:
        return float(np.mean([e.scores.l_regret for e in self.entries]))

    def insert(
        self, traj: Trajectory, scores: TrajectoryScore, insert_iter: int
    ) -> Optional[str]:
        """Insert a scored trajectory; returns the evicted id, if any.

        The newcomer's priority is computed against buffer statistics that
        include it. When full, the minimum-priority entry goes (possibly
        the newcomer itself); priority ties evict the older insert first.
        """
        if traj.traj_id in (e.traj_id for e in self.entries):
            raise ValueError(f"duplicate trajectory id {traj.traj_id!r}")
        entry = BufferEntry(traj, scores, 0.0, insert_iter, insert_iter)
        self.entries.append(entry)
        stats = self.stats()
        entry.priority = composite_score(scores, stats, self.lambda_afs, self.beta_prog)
        if len(self.entries) <= self.capacity:
            return None
        victim = min(self.entries, key=lambda e: (e.priority, e.insert_iter))
        self.entries.remove(victim)
        return victim.traj_id

    def sample_probs(self, current_iter: int) -> np.ndarray:
        """(1 - rho) * rank-based score distribution + rho * staleness."""
        n = len(self.entries)
        if n == 0:
            raise ValueError("sampling from an empty buffer")
        order = sorted(
            range(n),
            key=lambda i: (-self.entries[i].priority, self.entries[i].insert_iter,
                           self.entries[i].traj_id),
        )
        ranks = np.empty(n)
        for rank, i in enumerate(order, start=1):
            ranks[i] = rank
        p_score = (1.0 / ranks) / np.sum(1.0 / ranks)
        stale = np.array(
            [current_iter - e.last_scored_iter for e in self.entries], dtype=np.float64
        )
        total = stale.sum()
        p_stale = stale / total if total > 0 else np.full(n, 1.0 / n)
        return (1.0 - self.rho_stale) * p_score + self.rho_stale * p_stale

    def sample(
        self, n: int, current_iter: int, rng: np.random.Generator
    ) -> list[BufferEntry]:
        """Draw n entries with replacement from the mixture distribution."""
        p = self.sample_probs(current_iter)
        idx = rng.choice(len(self.entries), size=n, replace=True, p=p)
        return [self.entries[i] for i in idx]

    def rescore_all(
        self, params: WmParams, codec: LatentCodec, current_iter: int
    ) -> list[str]:
        """Re-measure every entry under the current model, refresh priorities.

        Each entry uses its fixed per-id scoring stream, so an unchanged
        model reproduces the previous measurement and yields a zero delta.
        Entries whose rollout fails are dropped (returned for the caller's
        logs).
        """
        dropped = []
        survivors = []
        for e in self.entries:
            try:
                s = measure_trajectory(
                    params, codec, e.trajectory, scoring_rng(e.traj_id),
                    self.seed_chunks, self.horizon_chunks,
                )
            except Exception:
                log.warning("dropping buffer entry %s: rescore failed", e.traj_id, exc_info=True)
                dropped.append(e.traj_id)
                continue
            if e.last_rescore_regret is None:
                s.delta_regret = 0.0
            else:
                s.delta_regret = s.l_regret - e.last_rescore_regret
            e.scores = s
            e.last_rescore_regret = s.l_regret
            e.last_scored_iter = current_iter
            survivors.append(e)
        self.entries = survivors
        if self.entries:
            stats = self.stats()
            for e in self.entries:
                e.priority = composite_score(e.scores, stats, self.lambda_afs, self.beta_prog)
        return dropped


def save_buffer(buffer: PatBuffer, dirpath: str | Path) -> None:
    """JSON index plus one trajectory file per entry."""
    dirpath = Path(dirpath)
    (dirpath / "trajectories").mkdir(parents=True, exist_ok=True)
    index = {
        "capacity": buffer.capacity,
        "rho_stale": buffer.rho_stale,
        "lambda_afs": buffer.lambda_afs,
        "beta_prog": buffer.beta_prog,
        "seed_chunks": buffer.seed_chunks,
        "horizon_chunks": buffer.horizon_chunks,
        "entries": [
            {
                "id": e.traj_id,
                "l_regret": e.scores.l_regret,
                "l_afs": e.scores.l_afs,
                "pixel_mse": e.scores.pixel_mse,
                "delta": e.scores.delta_regret,
                "priority": e.priority,
                "insert_iter": e.insert_iter,
                "last_scored_iter": e.last_scored_iter,
                "last_rescore_regret": e.last_rescore_regret,
            }
            for e in buffer.entries
        ],
    }
    (dirpath / "index.json").write_text(json.dumps(index, sort_keys=True, indent=1))
    for e in buffer.entries:
        save_trajectory(e.trajectory, dirpath / "trajectories" / f"{e.traj_id}.jsonl")


def load_buffer(dirpath: str | Path) -> PatBuffer:
    dirpath = Path(dirpath)
    index = json.loads((dirpath / "index.json").read_text())
    buffer = PatBuffer(
        capacity=index["capacity"],
        rho_stale=index["rho_stale"],
        lambda_afs=index["lambda_afs"],
        beta_prog=index["beta_prog"],
        seed_chunks=index["seed_chunks"],
        horizon_chunks=index["horizon_chunks"],
    )
    for row in index["entries"]:
        traj = load_trajectory(dirpath / "trajectories" / f"{row['id']}.jsonl")
        scores = TrajectoryScore(row["l_regret"], row["l_afs"], row["pixel_mse"], row["delta"])
        buffer.entries.append(
            BufferEntry(
                traj, scores, row["priority"], row["insert_iter"],
                row["last_scored_iter"], row["last_rescore_regret"],
            )
        )
    return buffer
