"""Deterministic rng streams.

Every source of randomness in the package is a numpy Generator derived
here, so a run is a pure function of its config seeds.
"""

from __future__ import annotations

import hashlib

import numpy as np

# Stream tags keep unrelated consumers (episode sampling, PPO shuffling,
# world-model cycles, ...) on independent substreams of one run seed.
STREAM_EPISODE = 1
STREAM_PPO = 2
STREAM_WM_CYCLE = 3
STREAM_SCORE = 4
STREAM_INIT = 5
STREAM_EVAL = 6
STREAM_BC = 7


def stable_hash(text: str) -> int:
    """64-bit hash of a string, stable across processes and platforms."""
    digest = hashlib.blake2b(text.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def substream(*keys: int | str) -> np.random.Generator:
    """Generator for the substream addressed by the given key tuple."""
    ints = [stable_hash(k) if isinstance(k, str) else int(k) for k in keys]
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(ints)))


def scoring_rng(traj_id: str) -> np.random.Generator:
    """Fixed per-trajectory stream used for scoring rollouts.

    Keyed by trajectory id only: rescoring a buffered trajectory under an
    unchanged world model must reproduce the insert-time measurement
    bitwise, which is what makes a zero regret delta mean "nothing
    changed" rather than "the noise moved".
    """
    return substream(STREAM_SCORE, stable_hash(traj_id))
