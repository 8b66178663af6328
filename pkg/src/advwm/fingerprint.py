"""Deterministic action fingerprints and strict-novelty counting.

A rollout window collapses to a label: one exclusive camera tier (rot or
look, by mean commanded camera magnitude) plus any number of button tags
that fire on mean press rate. Hard thresholds, no clustering; the same
constants apply to every data source so novelty comparisons are fair.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .env import Action

ROT_DEG = 8.0
LOOK_DEG = 3.0
BUTTON_THRESHOLD = 0.3
JUMP_THRESHOLD = 0.2  # jump presses are bursty; lower bar
TAG_ORDER = ("fwd", "back", "strafe", "jump", "sprint", "atk", "use")


@dataclass(frozen=True)
class Fingerprint:
    camera_tier: str | None  # "rot" | "look" | None
    button_tags: tuple[str, ...]

    @property
    def label(self) -> str:
        parts = ([self.camera_tier] if self.camera_tier else []) + list(self.button_tags)
        return "+".join(parts) if parts else "still"


def fingerprint(actions: Sequence[Action]) -> Fingerprint:
    """Label one rollout window of actions.

    Tier thresholds are strict: a mean camera magnitude of exactly 8
    degrees is "look", exactly 3 degrees is no tier.
    """
    if not actions:
        raise ValueError("fingerprint needs a non-empty window")
    cam = np.array([[a.yaw_degrees, a.pitch_degrees] for a in actions])
    theta = float(np.mean(np.linalg.norm(cam, axis=1)))
    tier = "rot" if theta > ROT_DEG else ("look" if theta > LOOK_DEG else None)

    btn = np.array([a.buttons for a in actions], dtype=np.float64)
    means = {
        "fwd": btn[:, 0].mean(),
        "back": btn[:, 1].mean(),
        "strafe": np.maximum(btn[:, 2], btn[:, 3]).mean(),  # either strafe button
        "jump": btn[:, 4].mean(),
        "sprint": btn[:, 5].mean(),
        "atk": btn[:, 6].mean(),
        "use": btn[:, 7].mean(),
    }
    tags = tuple(
        name for name in TAG_ORDER
        if means[name] > (JUMP_THRESHOLD if name == "jump" else BUTTON_THRESHOLD)
    )
    return Fingerprint(tier, tags)


def count_labels(labels: Iterable[str]) -> dict[str, int]:
    out: dict[str, int] = {}
    for lab in labels:
        out[lab] = out.get(lab, 0) + 1
    return out


def novel_modes(
    candidates: Mapping[str, Sequence[str]],
    references: Sequence[Sequence[str]],
) -> dict[str, dict[str, int]]:
    """Labels present in candidate sources and absent from every reference.

    Returns {label: {candidate_source: count}}, labels sorted by total
    count descending then name, for stable reports.
    """
    ref_labels = set()
    for ref in references:
        ref_labels.update(ref)
    per_source = {src: count_labels(labs) for src, labs in candidates.items()}
    all_candidate = set()
    for counts in per_source.values():
        all_candidate.update(counts)
    novel = sorted(
        (lab for lab in all_candidate if lab not in ref_labels),
        key=lambda lab: (-sum(c.get(lab, 0) for c in per_source.values()), lab),
    )
    return {
        lab: {src: per_source[src].get(lab, 0) for src in candidates if per_source[src].get(lab, 0)}
        for lab in novel
    }
