"""Frozen linear codec between 64-ray frames and an 8-d latent space.

The encoder rows are orthonormal, so the decoder is just the transpose and
encode(decode(z)) round-trips exactly (before the [0, 1] frame clamp). The
codec is fixed for an entire experiment; training code checksums it to
prove nothing ever touches it.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .env import N_RAYS
from .seeding import substream

D_LAT = 8


@dataclass(frozen=True)
class LatentCodec:
    seed: int
    encode_matrix: np.ndarray  # (D_LAT, N_RAYS), orthonormal rows

    @property
    def decode_matrix(self) -> np.ndarray:
        return self.encode_matrix.T


def build_codec(seed: int) -> LatentCodec:
    """Gram-Schmidt orthonormalization of a seeded Gaussian draw.

    A rank-deficient draw (vanishing residual) redraws with an incremented
    sub-seed; with 8 rows in 64 dimensions this is a formality.
    """
    sub = 0
    while True:
        m = substream("codec", seed, sub).standard_normal((D_LAT, N_RAYS))
        rows = []
        ok = True
        for r in m:
            v = r - sum(np.dot(r, q) * q for q in rows)
            n = np.linalg.norm(v)
            if n < 1e-8:
                ok = False
                break
            rows.append(v / n)
        if ok:
            return LatentCodec(seed, np.array(rows))
        sub += 1


def encode(codec: LatentCodec, frame: np.ndarray) -> np.ndarray:
    """Linear projection; accepts (..., N_RAYS)."""
    frame = np.asarray(frame, dtype=np.float64)
    if frame.shape[-1] != N_RAYS:
        raise ValueError(f"frame length {frame.shape[-1]}, expected {N_RAYS}")
    return frame @ codec.encode_matrix.T


def decode(codec: LatentCodec, latent: np.ndarray, clamp: bool = True) -> np.ndarray:
    """Linear reconstruction, clamped into the frame range by default."""
    latent = np.asarray(latent, dtype=np.float64)
    if latent.shape[-1] != D_LAT:
        raise ValueError(f"latent length {latent.shape[-1]}, expected {D_LAT}")
    frame = latent @ codec.encode_matrix
    return np.clip(frame, 0.0, 1.0) if clamp else frame


def codec_checksum(codec: LatentCodec) -> str:
    return hashlib.sha256(np.ascontiguousarray(codec.encode_matrix).tobytes()).hexdigest()


def save_codec(codec: LatentCodec, path: str | Path) -> None:
    payload = {"seed": codec.seed, "encode_matrix": codec.encode_matrix.ravel().tolist()}
    Path(path).write_text(json.dumps(payload, sort_keys=True))


def load_codec(path: str | Path) -> LatentCodec:
    payload = json.loads(Path(path).read_text())
    m = np.array(payload["encode_matrix"]).reshape(D_LAT, N_RAYS)
    return LatentCodec(payload["seed"], m)
