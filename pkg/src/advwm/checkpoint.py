"""Binary checkpoint container shared by world-model and policy files.

Layout: 4 magic bytes, u32 format version, u64 header length, a JSON
header, then raw little-endian float64 parameter payload. The header
records per-section (offset, nbytes) pairs so a subset checksum can be
computed from the byte ranges without parsing the payload.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path
from typing import Sequence

import numpy as np

FORMAT_VERSION = 1


def params_checksum(arrays: Sequence[np.ndarray]) -> str:
    h = hashlib.sha256()
    for a in arrays:
        h.update(np.ascontiguousarray(a, dtype=np.float64).tobytes())
    return h.hexdigest()


def write_container(
    path: str | Path,
    magic: bytes,
    meta: dict,
    sections: dict[str, list[np.ndarray]],
) -> None:
    if len(magic) != 4:
        raise ValueError("magic must be 4 bytes")
    payload = bytearray()
    section_index = {}
    for name, arrays in sections.items():
        start = len(payload)
        for a in arrays:
            payload += np.ascontiguousarray(a, dtype="<f8").tobytes()
        section_index[name] = [start, len(payload) - start]
    header = dict(meta)
    header["sections"] = section_index
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(magic)
        f.write(struct.pack("<IQ", FORMAT_VERSION, len(hbytes)))
        f.write(hbytes)
        f.write(bytes(payload))


def read_container(path: str | Path, magic: bytes) -> tuple[dict, bytes]:
    """Returns (header, payload bytes); raises on magic/version mismatch."""
    data = Path(path).read_bytes()
    if data[:4] != magic:
        raise ValueError(f"bad magic in {path}: {data[:4]!r}, expected {magic!r}")
    version, hlen = struct.unpack("<IQ", data[4:16])
    if version != FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    header = json.loads(data[16 : 16 + hlen])
    return header, data[16 + hlen :]


def section_checksum(path: str | Path, magic: bytes, section: str) -> str:
    """Checksum one section straight from its recorded byte range."""
    header, payload = read_container(path, magic)
    start, nbytes = header["sections"][section]
    return hashlib.sha256(payload[start : start + nbytes]).hexdigest()


def unpack_arrays(payload: bytes, start: int, shapes: Sequence[tuple[int, ...]]) -> list[np.ndarray]:
    out = []
    offset = start
    for shape in shapes:
        n = int(np.prod(shape)) if shape else 1
        a = np.frombuffer(payload, dtype="<f8", count=n, offset=offset).reshape(shape)
        out.append(a.astype(np.float64))
        offset += n * 8
    return out
