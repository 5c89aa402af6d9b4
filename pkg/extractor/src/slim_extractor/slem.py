"""SLEM embedding files and dataset manifests.

This is the file contract consumed by the detection engine:

    magic "SLEM" | u32 version=1 | u8 subspace (0=style, 1=linguistics)
    | u32 K | u32 F | u32 T | K*F*T float32 little-endian in (layer,
    feature, time) order | u32 CRC32 of the payload bytes

Manifests are line-delimited JSON with fields id / label / split /
style_path / linguistics_path / dataset / attack_id, paths relative to
the manifest file.
"""

from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path

import numpy as np

MAGIC = b"SLEM"
VERSION = 1
SUBSPACE_CODES = {"style": 0, "linguistics": 1}
_HEADER = struct.Struct("<4sIBIII")


class SlemError(Exception):
    pass


def write_slem(data: np.ndarray, subspace: str, path) -> None:
    """Write a (K, F, T) float32 stack as a SLEM file."""
    if subspace not in SUBSPACE_CODES:
        raise SlemError(f"unknown subspace {subspace!r}")
    arr = np.ascontiguousarray(data, dtype="<f4")
    if arr.ndim != 3 or min(arr.shape) < 1:
        raise SlemError(f"embedding must be (K, F, T) with all dims >= 1, got {arr.shape}")
    payload = arr.tobytes()
    k, f, t = arr.shape
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, SUBSPACE_CODES[subspace], k, f, t))
        fh.write(payload)
        fh.write(struct.pack("<I", zlib.crc32(payload) & 0xFFFFFFFF))


def write_manifest(rows: list[dict], path) -> None:
    """rows carry id/label/split/style_path/linguistics_path(/dataset/attack_id)."""
    path = Path(path)
    lines = []
    for row in rows:
        obj = {
            "id": row["id"],
            "label": row["label"],
            "split": row.get("split", "train"),
            "style_path": row["style_path"],
            "linguistics_path": row["linguistics_path"],
            "dataset": row.get("dataset", ""),
        }
        if row.get("attack_id"):
            obj["attack_id"] = row["attack_id"]
        lines.append(json.dumps(obj))
    path.write_text("\n".join(lines) + "\n")
