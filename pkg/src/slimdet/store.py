"""Binary embedding format, dataset manifests, and batching.

The SLEM file is the bit-exact contract between this engine and any
external embedding extractor:

    magic "SLEM" | u32 version=1 | u8 subspace (0=style, 1=linguistics)
    | u32 K | u32 F | u32 T | K*F*T float32 little-endian, (layer,
    feature, time) order | u32 CRC32 of the payload bytes

Manifests are line-delimited JSON objects with fields id / label / split
/ style_path / linguistics_path / dataset / attack_id. Paths are stored
relative to the manifest file and resolved on load.
"""

from __future__ import annotations

import json
import zlib
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

from .errors import ConfigError, CorruptionError, DataError, FormatError, ManifestError

MAGIC = b"SLEM"
VERSION = 1
SUBSPACE_CODES = {"style": 0, "linguistics": 1}
_CODE_TO_SUBSPACE = {v: k for k, v in SUBSPACE_CODES.items()}
_HEADER = struct.Struct("<4sIBIII")

LABELS = ("real", "fake")
SPLITS = ("train", "valid", "test")


@dataclass
class EmbeddingTensor:
    """A K x F x T subspace representation (layers x features x time)."""

    subspace: str
    data: np.ndarray  # float32, shape (K, F, T)

    def __post_init__(self):
        if self.subspace not in SUBSPACE_CODES:
            raise ConfigError(f"unknown subspace {self.subspace!r}")
        self.data = np.ascontiguousarray(self.data, dtype=np.float32)
        if self.data.ndim != 3 or min(self.data.shape) < 1:
            raise ConfigError(f"embedding must be (K, F, T) with K,F,T >= 1, got {self.data.shape}")

    @property
    def layers(self) -> int:
        return self.data.shape[0]

    @property
    def features(self) -> int:
        return self.data.shape[1]

    @property
    def frames(self) -> int:
        return self.data.shape[2]


def write_embedding(tensor: EmbeddingTensor, path) -> None:
    path = Path(path)
    payload = tensor.data.astype("<f4", copy=False).tobytes()
    header = _HEADER.pack(
        MAGIC,
        VERSION,
        SUBSPACE_CODES[tensor.subspace],
        tensor.layers,
        tensor.features,
        tensor.frames,
    )
    crc = zlib.crc32(payload) & 0xFFFFFFFF
    try:
        with open(path, "wb") as fh:
            fh.write(header)
            fh.write(payload)
            fh.write(struct.pack("<I", crc))
    except OSError as exc:
        raise DataError(f"cannot write embedding {path}: {exc}") from exc


def read_embedding(path) -> EmbeddingTensor:
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read embedding {path}: {exc}") from exc
    if len(blob) < _HEADER.size + 4:
        raise FormatError(f"{path}: truncated file ({len(blob)} bytes)")
    magic, version, code, k, f, t = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    if code not in _CODE_TO_SUBSPACE:
        raise FormatError(f"{path}: unknown subspace code {code}")
    if min(k, f, t) < 1:
        raise FormatError(f"{path}: invalid dims K={k} F={f} T={t}")
    expected = _HEADER.size + 4 * k * f * t + 4
    if len(blob) != expected:
        raise FormatError(
            f"{path}: length mismatch, expected {expected} bytes got {len(blob)}"
        )
    payload = blob[_HEADER.size:-4]
    (stored_crc,) = struct.unpack_from("<I", blob, len(blob) - 4)
    if zlib.crc32(payload) & 0xFFFFFFFF != stored_crc:
        raise CorruptionError(f"{path}: payload CRC mismatch")
    data = np.frombuffer(payload, dtype="<f4").reshape(k, f, t)
    return EmbeddingTensor(_CODE_TO_SUBSPACE[code], data)


# ---------------------------------------------------------------------------
# manifests


@dataclass
class ManifestRecord:
    id: str
    label: str
    split: str
    style_path: Path
    linguistics_path: Path
    dataset: str = ""
    attack_id: str | None = None


_MANIFEST_FIELDS = ("id", "label", "split", "style_path", "linguistics_path")


def load_manifest(path, check_paths=True) -> list[ManifestRecord]:
    path = Path(path)
    base = path.parent
    records = []
    seen = set()
    try:
        lines = path.read_text().splitlines()
    except OSError as exc:
        raise DataError(f"cannot read manifest {path}: {exc}") from exc
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ManifestError(f"{path}:{lineno}: malformed record: {exc}") from exc
        for key in _MANIFEST_FIELDS:
            if key not in obj:
                raise ManifestError(f"{path}:{lineno}: missing field {key!r}")
        if obj["label"] not in LABELS:
            raise ManifestError(f"{path}:{lineno}: unknown label {obj['label']!r}")
        if obj["split"] not in SPLITS:
            raise ManifestError(f"{path}:{lineno}: unknown split {obj['split']!r}")
        if obj["id"] in seen:
            raise ManifestError(f"{path}:{lineno}: duplicate id {obj['id']!r}")
        seen.add(obj["id"])
        rec = ManifestRecord(
            id=obj["id"],
            label=obj["label"],
            split=obj["split"],
            style_path=(base / obj["style_path"]).resolve(),
            linguistics_path=(base / obj["linguistics_path"]).resolve(),
            dataset=obj.get("dataset", ""),
            attack_id=obj.get("attack_id"),
        )
        if check_paths:
            for p in (rec.style_path, rec.linguistics_path):
                if not p.is_file():
                    raise ManifestError(f"{path}:{lineno}: missing embedding file {p}")
        records.append(rec)
    return records


def write_manifest(records, path) -> None:
    path = Path(path)
    base = path.parent.resolve()
    lines = []
    for rec in records:
        obj = {
            "id": rec.id,
            "label": rec.label,
            "split": rec.split,
            "style_path": _relativize(rec.style_path, base),
            "linguistics_path": _relativize(rec.linguistics_path, base),
            "dataset": rec.dataset,
        }
        if rec.attack_id is not None:
            obj["attack_id"] = rec.attack_id
        lines.append(json.dumps(obj, sort_keys=False))
    path.write_text("\n".join(lines) + "\n")


def _relativize(p, base):
    p = Path(p).resolve()
    try:
        return p.relative_to(base).as_posix()
    except ValueError:
        return str(p)


# ---------------------------------------------------------------------------
# batching


@dataclass
class Batch:
    """Layer-pooled embeddings for a group of samples, one common T."""

    style: np.ndarray  # float64 (B, F, T)
    linguistics: np.ndarray  # float64 (B, F, T)
    labels: np.ndarray  # uint8, fake=1
    ids: list[str] = field(default_factory=list)


class EmbeddingCache:
    """Memoizes layer-pooled (F, T) float32 views of each sample."""

    def __init__(self):
        self._pooled = {}

    def pooled(self, record: ManifestRecord):
        hit = self._pooled.get(record.id)
        if hit is None:
            style = read_embedding(record.style_path)
            ling = read_embedding(record.linguistics_path)
            hit = (
                style.data.astype(np.float64).mean(axis=0).astype(np.float32),
                ling.data.astype(np.float64).mean(axis=0).astype(np.float32),
            )
            self._pooled[record.id] = hit
        return hit


def _fit_frames(pooled: np.ndarray, crop_t: int, target_t: int) -> np.ndarray:
    """Center-crop to crop_t, then right-pad with zeros to target_t."""
    t = pooled.shape[1]
    if t > crop_t:
        start = (t - crop_t) // 2
        pooled = pooled[:, start:start + crop_t]
    out = np.zeros((pooled.shape[0], target_t), dtype=np.float64)
    out[:, : pooled.shape[1]] = pooled
    return out


def make_batches(
    records,
    batch_size: int,
    target_t: int,
    shuffle_seed: int | None = None,
    cache: EmbeddingCache | None = None,
) -> Iterator[Batch]:
    """Deterministic batch stream over manifest records.

    Within a sample the two subspaces are aligned to min(T_style, T_ling,
    target_t) by center-cropping, then right-padded with zeros so every
    batch carries exactly target_t frames. The final partial batch is
    emitted. shuffle_seed=None keeps manifest order.
    """
    records = list(records)
    if not records:
        raise ConfigError("make_batches called with an empty record list")
    if batch_size < 1 or target_t < 1:
        raise ConfigError(
            f"batch_size and target_t must be >= 1, got {batch_size}, {target_t}"
        )
    cache = cache or EmbeddingCache()
    if shuffle_seed is None:
        order = np.arange(len(records))
    else:
        order = np.random.Generator(np.random.PCG64(shuffle_seed)).permutation(len(records))
    for lo in range(0, len(records), batch_size):
        chunk = [records[i] for i in order[lo:lo + batch_size]]
        style_rows, ling_rows, labels, ids = [], [], [], []
        for rec in chunk:
            style, ling = cache.pooled(rec)
            crop_t = min(style.shape[1], ling.shape[1], target_t)
            style_rows.append(_fit_frames(style, crop_t, target_t))
            ling_rows.append(_fit_frames(ling, crop_t, target_t))
            labels.append(1 if rec.label == "fake" else 0)
            ids.append(rec.id)
        yield Batch(
            style=np.stack(style_rows),
            linguistics=np.stack(ling_rows),
            labels=np.array(labels, dtype=np.uint8),
            ids=ids,
        )
