"""Extraction jobs: audio directory + label CSV -> SLEM files + manifest.

The label CSV needs a header with columns id, path, label; optional
columns split and attack_id are carried through to the manifest. Paths
are relative to the audio directory. Clips that fail to decode are
skipped with a logged reason; a job that produces zero clips fails.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .audio import AudioError, condition
from .augment import AugmentParams, augment
from .encoders import make_encoder, parse_layer_range
from .slem import write_manifest, write_slem

logger = logging.getLogger(__name__)

LABELS = ("real", "fake")


class ExtractionError(Exception):
    pass


@dataclass
class ExtractionJob:
    audio_dir: Path
    labels_csv: Path
    out_dir: Path
    style_encoder: str = "builtin-ser"
    ling_encoder: str = "builtin-asr"
    style_layers: str = "0-10"
    ling_layers: str = "14-21"
    sample_rate: int = 16000
    max_duration: float = 5.0
    augment_kinds: tuple[str, ...] = ()
    augment_params: AugmentParams = field(default_factory=AugmentParams)
    seed: int = 0
    dataset_tag: str = "extracted"


def _read_labels(path: Path) -> list[dict]:
    try:
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None or not {"id", "path", "label"} <= set(reader.fieldnames):
                raise ExtractionError(
                    f"{path}: label CSV needs header columns id,path,label"
                )
            rows = list(reader)
    except OSError as exc:
        raise ExtractionError(f"cannot read label CSV {path}: {exc}") from exc
    for row in rows:
        if row["label"] not in LABELS:
            raise ExtractionError(f"{path}: unknown label {row['label']!r} for id {row['id']!r}")
    return rows


def run_extraction(job: ExtractionJob) -> Path:
    """Extract every labeled clip; returns the manifest path."""
    job.augment_params.validate()
    style_enc = make_encoder(job.style_encoder, job.sample_rate)
    ling_enc = make_encoder(job.ling_encoder, job.sample_rate)
    style_layers = parse_layer_range(job.style_layers)
    ling_layers = parse_layer_range(job.ling_layers)
    logger.info("style encoder %s depth=%d, taking layers %s",
                style_enc.encoder_id, style_enc.depth, job.style_layers)
    logger.info("linguistics encoder %s depth=%d, taking layers %s",
                ling_enc.encoder_id, ling_enc.depth, job.ling_layers)

    out_dir = Path(job.out_dir)
    emb_dir = out_dir / "emb"
    emb_dir.mkdir(parents=True, exist_ok=True)
    rows = _read_labels(Path(job.labels_csv))
    manifest_rows = []
    rng = np.random.Generator(np.random.PCG64(job.seed))
    for row in rows:
        clip_id = row["id"]
        clip_path = Path(job.audio_dir) / row["path"]
        try:
            wave = condition(clip_path, job.sample_rate, job.max_duration)
        except AudioError as exc:
            logger.warning("skipping %s: %s", clip_id, exc)
            continue
        if job.augment_kinds:
            wave = augment(wave, job.sample_rate, job.augment_kinds, rng,
                           job.augment_params)
        style = style_enc.encode_layers(wave, style_layers)
        ling = ling_enc.encode_layers(wave, ling_layers)
        style_path = emb_dir / f"{clip_id}_style.slem"
        ling_path = emb_dir / f"{clip_id}_ling.slem"
        write_slem(style, "style", style_path)
        write_slem(ling, "linguistics", ling_path)
        manifest_rows.append({
            "id": clip_id,
            "label": row["label"],
            "split": row.get("split") or "train",
            "style_path": f"emb/{style_path.name}",
            "linguistics_path": f"emb/{ling_path.name}",
            "dataset": job.dataset_tag,
            "attack_id": row.get("attack_id") or None,
        })
    if not manifest_rows:
        raise ExtractionError("no clips could be extracted")
    manifest_path = out_dir / "manifest.jsonl"
    write_manifest(manifest_rows, manifest_path)
    logger.info("extracted %d/%d clips -> %s", len(manifest_rows), len(rows), manifest_path)
    return manifest_path
