"""Synthetic style/linguistics embedding pairs with a planted dependency.

Real samples draw one latent vector and render it into both subspaces, so
the two embeddings share their generative cause. Fake samples break that
link by mixing an independent latent into the style branch (the
``mismatch`` knob interpolates from fully shared at 0 to fully
independent at 1) and additionally receive a constant bump on the
highest-index features, standing in for synthesis artifacts so that the
subspace embeddings alone carry some class signal.

Rendering per subspace: a fixed seeded projection (one per subspace per
config) maps the latent through tanh, a small deterministic sinusoid
modulates frames over time, i.i.d. Gaussian noise is added per frame,
and the frame is replicated over K layers with half-strength per-layer
perturbation.

Everything is reproducible: projections derive from the config seed, and
each sample's rng stream derives from (config seed, hash of sample id),
so datasets with different tags never share samples.
"""

from __future__ import annotations

import functools
import hashlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .store import EmbeddingTensor, ManifestRecord, write_embedding, write_manifest

_PROJECTION_STREAM = 0x50524F4A  # reserved spawn key for the projection rng


@dataclass(frozen=True)
class SynthConfig:
    latent_dim: int = 16
    feat_dim: int = 1024
    time_steps: int = 50
    k_style: int = 11
    k_ling: int = 8
    noise_std: float = 0.1
    mismatch: float = 1.0
    artifact_strength: float = 0.3
    seed: int = 0

    def __post_init__(self):
        if self.latent_dim < 1:
            raise ConfigError(f"latent_dim must be >= 1, got {self.latent_dim}")
        if not 0.0 <= self.mismatch <= 1.0:
            raise ConfigError(f"mismatch must be in [0, 1], got {self.mismatch}")
        if self.noise_std < 0.0:
            raise ConfigError(f"noise_std must be >= 0, got {self.noise_std}")
        if self.artifact_strength < 0.0:
            raise ConfigError(f"artifact_strength must be >= 0, got {self.artifact_strength}")
        if min(self.feat_dim, self.time_steps, self.k_style, self.k_ling) < 1:
            raise ConfigError("feat_dim, time_steps and layer counts must be >= 1")


@functools.lru_cache(maxsize=8)
def _projections(cfg: SynthConfig):
    """Fixed per-config rendering parameters: (W, b) per subspace + sinusoid.

    The two subspace projections share half their energy (a common matrix
    blended with per-subspace ones). Without that overlap a shared latent
    would be invisible to feature-space similarity: independent random
    projections of the same vector are uncorrelated coordinate-wise. Real
    encoder pairs show exactly this kind of partial representational
    overlap across models.
    """
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([cfg.seed, _PROJECTION_STREAM])))
    d, f = cfg.latent_dim, cfg.feat_dim
    scale = 1.0 / np.sqrt(d)
    w_common = rng.normal(0.0, scale, size=(f, d))
    share = np.sqrt(0.5)
    w_style = share * w_common + np.sqrt(1.0 - share**2) * rng.normal(0.0, scale, size=(f, d))
    b_style = rng.normal(0.0, 0.1, size=f)
    w_ling = share * w_common + np.sqrt(1.0 - share**2) * rng.normal(0.0, scale, size=(f, d))
    b_ling = rng.normal(0.0, 0.1, size=f)
    t = np.arange(cfg.time_steps)
    phase = 2.0 * np.pi * np.arange(f) / f
    modulation = 0.1 * np.sin(2.0 * np.pi * t[None, :] / 16.0 + phase[:, None])  # (F, T)
    return (w_style, b_style), (w_ling, b_ling), modulation


def _artifact_indices(feat_dim: int) -> np.ndarray:
    n = max(1, round(feat_dim * 0.01))
    return np.arange(feat_dim - n, feat_dim)


def _render(cfg, latent, proj, modulation, layers, rng, add_artifact):
    w, b = proj
    base = w @ latent + b  # (F,)
    frames = np.tanh(base[:, None] + modulation)  # (F, T)
    if cfg.noise_std > 0.0:
        frames = frames + rng.normal(0.0, cfg.noise_std, size=frames.shape)
    stack = np.repeat(frames[None, :, :], layers, axis=0)
    if cfg.noise_std > 0.0:
        stack = stack + rng.normal(0.0, cfg.noise_std / 2.0, size=stack.shape)
    if add_artifact and cfg.artifact_strength > 0.0:
        stack[:, _artifact_indices(cfg.feat_dim), :] += cfg.artifact_strength
    return stack.astype(np.float32)


def generate_sample(cfg: SynthConfig, label: str, rng) -> tuple[EmbeddingTensor, EmbeddingTensor]:
    """One (style, linguistics) pair under the planted-dependency law."""
    if label not in ("real", "fake"):
        raise ConfigError(f"label must be 'real' or 'fake', got {label!r}")
    proj_style, proj_ling, modulation = _projections(cfg)
    z = rng.standard_normal(cfg.latent_dim)
    if label == "fake":
        z_extra = rng.standard_normal(cfg.latent_dim)
        m = cfg.mismatch
        z_style = np.sqrt(1.0 - m) * z + np.sqrt(m) * z_extra
    else:
        z_style = z
    z_ling = z
    fake = label == "fake"
    style = _render(cfg, z_style, proj_style, modulation, cfg.k_style, rng, fake)
    ling = _render(cfg, z_ling, proj_ling, modulation, cfg.k_ling, rng, fake)
    return (
        EmbeddingTensor("style", style),
        EmbeddingTensor("linguistics", ling),
    )


def _id_hash(sample_id: str) -> int:
    return int.from_bytes(hashlib.sha256(sample_id.encode()).digest()[:8], "little")


def sample_rng(cfg: SynthConfig, sample_id: str) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([cfg.seed, _id_hash(sample_id)])))


def _split_for(sample_id: str) -> str:
    bucket = _id_hash("split:" + sample_id) % 100
    if bucket < 70:
        return "train"
    if bucket < 85:
        return "valid"
    return "test"


def generate_dataset(cfg: SynthConfig, n_real: int, n_fake: int, out_dir,
                     dataset_tag: str = "synth") -> Path:
    """Write a full dataset (embedding files + manifest); returns manifest path.

    Deterministic: rerunning with the same config produces byte-identical
    files. Splits are assigned 70/15/15 by hashed id.
    """
    if n_real < 0 or n_fake < 0:
        raise ConfigError("sample counts must be >= 0")
    out_dir = Path(out_dir)
    emb_dir = out_dir / "emb"
    emb_dir.mkdir(parents=True, exist_ok=True)
    records = []
    plan = [("real", i) for i in range(n_real)] + [("fake", i) for i in range(n_fake)]
    for label, index in plan:
        sample_id = f"{dataset_tag}_{label}_{index:05d}"
        rng = sample_rng(cfg, sample_id)
        style, ling = generate_sample(cfg, label, rng)
        style_path = emb_dir / f"{sample_id}_style.slem"
        ling_path = emb_dir / f"{sample_id}_ling.slem"
        write_embedding(style, style_path)
        write_embedding(ling, ling_path)
        records.append(ManifestRecord(
            id=sample_id,
            label=label,
            split=_split_for(sample_id),
            style_path=style_path,
            linguistics_path=ling_path,
            dataset=dataset_tag,
        ))
    manifest_path = out_dir / "manifest.jsonl"
    write_manifest(records, manifest_path)
    return manifest_path


def time_averaged_views(cfg: SynthConfig, label: str, rng):
    """Layer- and time-averaged (style, linguistics) vectors for one sample.

    Convenience used by the analysis probes; avoids materializing files.
    """
    style, ling = generate_sample(cfg, label, rng)
    return (
        style.data.astype(np.float64).mean(axis=(0, 2)),
        ling.data.astype(np.float64).mean(axis=(0, 2)),
    )
