"""Forward computations of the detector.

Three trainable blocks per subspace pipeline:

  * CompressionModule - layer-pooled frames through a 1-block bottleneck
    (down, nonlinearity, dropout, up, residual add of the pooled input,
    dropout) and a projection head, producing per-frame dependency
    features plus their temporal average.
  * ASPProjector - attentive statistics pooling (attention-weighted mean
    and std over time) followed by a linear map to the output width.
  * ClassifierHead - two fully-connected layers with dropout in between,
    emitting a single logit (positive = fake).

The fusion vector concatenates, per the chosen variant, the two ASP
projections and/or the two averaged dependency features. Compression
modules always run in eval mode inside the full forward: they belong to
stage 1 and stay frozen afterwards.

Checkpoints use the SLCK container:

    magic "SLCK" | u32 version | u8 stage | u32 entry count
    | entries: u32 name length + UTF-8 name | u32 rank | u32 dims...
      | float64 little-endian payload
    | u32 CRC32 of everything after the magic

Entries are written sorted by name, so load-then-save is byte-identical.
The training config snapshot travels in a JSON sidecar next to the
checkpoint (the container itself holds only tensors).
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, CorruptionError, DataError, DimensionError, FormatError

ACTIVATIONS = {"relu": ad.relu, "tanh": ad.tanh}

VARIANTS = ("full", "dependency", "subspace", "style", "linguistics")

DEFAULT_FEAT_DIM = 1024
DEFAULT_DEP_DIM = 256


@dataclass
class DependencyFeature:
    """Per-frame compressed representation and its temporal average."""

    frames: ad.Tensor  # (B, D, T) or (D, T)
    pooled: ad.Tensor  # (B, D) or (D,)


def _init_weight(rng, fan_in, shape):
    return ad.Tensor(rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=shape), requires_grad=True)


def _init_bias(shape):
    return ad.Tensor(np.zeros(shape), requires_grad=True)


class _Module:
    """Tiny base: ordered named parameters under a prefix."""

    def __init__(self, prefix: str):
        self.prefix = prefix
        self._params: dict[str, ad.Tensor] = {}

    def _register(self, name: str, tensor: ad.Tensor) -> ad.Tensor:
        self._params[f"{self.prefix}.{name}"] = tensor
        return tensor

    def params(self) -> dict[str, ad.Tensor]:
        return dict(self._params)

    def set_trainable(self, trainable: bool) -> None:
        for p in self._params.values():
            p.requires_grad = trainable


class CompressionModule(_Module):
    """Bottleneck + projection over layer-pooled frames (one bottleneck block)."""

    def __init__(self, feat_dim=DEFAULT_FEAT_DIM, hidden_dim=256, out_dim=DEFAULT_DEP_DIM,
                 activation="relu", bottleneck_dropout=0.1, projection_dropout=0.1,
                 rng=None, prefix="compress"):
        super().__init__(prefix)
        if activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {activation!r}")
        rng = rng or np.random.default_rng(0)
        self.feat_dim = feat_dim
        self.out_dim = out_dim
        self.activation = activation
        self.bottleneck_dropout = bottleneck_dropout
        self.projection_dropout = projection_dropout
        self.down_w = self._register("down_w", _init_weight(rng, feat_dim, (feat_dim, hidden_dim)))
        self.down_b = self._register("down_b", _init_bias(hidden_dim))
        self.up_w = self._register("up_w", _init_weight(rng, hidden_dim, (hidden_dim, feat_dim)))
        self.up_b = self._register("up_b", _init_bias(feat_dim))
        self.proj_w = self._register("proj_w", _init_weight(rng, feat_dim, (feat_dim, out_dim)))
        self.proj_b = self._register("proj_b", _init_bias(out_dim))

    def forward_pooled(self, x: ad.Tensor, train=False, rng=None) -> DependencyFeature:
        """x: layer-pooled frames (B, F, T) -> dependency features (B, D, T)."""
        if x.ndim != 3 or x.shape[1] != self.feat_dim:
            raise DimensionError(
                f"compression expects (B, {self.feat_dim}, T), got {x.shape}"
            )
        b, f, t = x.shape
        act = ACTIVATIONS[self.activation]
        flat = ad.reshape(ad.transpose(x, (0, 2, 1)), (b * t, f))
        h = act(ad.linear(flat, self.down_w, self.down_b))
        h = ad.dropout(h, self.bottleneck_dropout, rng, train)
        recovered = ad.add(ad.linear(h, self.up_w, self.up_b), flat)
        recovered = ad.dropout(recovered, self.projection_dropout, rng, train)
        proj = ad.linear(recovered, self.proj_w, self.proj_b)
        frames = ad.transpose(ad.reshape(proj, (b, t, self.out_dim)), (0, 2, 1))
        return DependencyFeature(frames=frames, pooled=ad.reduce_mean(frames, axis=2))


class ASPProjector(_Module):
    """Attentive statistics pooling plus a linear projection to out_dim."""

    def __init__(self, feat_dim=DEFAULT_FEAT_DIM, out_dim=DEFAULT_DEP_DIM,
                 dropout_rate=0.1, rng=None, prefix="asp"):
        super().__init__(prefix)
        rng = rng or np.random.default_rng(0)
        self.feat_dim = feat_dim
        self.out_dim = out_dim
        self.dropout_rate = dropout_rate
        self.score_w = self._register("score_w", _init_weight(rng, feat_dim, (feat_dim,)))
        self.score_b = self._register("score_b", _init_bias(1))
        self.mlp_w = self._register("mlp_w", _init_weight(rng, 2 * feat_dim, (2 * feat_dim, out_dim)))
        self.mlp_b = self._register("mlp_b", _init_bias(out_dim))

    def forward_pooled(self, x: ad.Tensor, train=False, rng=None) -> ad.Tensor:
        """x: layer-pooled frames (B, F, T) -> utterance embedding (B, out_dim)."""
        if x.ndim != 3 or x.shape[1] != self.feat_dim:
            raise DimensionError(f"asp expects (B, {self.feat_dim}, T), got {x.shape}")
        scores = ad.frame_scores(x, self.score_w, self.score_b)
        attn = ad.softmax_over_time(scores)
        mu = ad.weighted_mean(x, attn)
        sg = ad.weighted_std(x, attn)
        stats = ad.concat([mu, sg], axis=1)
        out = ad.linear(stats, self.mlp_w, self.mlp_b)
        return ad.dropout(out, self.dropout_rate, rng, train)


class ClassifierHead(_Module):
    """Two fully-connected layers with dropout, single-logit output."""

    def __init__(self, in_dim, hidden_dim=256, dropout_rate=0.25,
                 activation="relu", rng=None, prefix="head"):
        super().__init__(prefix)
        if activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {activation!r}")
        rng = rng or np.random.default_rng(0)
        self.in_dim = in_dim
        self.dropout_rate = dropout_rate
        self.activation = activation
        self.fc1_w = self._register("fc1_w", _init_weight(rng, in_dim, (in_dim, hidden_dim)))
        self.fc1_b = self._register("fc1_b", _init_bias(hidden_dim))
        self.fc2_w = self._register("fc2_w", _init_weight(rng, hidden_dim, (hidden_dim, 1)))
        self.fc2_b = self._register("fc2_b", _init_bias(1))

    def forward(self, z: ad.Tensor, train=False, rng=None) -> ad.Tensor:
        """z: fusion vectors (B, in_dim) -> logits (B,)."""
        if z.ndim != 2 or z.shape[1] != self.in_dim:
            raise DimensionError(f"head expects (B, {self.in_dim}), got {z.shape}")
        act = ACTIVATIONS[self.activation]
        h = act(ad.linear(z, self.fc1_w, self.fc1_b))
        h = ad.dropout(h, self.dropout_rate, rng, train)
        logits = ad.linear(h, self.fc2_w, self.fc2_b)
        return ad.reshape(logits, (z.shape[0],))


def fusion_width(variant: str, dep_dim: int = DEFAULT_DEP_DIM) -> int:
    if variant not in VARIANTS:
        raise ConfigError(f"unknown variant {variant!r}, expected one of {VARIANTS}")
    return {"full": 4, "dependency": 2, "subspace": 2, "style": 1, "linguistics": 1}[variant] * dep_dim


class SlimModel:
    """Container wiring both subspace pipelines into one classifier."""

    def __init__(self, feat_dim=DEFAULT_FEAT_DIM, dep_dim=DEFAULT_DEP_DIM,
                 hidden_dim=256, variant="full", activation="relu",
                 bottleneck_dropout=0.1, projection_dropout=0.1,
                 asp_dropout=0.1, head_dropout=0.25, seed=0):
        if variant not in VARIANTS:
            raise ConfigError(f"unknown variant {variant!r}, expected one of {VARIANTS}")
        rng = np.random.default_rng(np.random.SeedSequence([seed, 0x51]))
        self.feat_dim = feat_dim
        self.dep_dim = dep_dim
        self.variant = variant
        self.compress_style = CompressionModule(
            feat_dim, hidden_dim, dep_dim, activation,
            bottleneck_dropout, projection_dropout, rng, prefix="style_compress")
        self.compress_ling = CompressionModule(
            feat_dim, hidden_dim, dep_dim, activation,
            bottleneck_dropout, projection_dropout, rng, prefix="ling_compress")
        self.asp_style = None
        self.asp_ling = None
        if variant in ("full", "subspace", "style"):
            self.asp_style = ASPProjector(feat_dim, dep_dim, asp_dropout, rng, prefix="style_asp")
        if variant in ("full", "subspace", "linguistics"):
            self.asp_ling = ASPProjector(feat_dim, dep_dim, asp_dropout, rng, prefix="ling_asp")
        self.head = ClassifierHead(
            fusion_width(variant, dep_dim), hidden_dim=256,
            dropout_rate=head_dropout, activation=activation, rng=rng, prefix="head")

    # -- parameter plumbing ------------------------------------------------

    def _modules(self):
        mods = [self.compress_style, self.compress_ling]
        if self.asp_style is not None:
            mods.append(self.asp_style)
        if self.asp_ling is not None:
            mods.append(self.asp_ling)
        mods.append(self.head)
        return mods

    def params(self) -> dict[str, ad.Tensor]:
        out = {}
        for mod in self._modules():
            out.update(mod.params())
        return out

    def stage1_params(self) -> dict[str, ad.Tensor]:
        out = {}
        out.update(self.compress_style.params())
        out.update(self.compress_ling.params())
        return out

    def stage2_params(self) -> dict[str, ad.Tensor]:
        out = {}
        for mod in (self.asp_style, self.asp_ling):
            if mod is not None:
                out.update(mod.params())
        out.update(self.head.params())
        return out

    def load_params(self, values: dict[str, np.ndarray], subset=None) -> None:
        """Copy arrays into named parameters; missing names are an error."""
        target = subset if subset is not None else self.params()
        for name, tensor in target.items():
            if name not in values:
                raise ConfigError(f"checkpoint is missing parameter {name!r}")
            arr = np.asarray(values[name], dtype=np.float64)
            if arr.shape != tensor.shape:
                raise DimensionError(
                    f"parameter {name!r} shape mismatch: checkpoint {arr.shape}, model {tensor.shape}"
                )
            tensor.data = arr.copy()

    def freeze_stage1(self) -> None:
        self.compress_style.set_trainable(False)
        self.compress_ling.set_trainable(False)

    # -- forward paths -------------------------------------------------------

    def dependency_features(self, style_bft: ad.Tensor, ling_bft: ad.Tensor,
                            train=False, rng=None):
        dep_s = self.compress_style.forward_pooled(style_bft, train, rng)
        dep_l = self.compress_ling.forward_pooled(ling_bft, train, rng)
        return dep_s, dep_l

    def fuse(self, style_bft: ad.Tensor, ling_bft: ad.Tensor, train=False, rng=None,
             dep_pooled: tuple[ad.Tensor, ad.Tensor] | None = None):
        """Batched fusion forward: returns (logits, dep_style, dep_ling).

        Compression always runs in eval mode here (frozen after stage 1);
        dep_pooled short-circuits it with precomputed averaged features.
        The two dependency blocks are length-normalized before
        concatenation: their discriminative content is angular (the
        mismatch metric is a cosine distance) and the stage-1 objective
        leaves their absolute scale unconstrained, so raw magnitudes in
        the hundreds would swamp the classifier head. ASP blocks stay
        raw; they are tanh-bounded and their magnitudes carry signal.
        """
        if dep_pooled is None:
            dep_s, dep_l = self.dependency_features(style_bft, ling_bft, train=False)
            pooled_s, pooled_l = dep_s.pooled, dep_l.pooled
        else:
            dep_s = dep_l = None
            pooled_s, pooled_l = dep_pooled
        parts = []
        if self.asp_style is not None:
            parts.append(self.asp_style.forward_pooled(style_bft, train, rng))
        if self.asp_ling is not None:
            parts.append(self.asp_ling.forward_pooled(ling_bft, train, rng))
        if self.variant in ("full", "dependency"):
            rms = float(np.sqrt(self.dep_dim))  # unit RMS per entry, not unit norm
            parts.append(ad.scale(ad.l2_normalize_rows(pooled_s), rms))
            parts.append(ad.scale(ad.l2_normalize_rows(pooled_l), rms))
        fused = parts[0] if len(parts) == 1 else ad.concat(parts, axis=1)
        logits = self.head.forward(fused, train, rng)
        return logits, dep_s, dep_l


def pool_layers(x: ad.Tensor) -> ad.Tensor:
    """Average a (K, F, T) stack over its layer axis."""
    if x.ndim != 3:
        raise DimensionError(f"pool_layers expects (K, F, T), got {x.shape}")
    return ad.reduce_mean(x, axis=0)


def compress(x: ad.Tensor, module: CompressionModule, train_mode=False, rng=None) -> DependencyFeature:
    """Single-sample compression: x (K, F, T) -> DependencyFeature (D, T)."""
    pooled = ad.reshape(pool_layers(x), (1, x.shape[1], x.shape[2]))
    dep = module.forward_pooled(pooled, train_mode, rng)
    d, t = dep.frames.shape[1], dep.frames.shape[2]
    return DependencyFeature(
        frames=ad.reshape(dep.frames, (d, t)),
        pooled=ad.reshape(dep.pooled, (d,)),
    )


def asp_project(x: ad.Tensor, proj: ASPProjector, train_mode=False, rng=None) -> ad.Tensor:
    """Single-sample ASP projection: x (K, F, T) -> (out_dim,)."""
    pooled = ad.reshape(pool_layers(x), (1, x.shape[1], x.shape[2]))
    out = proj.forward_pooled(pooled, train_mode, rng)
    return ad.reshape(out, (out.shape[1],))


def forward_full(style: ad.Tensor, ling: ad.Tensor, model: SlimModel,
                 train_mode=False, rng=None):
    """Single-sample full forward: (K, F, T) inputs -> (logit, dep_s, dep_l)."""
    style_b = ad.reshape(pool_layers(style), (1, style.shape[1], style.shape[2]))
    ling_b = ad.reshape(pool_layers(ling), (1, ling.shape[1], ling.shape[2]))
    logits, dep_s, dep_l = model.fuse(style_b, ling_b, train_mode, rng)
    if dep_s is not None:
        d, t = dep_s.frames.shape[1], dep_s.frames.shape[2]
        dep_s = DependencyFeature(ad.reshape(dep_s.frames, (d, t)), ad.reshape(dep_s.pooled, (d,)))
        dep_l = DependencyFeature(ad.reshape(dep_l.frames, (d, t)), ad.reshape(dep_l.pooled, (d,)))
    return ad.reshape(logits, (1,)), dep_s, dep_l


# ---------------------------------------------------------------------------
# checkpoint container


CKPT_MAGIC = b"SLCK"
CKPT_VERSION = 1


@dataclass
class ModelCheckpoint:
    stage: int
    params: dict[str, np.ndarray]
    config: dict = field(default_factory=dict)
    version: int = CKPT_VERSION


def save_checkpoint(ckpt: ModelCheckpoint, path) -> None:
    path = Path(path)
    if ckpt.stage not in (1, 2):
        raise ConfigError(f"checkpoint stage must be 1 or 2, got {ckpt.stage}")
    names = sorted(ckpt.params)
    if len(names) != len(set(names)):
        raise ConfigError("checkpoint parameter names must be unique")
    body = bytearray()
    body += struct.pack("<IBI", ckpt.version, ckpt.stage, len(names))
    for name in names:
        raw = name.encode("utf-8")
        arr = np.ascontiguousarray(ckpt.params[name], dtype="<f8")
        body += struct.pack("<I", len(raw))
        body += raw
        body += struct.pack("<I", arr.ndim)
        body += struct.pack(f"<{arr.ndim}I", *arr.shape)
        body += arr.tobytes()
    crc = zlib.crc32(bytes(body)) & 0xFFFFFFFF
    try:
        with open(path, "wb") as fh:
            fh.write(CKPT_MAGIC)
            fh.write(body)
            fh.write(struct.pack("<I", crc))
    except OSError as exc:
        raise DataError(f"cannot write checkpoint {path}: {exc}") from exc
    sidecar = _config_sidecar(path)
    sidecar.write_text(json.dumps(ckpt.config, sort_keys=True, indent=2) + "\n")


def load_checkpoint(path) -> ModelCheckpoint:
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read checkpoint {path}: {exc}") from exc
    if len(blob) < 4 + 9 + 4 or blob[:4] != CKPT_MAGIC:
        raise FormatError(f"{path}: not a checkpoint container")
    body = blob[4:-4]
    (stored_crc,) = struct.unpack_from("<I", blob, len(blob) - 4)
    if zlib.crc32(body) & 0xFFFFFFFF != stored_crc:
        raise CorruptionError(f"{path}: checkpoint CRC mismatch")
    off = 0
    version, stage, count = struct.unpack_from("<IBI", body, off)
    off += 9
    if version != CKPT_VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    params = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<I", body, off)
        off += 4
        name = body[off:off + name_len].decode("utf-8")
        off += name_len
        (rank,) = struct.unpack_from("<I", body, off)
        off += 4
        dims = struct.unpack_from(f"<{rank}I", body, off)
        off += 4 * rank
        n = int(np.prod(dims)) if rank else 1
        if name in params:
            raise FormatError(f"{path}: duplicate parameter {name!r}")
        params[name] = np.frombuffer(body, dtype="<f8", count=n, offset=off).reshape(dims).copy()
        off += 8 * n
    if off != len(body):
        raise FormatError(f"{path}: trailing bytes in checkpoint body")
    config = {}
    sidecar = _config_sidecar(path)
    if sidecar.is_file():
        config = json.loads(sidecar.read_text())
    return ModelCheckpoint(stage=stage, params=params, config=config)


def _config_sidecar(path: Path) -> Path:
    return path.with_name(path.name + ".json")


def model_from_checkpoint(ckpt: ModelCheckpoint, variant: str | None = None) -> SlimModel:
    """Rebuild a model matching a checkpoint's recorded architecture."""
    cfg = ckpt.config
    model = SlimModel(
        feat_dim=int(cfg.get("feat_dim", DEFAULT_FEAT_DIM)),
        dep_dim=int(cfg.get("dep_dim", DEFAULT_DEP_DIM)),
        hidden_dim=int(cfg.get("hidden_dim", 256)),
        variant=variant or cfg.get("variant", "full"),
        activation=cfg.get("activation", "relu"),
        seed=int(cfg.get("seed", 0)),
    )
    if ckpt.stage == 1:
        model.load_params(ckpt.params, subset=model.stage1_params())
    else:
        model.load_params(ckpt.params)
    return model
