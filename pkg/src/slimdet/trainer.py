"""Two-stage training loops: AdamW, linear LR decay, early stopping.

Stage 1 trains both compression modules jointly on the real class only
under the self-contrastive loss, early-stopping on validation loss.
Stage 2 freezes everything from stage 1 and trains the ASP projectors
plus the classification head under binary cross-entropy, early-stopping
on validation EER.

Determinism contract: (seed, config, data) -> byte-identical checkpoints.
All randomness flows from the config seed through named PCG64 streams,
and the optimization loop is strictly sequential.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, asdict, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import kernels
from .errors import ConfigError, NumericalError
from .losses import LOSS_MODES, bce_loss, stage1_loss
from .metrics import eer
from .model import (
    ModelCheckpoint,
    SlimModel,
    VARIANTS,
    load_checkpoint,
)
from .store import EmbeddingCache, load_manifest, make_batches

logger = logging.getLogger(__name__)

_STREAM_INIT, _STREAM_SHUFFLE, _STREAM_DROPOUT, _STREAM_AUGMENT = 1, 2, 3, 4


@dataclass
class TrainConfig:
    stage: int
    batch_size: int
    epochs: int
    lr_start: float
    lr_end: float
    patience: int = 3
    lam: float = 0.007
    target_t: int = 50
    seed: int = 0
    loss_mode: str = "gram-scaled"
    variant: str = "full"
    augment: bool = False
    accum_steps: int = 1
    grad_clip: float = 5.0
    weight_decay: float = 0.01
    dep_dim: int = 256
    hidden_dim: int = 256
    activation: str = "relu"

    def __post_init__(self):
        if self.stage not in (1, 2):
            raise ConfigError(f"stage must be 1 or 2, got {self.stage}")
        if not self.lr_start >= self.lr_end > 0:
            raise ConfigError(
                f"need lr_start >= lr_end > 0, got {self.lr_start}, {self.lr_end}"
            )
        if self.patience < 1:
            raise ConfigError(f"patience must be >= 1, got {self.patience}")
        if self.loss_mode not in LOSS_MODES:
            raise ConfigError(f"unknown loss mode {self.loss_mode!r}")
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}")
        if self.batch_size < 1 or self.epochs < 1 or self.accum_steps < 1:
            raise ConfigError("batch_size, epochs and accum_steps must be >= 1")

    @classmethod
    def stage1_defaults(cls, **overrides) -> "TrainConfig":
        base = dict(stage=1, batch_size=16, epochs=50, lr_start=0.005, lr_end=0.0001)
        base.update(overrides)
        return cls(**base)

    @classmethod
    def stage2_defaults(cls, **overrides) -> "TrainConfig":
        base = dict(stage=2, batch_size=2, epochs=10, lr_start=0.0001, lr_end=0.00001)
        base.update(overrides)
        return cls(**base)

    def to_dict(self) -> dict:
        return asdict(self)


def linear_lr(epoch: int, total_epochs: int, lr_start: float, lr_end: float) -> float:
    """Affine interpolation from lr_start (epoch 0) to lr_end (last epoch)."""
    if not 0 <= epoch < total_epochs:
        raise ConfigError(f"epoch {epoch} out of range [0, {total_epochs})")
    if total_epochs == 1:
        return lr_start
    return lr_start + (epoch / (total_epochs - 1)) * (lr_end - lr_start)


@dataclass
class AdamWState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0


def adamw_step(params: dict[str, ad.Tensor], state: AdamWState, lr: float,
               beta1=0.9, beta2=0.999, eps=1e-8, weight_decay=0.01) -> None:
    """One decoupled-weight-decay Adam step over named parameters.

    Weight decay is applied directly to the parameters (not through the
    gradients); moments are bias-corrected. Parameters without a gradient
    this step are skipped.
    """
    state.step += 1
    for name in sorted(params):
        p = params[name]
        if p.grad is None:
            continue
        g = p.grad
        if not np.all(np.isfinite(g)):
            raise NumericalError(
                f"non-finite gradient for {name!r} at optimizer step {state.step}"
            )
        if name not in state.m:
            state.m[name] = np.zeros(p.size)
            state.v[name] = np.zeros(p.size)
        kernels.adamw_update(
            p.data.reshape(-1), np.ascontiguousarray(g.reshape(-1)),
            state.m[name], state.v[name],
            state.step, lr, beta1, beta2, eps, weight_decay,
        )


def global_grad_clip(params: dict[str, ad.Tensor], max_norm: float) -> float:
    """Scale all gradients when their global L2 norm exceeds max_norm."""
    total = 0.0
    for p in params.values():
        if p.grad is not None:
            total += float(np.dot(p.grad.ravel(), p.grad.ravel()))
    norm = float(np.sqrt(total))
    if max_norm > 0 and norm > max_norm:
        factor = max_norm / norm
        for p in params.values():
            if p.grad is not None:
                p.grad = p.grad * factor
        logger.info("gradient clipped: norm %.3f -> %.1f", norm, max_norm)
    return norm


def _zero_grads(params: dict[str, ad.Tensor]) -> None:
    for p in params.values():
        p.grad = None


def _stream(seed: int, kind: int, index: int = 0) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, kind, index])))


class _ProgressLog:
    def __init__(self, path):
        self.path = Path(path) if path else None
        self.rows = []

    def write(self, **fields):
        self.rows.append(fields)

    def flush(self):
        if self.path is None:
            return
        with open(self.path, "w") as fh:
            for row in self.rows:
                fh.write(json.dumps(row, sort_keys=True) + "\n")


def _snapshot(params: dict[str, ad.Tensor]) -> dict[str, np.ndarray]:
    return {name: p.data.copy() for name, p in params.items()}


def _records(manifest):
    if isinstance(manifest, (str, Path)):
        return load_manifest(manifest)
    return list(manifest)


def _infer_feat_dim(cache: EmbeddingCache, record) -> int:
    style, _ = cache.pooled(record)
    return style.shape[0]


def train_stage1(manifest, config: TrainConfig, log_path=None) -> ModelCheckpoint:
    """One-class dependency training; returns the best-validation checkpoint.

    Every record in the training split must be labeled real (fakes would
    leak class information into the one-class objective); validation is
    restricted to its real records for the same reason.
    """
    if config.stage != 1:
        raise ConfigError("train_stage1 requires a stage-1 config")
    records = _records(manifest)
    train = [r for r in records if r.split == "train"]
    fakes = [r.id for r in train if r.label != "real"]
    if fakes:
        raise ConfigError(
            f"stage-1 training set must contain only real samples; "
            f"found fake records such as {fakes[0]!r}"
        )
    valid = [r for r in records if r.split == "valid" and r.label == "real"]
    if not train or not valid:
        raise ConfigError("stage-1 needs non-empty real train and valid splits")

    cache = EmbeddingCache()
    feat_dim = _infer_feat_dim(cache, train[0])
    model = SlimModel(
        feat_dim=feat_dim, dep_dim=config.dep_dim, hidden_dim=config.hidden_dim,
        variant="dependency", activation=config.activation, seed=config.seed,
    )
    trainable = model.stage1_params()
    state = AdamWState()
    drop_rng = _stream(config.seed, _STREAM_DROPOUT)
    log = _ProgressLog(log_path)

    def epoch_loss(split_records, train_mode, lr=None, shuffle_seed=None):
        sums = {"total": 0.0, "cross": 0.0, "intra": 0.0, "style": 0.0, "linguistics": 0.0}
        count = 0
        pending = 0
        for batch in make_batches(split_records, config.batch_size, config.target_t,
                                  shuffle_seed=shuffle_seed, cache=cache):
            if batch.style.shape[0] < 2:
                continue  # the loss is undefined for singleton tail batches
            style = ad.Tensor(batch.style)
            ling = ad.Tensor(batch.linguistics)
            dep_s, dep_l = model.dependency_features(
                style, ling, train=train_mode, rng=drop_rng if train_mode else None)
            breakdown = stage1_loss(dep_s.frames, dep_l.frames, config.lam, config.loss_mode)
            if train_mode:
                ad.scale(breakdown.total, 1.0 / config.accum_steps).backward()
                pending += 1
                if pending == config.accum_steps:
                    global_grad_clip(trainable, config.grad_clip)
                    adamw_step(trainable, state, lr, weight_decay=config.weight_decay)
                    _zero_grads(trainable)
                    pending = 0
            sums["total"] += breakdown.total.item()
            sums["cross"] += breakdown.cross
            sums["intra"] += breakdown.intra
            sums["style"] += breakdown.style
            sums["linguistics"] += breakdown.linguistics
            count += 1
        if train_mode and pending:
            global_grad_clip(trainable, config.grad_clip)
            adamw_step(trainable, state, lr, weight_decay=config.weight_decay)
            _zero_grads(trainable)
        if count == 0:
            raise ConfigError("no usable batches (every batch was smaller than 2)")
        return {key: val / count for key, val in sums.items()}

    best_val = np.inf
    best_params = _snapshot(trainable)
    bad_epochs = 0
    for epoch in range(config.epochs):
        lr = linear_lr(epoch, config.epochs, config.lr_start, config.lr_end)
        shuffle_seed = int(_stream(config.seed, _STREAM_SHUFFLE, epoch).integers(2**63))
        train_stats = epoch_loss(train, True, lr=lr, shuffle_seed=shuffle_seed)
        val_stats = epoch_loss(valid, False)
        log.write(epoch=epoch, split="train", lr=lr, **train_stats)
        log.write(epoch=epoch, split="valid", **val_stats)
        logger.info("stage1 epoch %d train %.5f valid %.5f", epoch,
                    train_stats["total"], val_stats["total"])
        if val_stats["total"] < best_val:
            best_val = val_stats["total"]
            best_params = _snapshot(trainable)
            bad_epochs = 0
        else:
            bad_epochs += 1
            if bad_epochs == config.patience:
                log.write(event="early_stop", epoch=epoch, best_valid=best_val)
                break
    log.flush()
    snapshot = dict(config.to_dict(), feat_dim=feat_dim, best_valid_loss=best_val)
    return ModelCheckpoint(stage=1, params=best_params, config=snapshot)


# ---------------------------------------------------------------------------
# stage 2


def _augment_batch(style, ling, labels, ids, rng):
    """Embedding-space augmentation: one randomly chosen corruption per
    sample, concatenated with the originals (doubling the batch)."""
    aug_s = style.copy()
    aug_l = ling.copy()
    b, f, t = style.shape
    for i in range(b):
        kind = rng.integers(3)
        if kind == 0:  # additive noise
            aug_s[i] += rng.normal(0.0, 0.05, size=(f, t))
            aug_l[i] += rng.normal(0.0, 0.05, size=(f, t))
        elif kind == 1:  # time masking
            width = int(rng.integers(1, max(2, t // 5)))
            start = int(rng.integers(0, t - width + 1))
            aug_s[i, :, start:start + width] = 0.0
            aug_l[i, :, start:start + width] = 0.0
        else:  # feature masking
            width = int(rng.integers(1, max(2, f // 20)))
            start = int(rng.integers(0, f - width + 1))
            aug_s[i, start:start + width, :] = 0.0
            aug_l[i, start:start + width, :] = 0.0
    return (
        np.concatenate([style, aug_s]),
        np.concatenate([ling, aug_l]),
        np.concatenate([labels, labels]),
        ids + [f"{sid}#aug" for sid in ids],
    )


class _FrozenFeatures:
    """Precomputed eval-mode averaged dependency features, keyed by id."""

    def __init__(self, model: SlimModel, cache: EmbeddingCache):
        self.model = model
        self.cache = cache
        self._pooled: dict[str, tuple[np.ndarray, np.ndarray]] = {}

    def pooled(self, records) -> tuple[np.ndarray, np.ndarray]:
        missing = [r for r in records if r.id not in self._pooled]
        for rec in missing:
            style, ling = self.cache.pooled(rec)
            style_b = ad.Tensor(style.astype(np.float64)[None])
            ling_b = ad.Tensor(ling.astype(np.float64)[None])
            dep_s, dep_l = self.model.dependency_features(style_b, ling_b, train=False)
            self._pooled[rec.id] = (dep_s.pooled.data[0], dep_l.pooled.data[0])
        stacked = [self._pooled[r.id] for r in records]
        return (
            np.stack([s for s, _ in stacked]),
            np.stack([l for _, l in stacked]),
        )


def _needs_dep(variant: str) -> bool:
    return variant in ("full", "dependency")


def score_records(model: SlimModel, records, cache: EmbeddingCache,
                  target_t: int, frozen: "_FrozenFeatures | None" = None,
                  batch_size: int = 16):
    """Eval-mode realness scores (higher = more real) for manifest records."""
    ids, labels, scores = [], [], []
    frozen = frozen if _needs_dep(model.variant) else None
    recs_by_id = {r.id: r for r in records}
    for batch in make_batches(records, batch_size, target_t, shuffle_seed=None, cache=cache):
        dep = None
        if frozen is not None:
            batch_records = [recs_by_id[i] for i in batch.ids]
            dep_s, dep_l = frozen.pooled(batch_records)
            dep = (ad.Tensor(dep_s), ad.Tensor(dep_l))
        logits, _, _ = model.fuse(
            ad.Tensor(batch.style), ad.Tensor(batch.linguistics),
            train=False, dep_pooled=dep,
        )
        ids.extend(batch.ids)
        labels.extend(int(x) for x in batch.labels)
        scores.extend((-logits.data).tolist())  # logit is fake-evidence
    return ids, labels, scores


def _split_scores(labels, scores):
    real = [s for s, l in zip(scores, labels) if l == 0]
    fake = [s for s, l in zip(scores, labels) if l == 1]
    return real, fake


def _bce_from_scores(labels, scores) -> float:
    """Mean BCE recovered from realness scores (score = -logit)."""
    z = -np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    softplus = np.maximum(z, 0.0) + np.log1p(np.exp(-np.abs(z)))
    return float(np.mean(softplus - y * z))


def train_stage2(manifest, stage1_ckpt, config: TrainConfig, log_path=None) -> ModelCheckpoint:
    """Supervised training of ASP projectors + head on frozen stage-1 features.

    Early stopping monitors validation EER. The returned checkpoint holds
    the full parameter set (frozen stage-1 tensors plus the trained
    stage-2 modules) so evaluation needs only one file.
    """
    if config.stage != 2:
        raise ConfigError("train_stage2 requires a stage-2 config")
    if isinstance(stage1_ckpt, (str, Path)):
        stage1_ckpt = load_checkpoint(stage1_ckpt)
    if stage1_ckpt.stage != 1:
        raise ConfigError(f"expected a stage-1 checkpoint, got stage {stage1_ckpt.stage}")
    records = _records(manifest)
    train = [r for r in records if r.split == "train"]
    valid = [r for r in records if r.split == "valid"]
    if not train or not valid:
        raise ConfigError("stage-2 needs non-empty train and valid splits")
    if len({r.label for r in train}) < 2:
        raise ConfigError("stage-2 training split must contain both classes")

    cache = EmbeddingCache()
    feat_dim = int(stage1_ckpt.config.get("feat_dim") or _infer_feat_dim(cache, train[0]))
    model = SlimModel(
        feat_dim=feat_dim, dep_dim=config.dep_dim, hidden_dim=config.hidden_dim,
        variant=config.variant, activation=config.activation, seed=config.seed,
    )
    model.load_params(stage1_ckpt.params, subset=model.stage1_params())
    model.freeze_stage1()
    trainable = model.stage2_params()
    state = AdamWState()
    drop_rng = _stream(config.seed, _STREAM_DROPOUT)
    aug_rng = _stream(config.seed, _STREAM_AUGMENT)
    frozen = _FrozenFeatures(model, cache)
    log = _ProgressLog(log_path)
    recs_by_id = {r.id: r for r in records}

    best_eer = np.inf
    best_loss = np.inf
    best_params = _snapshot(trainable)
    bad_epochs = 0
    for epoch in range(config.epochs):
        lr = linear_lr(epoch, config.epochs, config.lr_start, config.lr_end)
        shuffle_seed = int(_stream(config.seed, _STREAM_SHUFFLE, epoch).integers(2**63))
        total_loss, count, pending = 0.0, 0, 0
        for batch in make_batches(train, config.batch_size, config.target_t,
                                  shuffle_seed=shuffle_seed, cache=cache):
            style, ling, labels, ids = batch.style, batch.linguistics, batch.labels, batch.ids
            if config.augment:
                style, ling, labels, ids = _augment_batch(style, ling, labels, ids, aug_rng)
            dep = None
            if _needs_dep(config.variant):
                base_records = [recs_by_id[i.split("#")[0]] for i in ids]
                dep_s, dep_l = frozen.pooled(base_records)
                dep = (ad.Tensor(dep_s), ad.Tensor(dep_l))
            logits, _, _ = model.fuse(
                ad.Tensor(style), ad.Tensor(ling),
                train=True, rng=drop_rng, dep_pooled=dep,
            )
            loss = bce_loss(logits, labels)
            ad.scale(loss, 1.0 / config.accum_steps).backward()
            pending += 1
            if pending == config.accum_steps:
                global_grad_clip(trainable, config.grad_clip)
                adamw_step(trainable, state, lr, weight_decay=config.weight_decay)
                _zero_grads(trainable)
                pending = 0
            total_loss += loss.item()
            count += 1
        if pending:
            global_grad_clip(trainable, config.grad_clip)
            adamw_step(trainable, state, lr, weight_decay=config.weight_decay)
            _zero_grads(trainable)
        _, val_labels, val_scores = score_records(
            model, valid, cache, config.target_t, frozen=frozen)
        real, fake = _split_scores(val_labels, val_scores)
        if not real or not fake:
            raise ConfigError("stage-2 validation split must contain both classes")
        val_eer, _ = eer(real, fake)
        val_loss = _bce_from_scores(val_labels, val_scores)
        log.write(epoch=epoch, split="train", lr=lr, total=total_loss / max(count, 1))
        log.write(epoch=epoch, split="valid", eer=val_eer, total=val_loss)
        logger.info("stage2 epoch %d loss %.5f valid EER %.4f", epoch,
                    total_loss / max(count, 1), val_eer)
        # EER is the monitored metric; at desk scale it is heavily quantized
        # (steps of 1/n_valid), so equal-EER epochs fall back to validation
        # loss to decide improvement
        improved = val_eer < best_eer or (val_eer == best_eer and val_loss < best_loss)
        if improved:
            best_eer, best_loss = val_eer, min(val_loss, best_loss)
            best_params = _snapshot(trainable)
            bad_epochs = 0
        else:
            bad_epochs += 1
            if bad_epochs == config.patience:
                log.write(event="early_stop", epoch=epoch, best_valid_eer=best_eer)
                break
    log.flush()
    full_params = dict(stage1_ckpt.params)
    full_params.update(best_params)
    snapshot = dict(config.to_dict(), feat_dim=feat_dim, best_valid_eer=float(best_eer))
    return ModelCheckpoint(stage=2, params=full_params, config=snapshot)
