"""Training objectives.

Stage 1 is a self-contrastive redundancy-reduction loss over the two
dependency-feature streams: a cross-stream distance term plus a weighted
intra-stream term that pushes each stream's feature Gram matrix toward
the identity. Stage 2 is plain binary cross-entropy.

Two scaling modes are supported because the published recipe is
ambiguous about where the batch-size division lives:

  * ``literal``      - standardized features are divided by the batch
                        size before BOTH terms (matches the published
                        pseudocode exactly);
  * ``gram-scaled``  - features stay unit-variance and only the Gram
                        matrix is divided by B (the redundancy-reduction
                        convention popularized by Barlow Twins).

``gram-scaled`` is the default: dividing the features themselves shrinks
the Gram by B**2, which makes the intra term nearly inert at realistic
batch sizes. The literal mode is kept for fidelity experiments.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, DimensionError

LOSS_MODES = ("literal", "gram-scaled")


@dataclass
class Stage1LossBreakdown:
    """total = cross + lam * intra, intra = style + linguistics."""

    total: ad.Tensor  # scalar, carries the graph
    cross: float
    intra: float
    style: float
    linguistics: float
    lam: float


def stage1_loss(style: ad.Tensor, ling: ad.Tensor, lam: float = 0.007,
                mode: str = "gram-scaled") -> Stage1LossBreakdown:
    """Self-contrastive loss over batched dependency features (B, F, T).

    The cross term standardizes each (feature, frame) column over the
    batch and averages the squared Frobenius distance between the two
    streams over time. The intra term standardizes the temporally
    averaged features and penalizes the distance of each stream's Gram
    matrix from the identity.
    """
    if mode not in LOSS_MODES:
        raise ConfigError(f"unknown loss mode {mode!r}, expected one of {LOSS_MODES}")
    if not 0.0 <= lam <= 1.0:
        raise ConfigError(f"lambda must be in [0, 1], got {lam}")
    if style.shape != ling.shape:
        raise DimensionError(
            f"stage1_loss shape mismatch: {style.shape} vs {ling.shape}"
        )
    if style.ndim != 3:
        raise DimensionError(f"stage1_loss expects (B, F, T), got {style.shape}")
    b, f, t = style.shape
    if b < 2:
        raise ConfigError(f"stage1_loss undefined for batch size {b}")

    feat_scale = 1.0 / b if mode == "literal" else 1.0

    s_norm = ad.batch_standardize(style)
    l_norm = ad.batch_standardize(ling)
    if mode == "literal":
        s_norm = ad.scale(s_norm, feat_scale)
        l_norm = ad.scale(l_norm, feat_scale)
    cross = ad.scale(ad.frobenius_sq(ad.sub(s_norm, l_norm)), 1.0 / t)

    eye = ad.Tensor(np.eye(f))

    def intra_term(x_bft):
        avg = ad.reduce_mean(x_bft, axis=2)  # (B, F)
        xn = ad.batch_standardize(avg)
        if mode == "literal":
            xn = ad.scale(xn, feat_scale)
        gram = ad.matmul(ad.transpose(xn, (1, 0)), xn)
        if mode == "gram-scaled":
            gram = ad.scale(gram, 1.0 / b)
        return ad.frobenius_sq(ad.sub(gram, eye))

    style_term = intra_term(style)
    ling_term = intra_term(ling)
    intra = ad.add(style_term, ling_term)
    total = ad.add(cross, ad.scale(intra, lam))

    return Stage1LossBreakdown(
        total=total,
        cross=cross.item(),
        intra=intra.item(),
        style=style_term.item(),
        linguistics=ling_term.item(),
        lam=lam,
    )


def bce_loss(logits: ad.Tensor, labels) -> ad.Tensor:
    """Mean binary cross-entropy over a batch of logits (fake = 1)."""
    return ad.bce_with_logits(logits, labels)
