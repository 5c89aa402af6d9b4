"""Analysis probes: CCA dependency probe, mismatch distributions, and
layer-wise rank-correlation maps.

The CCA probe fits paired linear projections of the two subspace views
that are maximally correlated on real samples, then scores how well an
unseen sample's projected views agree. Fitting ~20 canonical dimensions
from ~100 samples of 1024-dim features is badly underdetermined, so a
ridge term (relative to the covariance trace) is mandatory and recorded
in every report; without it the probe returns spurious perfect
correlations.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import metrics
from .errors import ConfigError, DimensionError, NumericalError
from .model import model_from_checkpoint
from .store import EmbeddingCache

DEFAULT_RIDGE = 1e-2


@dataclass
class CCAModel:
    mean_style: np.ndarray  # (F_s,)
    mean_ling: np.ndarray  # (F_l,)
    proj_style: np.ndarray  # (F_s, d)
    proj_ling: np.ndarray  # (F_l, d)
    correlations: np.ndarray  # (d,) training correlations, descending in [0, 1]
    ridge: float
    dims: int


def _inv_sqrt_cov(x_centered: np.ndarray, ridge: float) -> np.ndarray:
    n, f = x_centered.shape
    cov = x_centered.T @ x_centered / n
    trace = float(np.trace(cov))
    if trace <= 0.0:
        raise NumericalError("degenerate view: zero covariance trace")
    cov = cov + (ridge * trace / f) * np.eye(f)
    vals, vecs = np.linalg.eigh(cov)
    vals = np.maximum(vals, 1e-300)
    return (vecs / np.sqrt(vals)) @ vecs.T


def _pair_signs(w: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    """Deterministic orientation per canonical direction: -1 where the
    first non-negligible coefficient is negative, else +1.

    The flip must be applied to BOTH sides of a canonical pair; flipping
    one side alone negates that pair's correlation and corrupts the probe.
    """
    signs = np.ones(w.shape[1])
    for k in range(w.shape[1]):
        col = w[:, k]
        nz = np.flatnonzero(np.abs(col) > tol)
        if nz.size and col[nz[0]] < 0:
            signs[k] = -1.0
    return signs


def cca_fit(style_vecs, ling_vecs, dims: int = 20, ridge: float = DEFAULT_RIDGE) -> CCAModel:
    """Fit canonical directions by whitening + SVD of the cross-covariance."""
    x = np.asarray(style_vecs, dtype=np.float64)
    y = np.asarray(ling_vecs, dtype=np.float64)
    if x.ndim != 2 or y.ndim != 2 or x.shape[0] != y.shape[0]:
        raise DimensionError(f"cca_fit expects aligned (n, F) views, got {x.shape}, {y.shape}")
    n = x.shape[0]
    if n < 2:
        raise ConfigError(f"cca_fit needs at least 2 samples, got {n}")
    bound = min(x.shape[1], y.shape[1], n - 1)
    if not 1 <= dims <= bound:
        raise ConfigError(f"dims must be in [1, {bound}] for these views, got {dims}")
    mean_x = x.mean(axis=0)
    mean_y = y.mean(axis=0)
    xc = x - mean_x
    yc = y - mean_y
    isx = _inv_sqrt_cov(xc, ridge)
    isy = _inv_sqrt_cov(yc, ridge)
    cross = xc.T @ yc / n
    u, s, vt = np.linalg.svd(isx @ cross @ isy, full_matrices=False)
    proj_x = isx @ u[:, :dims]
    proj_y = isy @ vt.T[:, :dims]
    signs = _pair_signs(proj_x)
    proj_x = proj_x * signs
    proj_y = proj_y * signs
    return CCAModel(
        mean_style=mean_x,
        mean_ling=mean_y,
        proj_style=proj_x,
        proj_ling=proj_y,
        correlations=np.clip(s[:dims], 0.0, 1.0),
        ridge=ridge,
        dims=dims,
    )


def cca_project(model: CCAModel, style_vec, ling_vec):
    x = np.asarray(style_vec, dtype=np.float64).reshape(-1)
    y = np.asarray(ling_vec, dtype=np.float64).reshape(-1)
    if x.shape[0] != model.mean_style.shape[0] or y.shape[0] != model.mean_ling.shape[0]:
        raise DimensionError(
            f"sample dims {x.shape[0]}/{y.shape[0]} do not match fitted views "
            f"{model.mean_style.shape[0]}/{model.mean_ling.shape[0]}"
        )
    return (x - model.mean_style) @ model.proj_style, (y - model.mean_ling) @ model.proj_ling


def cca_project_correlate(model: CCAModel, style_vec, ling_vec) -> float:
    """Pearson r between the two projected canonical vectors of one sample."""
    u, v = cca_project(model, style_vec, ling_vec)
    return metrics.pearson(u, v)


def cca_group_report(model: CCAModel, groups: dict[str, tuple[np.ndarray, np.ndarray]],
                     per_dimension: bool = False, baseline: str = "real") -> dict:
    """Per-group correlation summary plus significance against a baseline group.

    groups maps a group name to (style (m, F_s), ling (m, F_l)) views.
    Per-sample mode correlates the 20 canonical components within each
    sample; per-dimension mode correlates each canonical component across
    samples and reports the mean over components.
    """
    per_group_r: dict[str, np.ndarray] = {}
    group_sizes: dict[str, int] = {}
    for name, (xs, ys) in groups.items():
        xs = np.asarray(xs, dtype=np.float64)
        ys = np.asarray(ys, dtype=np.float64)
        group_sizes[name] = int(xs.shape[0])
        if per_dimension:
            u = (xs - model.mean_style) @ model.proj_style
            v = (ys - model.mean_ling) @ model.proj_ling
            r = np.array([metrics.pearson(u[:, k], v[:, k]) for k in range(model.dims)])
        else:
            r = np.array([
                cca_project_correlate(model, xs[i], ys[i]) for i in range(xs.shape[0])
            ])
        per_group_r[name] = r
    report = {
        "dims": model.dims,
        "ridge": model.ridge,
        "mode": "per_dimension" if per_dimension else "per_sample",
        "fit_correlations_mean": float(model.correlations.mean()),
        "groups": {
            name: {"n": group_sizes[name], "mean": float(r.mean()), "std": float(r.std(ddof=0))}
            for name, r in per_group_r.items()
        },
        "tests": {},
    }
    if baseline in per_group_r:
        base = per_group_r[baseline]
        for name, r in per_group_r.items():
            if name == baseline or base.size < 2 or r.size < 2:
                continue
            t, df, p = metrics.welch_ttest(base, r)
            report["tests"][f"{baseline}_vs_{name}"] = {"welch_t": t, "welch_df": df, "welch_p": p}
    return report


# ---------------------------------------------------------------------------
# mismatch distribution report


def dependency_distance(model, style_pooled, ling_pooled) -> float:
    """Cosine distance between the averaged dependency features of one sample."""
    style_b = ad.Tensor(np.asarray(style_pooled, dtype=np.float64)[None, :, :])
    ling_b = ad.Tensor(np.asarray(ling_pooled, dtype=np.float64)[None, :, :])
    dep_s, dep_l = model.dependency_features(style_b, ling_b, train=False)
    return metrics.cosine_distance(dep_s.pooled.data[0], dep_l.pooled.data[0])


def mismatch_report(records, ckpt, cache: EmbeddingCache | None = None) -> dict:
    """Distribution of style/linguistics dependency distances per class.

    Returns per-sample rows, per-class summaries (quartiles and log-scale
    statistics), a shared histogram table, and Welch significance between
    the classes when both are present (otherwise a warning is recorded).
    """
    records = list(records)
    if not records:
        raise ConfigError("mismatch_report needs at least one record")
    model = model_from_checkpoint(ckpt) if not hasattr(ckpt, "dependency_features") else ckpt
    cache = cache or EmbeddingCache()
    rows = []
    for rec in records:
        style, ling = cache.pooled(rec)
        d = dependency_distance(model, style.astype(np.float64), ling.astype(np.float64))
        rows.append({"id": rec.id, "label": rec.label, "distance": d})
    by_class: dict[str, list[float]] = {}
    for row in rows:
        by_class.setdefault(row["label"], []).append(row["distance"])
    classes = {}
    for label, dists in by_class.items():
        summary = metrics.summarize(dists)
        positive = [d for d in dists if d > 0.0]
        summary["log10"] = (
            metrics.summarize(np.log10(positive)) if positive else None
        )
        summary["n_nonpositive"] = len(dists) - len(positive)
        classes[label] = summary
    all_d = np.array([row["distance"] for row in rows])
    lo, hi = float(all_d.min()), float(all_d.max())
    if hi <= lo:
        hi = lo + 1.0
    edges = np.linspace(lo, hi, 11)
    histogram = {
        "edges": edges.tolist(),
        "counts": {
            label: np.histogram(np.array(d), bins=edges)[0].tolist()
            for label, d in by_class.items()
        },
    }
    report = {"samples": rows, "classes": classes, "histogram": histogram}
    if len(by_class) == 2 and all(len(v) >= 2 for v in by_class.values()):
        t, df, p = metrics.welch_ttest(by_class["fake"], by_class["real"])
        report["welch"] = {"comparison": "fake_vs_real", "t": t, "df": df, "p": p}
    else:
        report["warning"] = "significance test skipped: need both classes with n >= 2"
    return report


# ---------------------------------------------------------------------------
# layer-wise rank correlation


def layer_spearman_matrix(embs_a, embs_b, mode: str = "per_sample") -> np.ndarray:
    """Mean Spearman correlation between every layer pair of two embedding sets.

    embs_a/embs_b are aligned lists of (K, F, T) arrays, one per sample.
    Each sample's layer is time-averaged to an F-vector; per_sample
    computes Spearman per sample then averages, concat ranks the
    concatenated features of all samples at once.
    """
    if mode not in ("per_sample", "concat"):
        raise ConfigError(f"unknown layer correlation mode {mode!r}")
    embs_a = [np.asarray(e, dtype=np.float64) for e in embs_a]
    embs_b = [np.asarray(e, dtype=np.float64) for e in embs_b]
    n = len(embs_a)
    if n != len(embs_b) or n < 2:
        raise ConfigError(f"need aligned sample lists with n >= 2, got {n}, {len(embs_b)}")
    avg_a = [e.mean(axis=2) for e in embs_a]  # (K_a, F)
    avg_b = [e.mean(axis=2) for e in embs_b]
    k_a = avg_a[0].shape[0]
    k_b = avg_b[0].shape[0]
    out = np.zeros((k_a, k_b))
    for i in range(k_a):
        for j in range(k_b):
            if mode == "per_sample":
                vals = [metrics.spearman(avg_a[s][i], avg_b[s][j]) for s in range(n)]
                out[i, j] = float(np.mean(vals))
            else:
                cat_a = np.concatenate([avg_a[s][i] for s in range(n)])
                cat_b = np.concatenate([avg_b[s][j] for s in range(n)])
                out[i, j] = metrics.spearman(cat_a, cat_b)
    return out
