"""Evaluation and statistics kernels: EER, F1, correlations, Welch's t-test.

Conventions baked in here and relied on everywhere else:
  * detection scores are oriented so that HIGHER means MORE REAL;
  * the positive class for F1 is "fake" (the detection target);
  * EER uses linear interpolation between the two operating points that
    straddle the FAR/FRR crossing when no threshold hits it exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, asdict

import numpy as np

from .errors import ConfigError, NumericalError


def eer(scores_real, scores_fake) -> tuple[float, float]:
    """Equal error rate and its threshold.

    Sweeps thresholds at midpoints of the sorted pooled scores (plus
    sentinels outside the range). FAR(t) is the fraction of fake scores
    >= t, FRR(t) the fraction of real scores < t. Returns the rate where
    the two cross, linearly interpolated if needed, with the matching
    threshold.
    """
    real = np.sort(np.asarray(scores_real, dtype=np.float64))
    fake = np.sort(np.asarray(scores_fake, dtype=np.float64))
    if real.size == 0 or fake.size == 0:
        raise ConfigError("eer requires non-empty score lists for both classes")
    pooled = np.unique(np.concatenate([real, fake]))
    mids = (pooled[1:] + pooled[:-1]) / 2.0
    cand = np.concatenate([[pooled[0] - 1.0], mids, [pooled[-1] + 1.0]])
    far = (fake.size - np.searchsorted(fake, cand, side="left")) / fake.size
    frr = np.searchsorted(real, cand, side="left") / real.size
    diff = frr - far  # monotone from -1 toward +1
    k = int(np.argmax(diff >= 0.0))
    if diff[k] == 0.0:
        return float(far[k]), float(cand[k])
    # crossing lies strictly between candidates k-1 and k
    t = -diff[k - 1] / (diff[k] - diff[k - 1])
    rate = far[k - 1] + t * (far[k] - far[k - 1])
    threshold = cand[k - 1] + t * (cand[k] - cand[k - 1])
    return float(rate), float(threshold)


def f1(predictions, labels) -> float:
    """F1 with the fake class (label 1) as positive; 0 when undefined."""
    pred = np.asarray(predictions, dtype=np.int64).reshape(-1)
    lab = np.asarray(labels, dtype=np.int64).reshape(-1)
    if pred.shape != lab.shape:
        raise ConfigError(f"f1 length mismatch: {pred.shape} vs {lab.shape}")
    tp = int(np.sum((pred == 1) & (lab == 1)))
    fp = int(np.sum((pred == 1) & (lab == 0)))
    fn = int(np.sum((pred == 0) & (lab == 1)))
    denom = 2 * tp + fp + fn
    return 2.0 * tp / denom if denom else 0.0


def pearson(x, y) -> float:
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if x.shape != y.shape or x.size < 2:
        raise ConfigError(f"pearson needs two equal-length lists (>= 2), got {x.size}, {y.size}")
    xd = x - x.mean()
    yd = y - y.mean()
    sx = math.sqrt(float(xd @ xd))
    sy = math.sqrt(float(yd @ yd))
    if sx == 0.0 or sy == 0.0:
        raise NumericalError("pearson undefined for zero-variance input")
    return float(xd @ yd) / (sx * sy)


def rankdata(values) -> np.ndarray:
    """Fractional ranks starting at 1, ties receive their average rank."""
    v = np.asarray(values, dtype=np.float64).reshape(-1)
    order = np.argsort(v, kind="stable")
    ranks = np.empty(v.size, dtype=np.float64)
    i = 0
    while i < v.size:
        j = i
        while j + 1 < v.size and v[order[j + 1]] == v[order[i]]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def spearman(x, y) -> float:
    """Pearson correlation on fractional ranks."""
    return pearson(rankdata(x), rankdata(y))


def cosine_distance(a, b) -> float:
    a = np.asarray(a, dtype=np.float64).reshape(-1)
    b = np.asarray(b, dtype=np.float64).reshape(-1)
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        raise NumericalError("cosine distance undefined for a zero vector")
    return 1.0 - float(a @ b) / (na * nb)


def welch_ttest(sample_a, sample_b) -> tuple[float, float, float]:
    """Welch's two-sample t-test: returns (t, df, two-sided p)."""
    a = np.asarray(sample_a, dtype=np.float64).reshape(-1)
    b = np.asarray(sample_b, dtype=np.float64).reshape(-1)
    if a.size < 2 or b.size < 2:
        raise ConfigError("welch_ttest needs at least 2 values per sample")
    va = float(a.var(ddof=1))
    vb = float(b.var(ddof=1))
    if va == 0.0 and vb == 0.0:
        raise NumericalError("welch_ttest undefined when both variances are zero")
    sa = va / a.size
    sb = vb / b.size
    t = (float(a.mean()) - float(b.mean())) / math.sqrt(sa + sb)
    df = (sa + sb) ** 2 / (sa ** 2 / (a.size - 1) + sb ** 2 / (b.size - 1))
    return t, df, student_t_two_sided_p(t, df)


def student_t_two_sided_p(t: float, df: float) -> float:
    """Two-sided p-value of a Student-t statistic via the incomplete beta."""
    if df <= 0:
        raise ConfigError(f"degrees of freedom must be positive, got {df}")
    if t == 0.0:
        return 1.0
    x = df / (df + t * t)
    return reg_inc_beta(df / 2.0, 0.5, x)


def reg_inc_beta(a: float, b: float, x: float, max_iter: int = 300, tol: float = 1e-14) -> float:
    """Regularized incomplete beta function I_x(a, b) by continued fraction."""
    if not 0.0 <= x <= 1.0:
        raise ConfigError(f"incomplete beta argument out of range: {x}")
    if x == 0.0:
        return 0.0
    if x == 1.0:
        return 1.0
    ln_bt = (
        math.lgamma(a + b)
        - math.lgamma(a)
        - math.lgamma(b)
        + a * math.log(x)
        + b * math.log1p(-x)
    )
    bt = math.exp(ln_bt)
    if x < (a + 1.0) / (a + b + 2.0):
        return bt * _beta_cf(a, b, x, max_iter, tol) / a
    return 1.0 - bt * _beta_cf(b, a, 1.0 - x, max_iter, tol) / b


def _beta_cf(a, b, x, max_iter, tol):
    """Lentz's continued fraction for the incomplete beta."""
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < tiny:
        d = tiny
    d = 1.0 / d
    h = d
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < tol:
            return h
    raise NumericalError(f"incomplete beta failed to converge for a={a}, b={b}, x={x}")


def percentile(values, q: float) -> float:
    """Linear-interpolation percentile on the sorted values, q in [0, 100]."""
    v = np.sort(np.asarray(values, dtype=np.float64).reshape(-1))
    if v.size == 0:
        raise ConfigError("percentile of empty list")
    if not 0.0 <= q <= 100.0:
        raise ConfigError(f"percentile q out of range: {q}")
    pos = (v.size - 1) * (q / 100.0)
    lo = int(math.floor(pos))
    hi = int(math.ceil(pos))
    frac = pos - lo
    return float(v[lo] + (v[hi] - v[lo]) * frac)


def summarize(values) -> dict:
    v = np.asarray(values, dtype=np.float64).reshape(-1)
    return {
        "n": int(v.size),
        "mean": float(v.mean()),
        "std": float(v.std(ddof=0)),
        "min": float(v.min()),
        "q25": percentile(v, 25.0),
        "median": percentile(v, 50.0),
        "q75": percentile(v, 75.0),
        "max": float(v.max()),
    }


# ---------------------------------------------------------------------------
# evaluation reports


@dataclass
class EvalReport:
    """Detection metrics over one score set (higher score = more real)."""

    eer: float
    eer_threshold: float
    f1: float
    n_real: int
    n_fake: int
    real_scores: dict
    fake_scores: dict
    orientation_flipped: bool = False

    def to_dict(self) -> dict:
        return asdict(self)


def evaluate_scores(scores_real, scores_fake) -> EvalReport:
    """Build an EvalReport from per-class realness scores.

    The decision threshold is the EER operating point: samples scoring
    below it are predicted fake. If the inputs turn out anti-oriented
    (EER above 0.5), scores are negated first and the flip is flagged.
    """
    real = np.asarray(scores_real, dtype=np.float64).reshape(-1)
    fake = np.asarray(scores_fake, dtype=np.float64).reshape(-1)
    flipped = False
    rate, threshold = eer(real, fake)
    if rate > 0.5:
        real, fake = -real, -fake
        rate, threshold = eer(real, fake)
        flipped = True
    preds = np.concatenate([(real < threshold).astype(int), (fake < threshold).astype(int)])
    labels = np.concatenate([np.zeros(real.size, int), np.ones(fake.size, int)])
    return EvalReport(
        eer=rate,
        eer_threshold=threshold,
        f1=f1(preds, labels),
        n_real=int(real.size),
        n_fake=int(fake.size),
        real_scores=summarize(real),
        fake_scores=summarize(fake),
        orientation_flipped=flipped,
    )


# ---------------------------------------------------------------------------
# score files: line-delimited "id label score" for external DET tooling


def write_scores(rows, path) -> None:
    lines = [f"{sid}\t{label}\t{repr(float(score))}" for sid, label, score in rows]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + ("\n" if lines else ""))


def read_scores(path) -> list[tuple[str, str, float]]:
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            parts = line.rstrip("\n").split("\t")
            if len(parts) != 3:
                raise ConfigError(f"{path}:{lineno}: expected 'id<TAB>label<TAB>score'")
            rows.append((parts[0], parts[1], float(parts[2])))
    return rows
