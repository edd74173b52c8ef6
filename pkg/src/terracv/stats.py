"""Two-sample distributional diagnostics for train/test partitions.

Kolmogorov-Smirnov with the asymptotic p-value at effective size
n1*n2/(n1+n2), and the two-sample Anderson-Darling statistic in the k-sample
midrank formulation with the p-value interpolated from the published
critical-value table (clamped to [0.001, 0.25] outside its range).  p-values
are flagged approximate below 8 points per side.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import kolmogorov

from .spatial import NNDistanceReport, nn_distance_report

_MIN_EXACT_N = 8

# Critical points t_m(alpha) = b0 + b1/sqrt(m) + b2/m for the standardized
# k-sample statistic, m = k - 1 (here 1).
_AD_LEVELS = np.array([0.25, 0.10, 0.05, 0.025, 0.01, 0.005, 0.001])
_AD_B0 = np.array([0.675, 1.281, 1.645, 1.960, 2.326, 2.573, 3.085])
_AD_B1 = np.array([-0.245, 0.250, 0.678, 1.149, 1.822, 2.364, 3.615])
_AD_B2 = np.array([-0.105, -0.305, -0.362, -0.391, -0.396, -0.345, -0.154])

P_CLAMP_LOW = 0.001
P_CLAMP_HIGH = 0.25


@dataclass(frozen=True)
class TestResult:
    statistic: float
    p_value: float
    n1: int
    n2: int
    method: str  # "ks" | "ad"
    approximate: bool = False
    clamped: str | None = None  # "low" | "high" | None (AD table range)

    def to_dict(self) -> dict:
        return {
            "statistic": self.statistic,
            "p_value": self.p_value,
            "n1": self.n1,
            "n2": self.n2,
            "method": self.method,
            "approximate": self.approximate,
            "clamped": self.clamped,
        }


def _validate_pair(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.size < 2 or b.size < 2:
        raise ValueError("need at least 2 points per sample")
    if not (np.isfinite(a).all() and np.isfinite(b).all()):
        raise ValueError("samples must be finite")
    return a, b


def ks_two_sample(a, b) -> TestResult:
    """Two-sample Kolmogorov-Smirnov test.

    D is the supremum gap between the empirical CDFs over the pooled sample;
    the p-value comes from the asymptotic Kolmogorov distribution evaluated at
    sqrt(n1*n2/(n1+n2)) * D.
    """
    a, b = _validate_pair(a, b)
    n1, n2 = a.size, b.size
    a_sorted = np.sort(a)
    b_sorted = np.sort(b)
    pooled = np.concatenate([a_sorted, b_sorted])
    cdf_a = np.searchsorted(a_sorted, pooled, side="right") / n1
    cdf_b = np.searchsorted(b_sorted, pooled, side="right") / n2
    d = float(np.max(np.abs(cdf_a - cdf_b)))
    effective = n1 * n2 / (n1 + n2)
    p = float(kolmogorov(math.sqrt(effective) * d))
    p = min(1.0, max(0.0, p))
    return TestResult(
        statistic=d, p_value=p, n1=n1, n2=n2, method="ks",
        approximate=min(n1, n2) < _MIN_EXACT_N,
    )


def _ad_statistic_midrank(a: np.ndarray, b: np.ndarray) -> float:
    """Tie-adjusted two-sample Anderson-Darling statistic (k-sample form, k=2)."""
    pooled = np.sort(np.concatenate([a, b]))
    distinct = np.unique(pooled)
    big_n = pooled.size
    if distinct.size < 2:
        raise ValueError("all values identical across both samples; statistic undefined")

    left = np.searchsorted(pooled, distinct, side="left")
    right = np.searchsorted(pooled, distinct, side="right")
    lj = (right - left).astype(np.float64)
    bj = left + lj / 2.0

    a2 = 0.0
    for sample in (a, b):
        s = np.sort(sample)
        ni = s.size
        sr = np.searchsorted(s, distinct, side="right").astype(np.float64)
        fij = sr - np.searchsorted(s, distinct, side="left")
        mij = sr - fij / 2.0
        inner = lj / big_n * (big_n * mij - bj * ni) ** 2 / (bj * (big_n - bj) - big_n * lj / 4.0)
        a2 += float(inner.sum()) / ni
    return a2 * (big_n - 1.0) / big_n


def _ad_p_value(standardized: float) -> tuple[float, str | None]:
    """Interpolate log(alpha) quadratically in the critical points, clamping
    outside the table range."""
    m = 1.0  # two samples
    critical = _AD_B0 + _AD_B1 / math.sqrt(m) + _AD_B2 / m
    coeffs = np.polyfit(critical, np.log(_AD_LEVELS), 2)
    if standardized < critical.min():
        return P_CLAMP_HIGH, "high"
    if standardized > critical.max():
        return P_CLAMP_LOW, "low"
    p = float(math.exp(np.polyval(coeffs, standardized)))
    p = min(P_CLAMP_HIGH, max(P_CLAMP_LOW, p))
    return p, None


def ad_two_sample(a, b) -> TestResult:
    """Two-sample Anderson-Darling test (midrank tie handling)."""
    a, b = _validate_pair(a, b)
    n1, n2 = a.size, b.size
    stat = _ad_statistic_midrank(a, b)

    big_n = n1 + n2
    k = 2.0
    h_cap = 1.0 / n1 + 1.0 / n2
    i = np.arange(1, big_n, dtype=np.float64)
    h = float((1.0 / i).sum())
    # g = sum_{i=1}^{N-2} sum_{j=i+1}^{N-1} 1/((N-i)*j)
    inv_j = 1.0 / np.arange(1, big_n, dtype=np.float64)  # index j = 1..N-1
    tail = np.cumsum(inv_j[::-1])[::-1]  # tail[j-1] = sum_{t>=j} 1/t
    ivals = np.arange(1, big_n - 1, dtype=np.float64)
    g = float((tail[1:] / (big_n - ivals)).sum())

    acoef = (4.0 * g - 6.0) * (k - 1.0) + (10.0 - 6.0 * g) * h_cap
    bcoef = (2.0 * g - 4.0) * k ** 2 + 8.0 * h * k + (2.0 * g - 14.0 * h - 4.0) * h_cap - 8.0 * h + 4.0 * g - 6.0
    ccoef = (6.0 * h + 2.0 * g - 2.0) * k ** 2 + (4.0 * h - 4.0 * g + 6.0) * k + (2.0 * h - 6.0) * h_cap + 4.0 * h
    dcoef = (2.0 * h + 6.0) * k ** 2 - 4.0 * h * k
    sigma_sq = (acoef * big_n ** 3 + bcoef * big_n ** 2 + ccoef * big_n + dcoef) / (
        (big_n - 1.0) * (big_n - 2.0) * (big_n - 3.0)
    )
    standardized = (stat - (k - 1.0)) / math.sqrt(sigma_sq)
    p, clamped = _ad_p_value(standardized)
    return TestResult(
        statistic=stat, p_value=p, n1=n1, n2=n2, method="ad",
        approximate=min(n1, n2) < _MIN_EXACT_N, clamped=clamped,
    )


def fold_diagnostics(ds, plan, blocks, target: str) -> list[dict]:
    """Per-fold separation diagnostics.

    For each fold: KS and AD between the fold's target values and everything
    else, plus nearest-neighbor distances from the fold's blocks to the rest.
    """
    y = ds.target_vector(target)
    labeled = np.isfinite(y)
    folds = plan.fold_of_samples(ds.ids())
    by_id = {b.block_id: b for b in blocks}

    rows = []
    for f in range(plan.k):
        in_fold = labeled & (folds == f)
        out_fold = labeled & (folds != f)
        ks = ks_two_sample(y[in_fold], y[out_fold])
        ad = ad_two_sample(y[in_fold], y[out_fold])
        fold_blocks = [by_id[bid] for bid, ff in plan.block_to_fold.items() if ff == f]
        rest_blocks = [by_id[bid] for bid, ff in plan.block_to_fold.items() if ff != f]
        nn = nn_distance_report(fold_blocks, rest_blocks) if fold_blocks and rest_blocks else None
        rows.append({
            "fold": f,
            "target": target,
            "n_fold": int(in_fold.sum()),
            "n_rest": int(out_fold.sum()),
            "ks": ks.to_dict(),
            "ad": ad.to_dict(),
            "nn": nn.to_dict() if nn is not None else None,
        })
    return rows
