"""Two-stage feature-space reduction.

Stage 1 drops near-duplicate predictors by greedy pairwise-correlation
filtering in column order.  Stage 2 runs randomized stability selection: on
each of ``iterations`` row subsamples a boosted-tree importance oracle marks
its top-k features, and the per-feature marking frequency pi decides survival.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from .gbrt import GBRTParams, fit_gbrt

logger = logging.getLogger(__name__)

_SALT_STABILITY = 211


@dataclass(frozen=True)
class FeatSelConfig:
    corr_threshold: float = 0.95
    iterations: int = 64
    subsample: float = 0.5
    top_k: int = 64
    pi_threshold: float = 0.6
    oracle: GBRTParams = field(default_factory=lambda: GBRTParams(
        n_trees=25, max_depth=3, learning_rate=0.25, min_samples_leaf=5,
        subsample_rows=1.0,
    ))

    def to_dict(self) -> dict:
        return {
            "corr_threshold": self.corr_threshold,
            "iterations": self.iterations,
            "subsample": self.subsample,
            "top_k": self.top_k,
            "pi_threshold": self.pi_threshold,
            "oracle": self.oracle.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "FeatSelConfig":
        d = dict(d)
        oracle = d.pop("oracle", None)
        cfg = cls(**d) if not oracle else cls(oracle=GBRTParams.from_dict(oracle), **d)
        return cfg


@dataclass(frozen=True)
class StabilityReport:
    """Selection probabilities and stage-wise feature counts."""

    pi: Mapping[str, float]
    ranked: tuple[str, ...]                 # by pi descending, ties by column order
    selected: tuple[str, ...]               # pi >= threshold, in ranked order
    stage_counts: tuple[int, int, int]      # (initial, after stage 1, after stage 2)
    iterations: int
    threshold: float
    dropped_zero_variance: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {
            "stage_counts": list(self.stage_counts),
            "iterations": self.iterations,
            "threshold": self.threshold,
            "ranked": [[name, self.pi[name]] for name in self.ranked],
            "selected": list(self.selected),
            "dropped_zero_variance": list(self.dropped_zero_variance),
        }


@dataclass(frozen=True)
class CategoryStability:
    """Total stability mass and share per feature category."""

    totals: Mapping[str, float]
    shares: Mapping[str, float]

    def to_dict(self) -> dict:
        return {
            "totals": dict(sorted(self.totals.items())),
            "shares": dict(sorted(self.shares.items())),
        }


def correlation_filter(X, threshold: float = 0.95) -> list[int]:
    """Greedy scan in column order: drop a feature iff its absolute Pearson
    correlation with an already-kept feature exceeds the threshold.

    Zero-variance columns are dropped up front with a diagnostic (their
    correlation is undefined).
    """
    if not 0.0 < threshold <= 1.0:
        raise ValueError("threshold must be in (0, 1]")
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 2:
        raise ValueError("X must be 2-d with at least 2 rows")
    if not np.isfinite(X).all():
        raise ValueError("X must be finite")

    n, p = X.shape
    mean = X.mean(axis=0)
    sd = X.std(axis=0)
    live = np.flatnonzero(sd > 0.0)
    dead = np.flatnonzero(sd == 0.0)
    if dead.size:
        logger.warning("correlation_filter: dropped %d zero-variance column(s): %s",
                       dead.size, dead.tolist())
    if live.size == 0:
        return []

    Z = (X[:, live] - mean[live]) / sd[live]
    corr = Z.T @ Z / n

    kept_local: list[int] = []
    for j in range(live.size):
        if kept_local and np.any(np.abs(corr[j, kept_local]) > threshold):
            continue
        kept_local.append(j)
    return [int(live[j]) for j in kept_local]


def stability_select(
    X,
    y,
    iterations: int = 64,
    subsample: float = 0.5,
    top_k: int = 64,
    seed: int = 0,
    *,
    pi_threshold: float = 0.6,
    oracle_params: GBRTParams | None = None,
    feature_names: Sequence[str] | None = None,
) -> StabilityReport:
    """Randomized stability selection over a boosted-tree importance oracle.

    Each iteration draws ``subsample`` of the rows without replacement, fits
    the oracle, and marks its ``top_k`` features by total split gain (features
    with zero gain are never marked).  pi is the marking frequency; features
    with pi >= ``pi_threshold`` survive.  Iterations use independent seed
    streams, so the aggregate is order-independent.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError("X must be 2-d")
    n, p = X.shape
    if y.shape != (n,):
        raise ValueError("X and y lengths differ")
    if not np.isfinite(y).all():
        raise ValueError("y must be finite")
    if iterations < 2:
        raise ValueError("iterations must be >= 2")
    if not 0.0 < subsample <= 1.0:
        raise ValueError("subsample must be in (0, 1]")
    if top_k < 1:
        raise ValueError("top_k must be >= 1")
    if feature_names is None:
        feature_names = [f"f{j}" for j in range(p)]
    if len(feature_names) != p:
        raise ValueError("feature_names length mismatch")

    oracle = oracle_params or FeatSelConfig().oracle
    m = max(2 * oracle.min_samples_leaf, int(round(subsample * n)))
    m = min(n, m)

    marks = np.zeros(p, dtype=np.int64)
    for it in range(iterations):
        rng = np.random.default_rng([seed, _SALT_STABILITY, it])
        rows = np.sort(rng.choice(n, size=m, replace=False))
        it_seed = int(rng.integers(0, 2**31 - 1))
        try:
            model = fit_gbrt(X[rows], y[rows], replace(oracle, seed=it_seed))
        except Exception as exc:
            raise RuntimeError(f"stability selection oracle failed on iteration {it}: {exc}") from exc
        imp = model.feature_importances()
        order = np.argsort(-imp, kind="stable")
        chosen = [int(j) for j in order[:top_k] if imp[j] > 0.0]
        marks[chosen] += 1

    pi = marks / float(iterations)
    ranked_idx = sorted(range(p), key=lambda j: (-pi[j], j))
    pi_map = {feature_names[j]: float(pi[j]) for j in range(p)}
    ranked = tuple(feature_names[j] for j in ranked_idx)
    selected = tuple(feature_names[j] for j in ranked_idx if pi[j] >= pi_threshold)
    return StabilityReport(
        pi=pi_map,
        ranked=ranked,
        selected=selected,
        stage_counts=(p, p, len(selected)),
        iterations=iterations,
        threshold=pi_threshold,
    )


def two_stage_select(
    X,
    y,
    config: FeatSelConfig,
    seed: int,
    feature_names: Sequence[str] | None = None,
) -> tuple[StabilityReport, list[int]]:
    """Run stage 1 + stage 2; returns the report (with true stage counts)
    and the selected original column indices."""
    X = np.asarray(X, dtype=np.float64)
    p_initial = X.shape[1]
    if feature_names is None:
        feature_names = [f"f{j}" for j in range(p_initial)]

    kept = correlation_filter(X, config.corr_threshold)
    dropped_zero = tuple(
        feature_names[j] for j in range(p_initial)
        if j not in set(kept) and float(np.std(X[:, j])) == 0.0
    )
    stage1_names = [feature_names[j] for j in kept]
    report = stability_select(
        X[:, kept], y,
        iterations=config.iterations,
        subsample=config.subsample,
        top_k=config.top_k,
        seed=seed,
        pi_threshold=config.pi_threshold,
        oracle_params=config.oracle,
        feature_names=stage1_names,
    )
    report = StabilityReport(
        pi=report.pi,
        ranked=report.ranked,
        selected=report.selected,
        stage_counts=(p_initial, len(kept), len(report.selected)),
        iterations=report.iterations,
        threshold=report.threshold,
        dropped_zero_variance=dropped_zero,
    )
    name_to_col = {feature_names[j]: j for j in range(p_initial)}
    selected_cols = [name_to_col[name] for name in report.selected]
    return report, selected_cols


def category_stability(
    report: StabilityReport,
    categories: Mapping[str, str],
    *,
    which: str = "selected",
) -> CategoryStability:
    """Sum pi per feature category, with shares normalised to 1.

    ``which`` picks the feature set: the stage-2 ``selected`` features
    (default) or ``all`` stage-1 survivors.
    """
    if which == "selected":
        names = report.selected
    elif which == "all":
        names = report.ranked
    else:
        raise ValueError("which must be 'selected' or 'all'")

    totals: dict[str, float] = {}
    for name in names:
        cat = categories.get(name)
        if cat is None:
            raise ValueError(f"feature {name!r} has no category")
        totals[cat] = totals.get(cat, 0.0) + report.pi[name]
    grand = sum(totals.values())
    if grand <= 0.0:
        raise ValueError("no stability mass to attribute")
    shares = {cat: v / grand for cat, v in totals.items()}
    return CategoryStability(totals=totals, shares=shares)
