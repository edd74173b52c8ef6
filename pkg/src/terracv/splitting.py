"""Stratified group-aware fold allocation over spatial blocks.

Blocks are indivisible: every sample of a block lands in the same fold.
Assignment is greedy largest-first, placing each block on the fold that
minimises a stratum-imbalance objective (squared deviation of per-fold
stratum counts from the proportional target, scaled by stratum size).
"""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .spatial import SpatialBlock

logger = logging.getLogger(__name__)

_SALT_FOLDS = 101
_SALT_HOLDOUT = 102
_SALT_RANDOM = 103


@dataclass(frozen=True)
class FoldPlan:
    """Block-level fold assignment with derived per-sample map and balance tables."""

    k: int
    block_to_fold: Mapping[int, int]
    sample_to_fold: Mapping[str, int]
    stratum_balance: Mapping[int, Mapping[str, int]]
    test_fraction: float | None = None
    diagnostics: Mapping = field(default_factory=dict)

    def fold_sizes(self) -> list[int]:
        sizes = [0] * self.k
        for f in self.sample_to_fold.values():
            sizes[f] += 1
        return sizes

    def fold_of_samples(self, sample_ids: Sequence[str]) -> np.ndarray:
        return np.array([self.sample_to_fold[s] for s in sample_ids], dtype=np.int64)

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "test_fraction": self.test_fraction,
            "fold_sizes": self.fold_sizes(),
            "block_to_fold": {str(b): f for b, f in sorted(self.block_to_fold.items())},
            "stratum_balance": {
                str(f): dict(sorted(self.stratum_balance[f].items()))
                for f in sorted(self.stratum_balance)
            },
            "diagnostics": dict(self.diagnostics),
        }


def _block_stratum_counts(blocks: Sequence[SpatialBlock], strata: Mapping[str, str]):
    counts = []
    for b in blocks:
        c = Counter()
        for sid in b.member_ids:
            c[strata[sid]] += 1
        counts.append(c)
    return counts


def _greedy_assign(
    blocks: Sequence[SpatialBlock],
    block_counts: Sequence[Counter],
    totals: Counter,
    bucket_targets: Sequence[Mapping[str, float]],
    order: Sequence[int],
) -> list[int]:
    """Assign blocks (in the given order) to the bucket minimising the
    post-assignment imbalance objective.  Ties go to the lowest bucket index."""
    n_buckets = len(bucket_targets)
    bucket_counts = [Counter() for _ in range(n_buckets)]
    assignment = [-1] * len(blocks)
    for bi in order:
        bc = block_counts[bi]
        best_bucket = 0
        best_delta = None
        for f in range(n_buckets):
            delta = 0.0
            for s, add in bc.items():
                tot = totals[s]
                target = bucket_targets[f][s]
                cur = bucket_counts[f][s]
                new_dev = (cur + add) - target
                old_dev = cur - target
                delta += (new_dev * new_dev - old_dev * old_dev) / tot
            if best_delta is None or delta < best_delta:
                best_delta = delta
                best_bucket = f
        assignment[bi] = best_bucket
        bucket_counts[best_bucket].update(bc)
    return assignment


def _share_deviation(stratum_balance: Mapping[int, Counter], totals: Counter) -> float:
    """Largest |per-fold stratum share - global share| in percentage points."""
    grand = sum(totals.values())
    worst = 0.0
    for f, counts in stratum_balance.items():
        fold_n = sum(counts.values())
        if fold_n == 0:
            continue
        for s, tot in totals.items():
            share = counts.get(s, 0) / fold_n
            global_share = tot / grand
            worst = max(worst, abs(share - global_share) * 100.0)
    return worst


def allocate_folds(
    blocks: Sequence[SpatialBlock],
    strata: Mapping[str, str],
    k: int,
    seed: int,
    *,
    test_fraction: float | None = None,
) -> FoldPlan:
    """Greedy balanced assignment of blocks to k folds, stratified by label."""
    blocks = list(blocks)
    if k < 2:
        raise ValueError(f"k must be >= 2, got {k}")
    if k > len(blocks):
        raise ValueError(f"k={k} exceeds the number of blocks ({len(blocks)})")

    block_counts = _block_stratum_counts(blocks, strata)
    totals = Counter()
    for c in block_counts:
        totals.update(c)
    grand = sum(totals.values())

    rng = np.random.default_rng([seed, _SALT_FOLDS])
    perm = rng.permutation(len(blocks))
    sizes = np.array([blocks[i].size() for i in perm])
    order = perm[np.argsort(-sizes, kind="stable")]

    fold_target = grand / k
    oversized = [int(blocks[i].block_id) for i in order if blocks[i].size() > 2 * fold_target]
    if oversized:
        logger.warning("blocks too large to balance (> 2x fold target): %s", oversized)

    targets = [{s: tot / k for s, tot in totals.items()} for _ in range(k)]
    assignment = _greedy_assign(blocks, block_counts, totals, targets, list(order))

    block_to_fold = {blocks[i].block_id: assignment[i] for i in range(len(blocks))}
    sample_to_fold = {}
    stratum_balance = {f: Counter() for f in range(k)}
    for i, b in enumerate(blocks):
        f = assignment[i]
        stratum_balance[f].update(block_counts[i])
        for sid in b.member_ids:
            sample_to_fold[sid] = f

    empty = [f for f in range(k) if sum(stratum_balance[f].values()) == 0]
    if empty:
        raise ValueError(f"fold(s) {empty} ended up empty; fewer usable blocks than k?")

    diagnostics = {
        "oversized_blocks": oversized,
        "max_share_deviation_pp": _share_deviation(stratum_balance, totals),
        "mode": "blocked",
    }
    return FoldPlan(
        k=k,
        block_to_fold=block_to_fold,
        sample_to_fold=sample_to_fold,
        stratum_balance={f: dict(c) for f, c in stratum_balance.items()},
        test_fraction=test_fraction,
        diagnostics=diagnostics,
    )


def split_calibration_test(
    blocks: Sequence[SpatialBlock],
    strata: Mapping[str, str],
    test_fraction: float,
    seed: int,
) -> tuple[tuple[int, ...], tuple[int, ...]]:
    """Block-level stratum-balanced holdout: (calibration ids, test ids)."""
    if not 0.0 < test_fraction < 0.5:
        raise ValueError(f"test_fraction must be in (0, 0.5), got {test_fraction}")
    blocks = list(blocks)
    if len(blocks) < 2:
        raise ValueError("need at least 2 blocks to split")

    block_counts = _block_stratum_counts(blocks, strata)
    totals = Counter()
    for c in block_counts:
        totals.update(c)

    rng = np.random.default_rng([seed, _SALT_HOLDOUT])
    perm = rng.permutation(len(blocks))
    sizes = np.array([blocks[i].size() for i in perm])
    order = perm[np.argsort(-sizes, kind="stable")]

    targets = [
        {s: tot * (1.0 - test_fraction) for s, tot in totals.items()},  # bucket 0: calibration
        {s: tot * test_fraction for s, tot in totals.items()},          # bucket 1: test
    ]
    assignment = _greedy_assign(blocks, block_counts, totals, targets, list(order))

    # Degenerate guard: both sides must hold at least one block.
    for side in (0, 1):
        if side not in assignment:
            donor = [i for i in order if assignment[i] != side][-1]
            assignment[donor] = side
            logger.warning("holdout split forced block %d to side %d", blocks[donor].block_id, side)

    cal = tuple(sorted(blocks[i].block_id for i in range(len(blocks)) if assignment[i] == 0))
    test = tuple(sorted(blocks[i].block_id for i in range(len(blocks)) if assignment[i] == 1))
    return cal, test


def random_fold_plan(sample_ids: Sequence[str], strata: Mapping[str, str], k: int, seed: int) -> FoldPlan:
    """Sample-level uniform fold assignment, ignoring spatial blocks.

    Used as the leaky baseline when comparing split modes.
    """
    if k < 2:
        raise ValueError(f"k must be >= 2, got {k}")
    n = len(sample_ids)
    if k > n:
        raise ValueError(f"k={k} exceeds the number of samples ({n})")
    rng = np.random.default_rng([seed, _SALT_RANDOM])
    perm = rng.permutation(n)
    sample_to_fold = {}
    stratum_balance = {f: Counter() for f in range(k)}
    for pos, i in enumerate(perm):
        f = pos % k
        sid = sample_ids[i]
        sample_to_fold[sid] = f
        stratum_balance[f][strata[sid]] += 1
    return FoldPlan(
        k=k,
        block_to_fold={},
        sample_to_fold=sample_to_fold,
        stratum_balance={f: dict(c) for f, c in stratum_balance.items()},
        diagnostics={"mode": "random"},
    )


class FoldTrainingError(RuntimeError):
    def __init__(self, fold: int, cause: Exception):
        super().__init__(f"trainer failed on fold {fold}: {cause}")
        self.fold = fold


def oof_predictions(
    plan: FoldPlan,
    trainer: Callable[[np.ndarray, np.ndarray], object],
    ds,
    target: str,
) -> np.ndarray:
    """Out-of-fold predictions: each labeled sample is predicted by the model
    trained on every fold except its own.  Unlabeled samples stay NaN."""
    X = ds.feature_matrix()
    y = ds.target_vector(target)
    ids = ds.ids()
    missing = [s for s in ids if s not in plan.sample_to_fold]
    if missing:
        raise ValueError(f"plan does not cover sample(s) {missing[:5]}...")
    folds = plan.fold_of_samples(ids)
    labeled = np.isfinite(y)
    out = np.full(len(ids), np.nan, dtype=np.float64)
    for f in range(plan.k):
        train_mask = labeled & (folds != f)
        pred_mask = labeled & (folds == f)
        if not pred_mask.any():
            continue
        if not train_mask.any():
            raise ValueError(f"fold {f}: no labeled training samples")
        try:
            model = trainer(X[train_mask], y[train_mask])
        except Exception as exc:
            raise FoldTrainingError(f, exc) from exc
        out[pred_mask] = model.predict(X[pred_mask])
    return out
