"""Agreement and accuracy metric suite with stratified disaggregation.

All moments are population (1/n) moments and the quantile convention is
linear interpolation between order statistics, so every number here matches a
direct evaluation of the defining formulas.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

logger = logging.getLogger(__name__)

UNSTABLE_FLOOR = 10  # strata below this sample count yield unreliable metrics

METRIC_COLUMNS = ("rmse", "mae", "ccc_log1p", "willmott_d15", "rpiq", "bias", "nrmse_minmax")


def _aligned(y, yhat):
    y = np.asarray(y, dtype=np.float64)
    yhat = np.asarray(yhat, dtype=np.float64)
    if y.shape != yhat.shape or y.ndim != 1:
        raise ValueError("y and yhat must be 1-d arrays of equal length")
    if y.size == 0:
        raise ValueError("empty input")
    if not (np.isfinite(y).all() and np.isfinite(yhat).all()):
        raise ValueError("inputs must be finite")
    return y, yhat


def _transform(values: np.ndarray, transform: str) -> np.ndarray:
    if transform == "identity":
        return values
    if transform == "log1p":
        if np.any(values <= -1.0):
            raise ValueError("log1p transform requires all values > -1")
        return np.log1p(values)
    raise ValueError(f"unknown transform {transform!r}")


def rmse(y, yhat) -> float:
    y, yhat = _aligned(y, yhat)
    d = y - yhat
    return float(np.sqrt(np.mean(d * d)))


def mae(y, yhat) -> float:
    y, yhat = _aligned(y, yhat)
    return float(np.mean(np.abs(y - yhat)))


def ccc(y, yhat, transform: str = "identity") -> float:
    """Concordance correlation: 2*cov / (var_y + var_yhat + (mean gap)^2)."""
    y, yhat = _aligned(y, yhat)
    if y.size < 2:
        raise ValueError("ccc needs at least 2 points")
    y = _transform(y, transform)
    yhat = _transform(yhat, transform)
    my, mp = float(np.mean(y)), float(np.mean(yhat))
    vy = float(np.mean((y - my) ** 2))
    vp = float(np.mean((yhat - mp) ** 2))
    cov = float(np.mean((y - my) * (yhat - mp)))
    if vy == 0.0 and vp == 0.0:
        raise ValueError("ccc undefined: zero variance in both vectors")
    if vy == 0.0 or vp == 0.0:
        logger.warning("ccc: one vector has zero variance; returning 0 by continuity")
        return 0.0
    return float(2.0 * cov / (vy + vp + (my - mp) ** 2))


def willmott_d(y, yhat, p: float = 1.5) -> float:
    """Bounded agreement index: 1 - sum|e|^p / sum(|yhat-ybar|+|y-ybar|)^p."""
    y, yhat = _aligned(y, yhat)
    if y.size < 2:
        raise ValueError("willmott_d needs at least 2 points")
    ybar = float(np.mean(y))
    num = float(np.sum(np.abs(y - yhat) ** p))
    den = float(np.sum((np.abs(yhat - ybar) + np.abs(y - ybar)) ** p))
    if den == 0.0:
        if num == 0.0:
            logger.warning("willmott_d: degenerate perfect agreement (constant y == yhat)")
            return 1.0
        raise ValueError("willmott_d denominator is zero")
    return float(1.0 - num / den)


def rpiq(y, yhat, transform: str = "log1p") -> float:
    """IQR(y) / RMSE on the (optionally transformed) scale."""
    y, yhat = _aligned(y, yhat)
    if y.size < 4:
        raise ValueError("rpiq needs at least 4 points")
    ty = _transform(y, transform)
    tp = _transform(yhat, transform)
    e = rmse(ty, tp)
    iqr = float(np.quantile(ty, 0.75) - np.quantile(ty, 0.25))
    if e == 0.0:
        logger.warning("rpiq: zero RMSE; reporting inf sentinel")
        return math.inf
    return iqr / e


def bias(y, yhat) -> float:
    """mean(yhat) - mean(y); negative means underestimation."""
    y, yhat = _aligned(y, yhat)
    return float(np.mean(yhat) - np.mean(y))


def nrmse_minmax(y, yhat) -> float:
    y, yhat = _aligned(y, yhat)
    spread = float(np.max(y) - np.min(y))
    if spread == 0.0:
        raise ValueError("nrmse_minmax undefined for constant y")
    return rmse(y, yhat) / spread


@dataclass(frozen=True)
class MetricsRow:
    """One line of the metric table for a target/scenario/group combination."""

    target: str
    scenario: str            # e.g. "oof", "test"
    dimension: str           # "all", "aez", "aez_super", "depth", "fold"
    group: str               # "all" or the stratum value
    n: int
    rmse: float | None
    mae: float | None
    ccc_log1p: float | None
    willmott_d15: float | None
    rpiq: float | None
    bias: float | None
    nrmse_minmax: float | None
    unstable: bool = False
    flags: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        out = {
            "target": self.target,
            "scenario": self.scenario,
            "dimension": self.dimension,
            "group": self.group,
            "n": self.n,
            "unstable": self.unstable,
            "flags": list(self.flags),
        }
        for c in METRIC_COLUMNS:
            v = getattr(self, c)
            out[c] = None if v is None or not math.isfinite(v) else v
        return out


def _compute_row(y, yhat, *, target, scenario, dimension, group,
                 min_n=UNSTABLE_FLOOR, rpiq_transform="log1p") -> MetricsRow:
    n = int(y.size)
    flags = []

    def attempt(fn, *args, **kw):
        try:
            return fn(*args, **kw)
        except ValueError as exc:
            flags.append(f"{fn.__name__}: {exc}")
            return None

    r_rmse = attempt(rmse, y, yhat)
    r_mae = attempt(mae, y, yhat)
    r_ccc = attempt(ccc, y, yhat, transform="log1p") if n >= 2 else None
    r_d = attempt(willmott_d, y, yhat) if n >= 2 else None
    r_rpiq = attempt(rpiq, y, yhat, transform=rpiq_transform) if n >= 4 else None
    if r_rpiq is not None and math.isinf(r_rpiq):
        flags.append("rpiq: infinite (zero rmse)")
        r_rpiq = None
    r_bias = attempt(bias, y, yhat)
    r_nrmse = attempt(nrmse_minmax, y, yhat)
    return MetricsRow(
        target=target, scenario=scenario, dimension=dimension, group=str(group),
        n=n, rmse=r_rmse, mae=r_mae, ccc_log1p=r_ccc, willmott_d15=r_d,
        rpiq=r_rpiq, bias=r_bias, nrmse_minmax=r_nrmse,
        unstable=n < min_n, flags=tuple(flags),
    )


def evaluate_stratified(
    y,
    yhat,
    strata: Mapping[str, Sequence] | None = None,
    *,
    target: str = "",
    scenario: str = "",
    min_n: int = UNSTABLE_FLOOR,
    rpiq_transform: str = "log1p",
) -> list[MetricsRow]:
    """Pooled metrics plus one row per stratum value of each dimension.

    ``strata`` maps a dimension name ("aez", "depth", "fold", ...) to per-sample
    labels.  Rows with fewer than ``min_n`` samples are flagged unstable.
    """
    y, yhat = _aligned(y, yhat)
    rows = [_compute_row(y, yhat, target=target, scenario=scenario,
                         dimension="all", group="all", min_n=min_n,
                         rpiq_transform=rpiq_transform)]
    for dim in sorted(strata or {}):
        labels = np.asarray(strata[dim], dtype=object)
        if labels.shape != y.shape:
            raise ValueError(f"stratum dimension {dim!r} length mismatch")
        for value in sorted(set(labels.tolist()), key=str):
            mask = labels == value
            rows.append(_compute_row(
                y[mask], yhat[mask], target=target, scenario=scenario,
                dimension=dim, group=value, min_n=min_n,
                rpiq_transform=rpiq_transform,
            ))
    return rows


def superclass_aggregate(
    rows: Sequence[MetricsRow],
    mapping: Mapping[str, str],
    *,
    dimension: str = "aez",
    out_dimension: str = "aez_super",
) -> list[MetricsRow]:
    """Sample-count-weighted mean of per-group metric values, grouped by a
    super-class map.  Unstable rows are excluded from the aggregation."""
    groups: dict[str, list[MetricsRow]] = {}
    for row in rows:
        if row.dimension != dimension or row.unstable:
            continue
        sup = mapping.get(row.group)
        if sup is None:
            continue
        groups.setdefault(sup, []).append(row)

    out = []
    for sup in sorted(groups):
        members = groups[sup]
        n_total = sum(r.n for r in members)
        values = {}
        for col in METRIC_COLUMNS:
            pairs = [(r.n, getattr(r, col)) for r in members if getattr(r, col) is not None]
            w = sum(n for n, _ in pairs)
            values[col] = sum(n * v for n, v in pairs) / w if w else None
        proto = members[0]
        out.append(MetricsRow(
            target=proto.target, scenario=proto.scenario,
            dimension=out_dimension, group=sup, n=n_total,
            unstable=False, flags=("weighted-mean aggregate",),
            **values,
        ))
    return out


def rows_to_table(rows: Sequence[MetricsRow], sep: str = ",") -> str:
    """Delimited text table in the canonical column order."""
    header = ["target", "scenario", "dimension", "group"] + list(METRIC_COLUMNS) + ["n", "unstable"]
    lines = [sep.join(header)]
    for r in rows:
        d = r.to_dict()
        cells = [d["target"], d["scenario"], d["dimension"], d["group"]]
        for c in METRIC_COLUMNS:
            v = d[c]
            cells.append("" if v is None else f"{v:.6g}")
        cells.append(str(d["n"]))
        cells.append(str(d["unstable"]).lower())
        lines.append(sep.join(cells))
    return "\n".join(lines) + "\n"
