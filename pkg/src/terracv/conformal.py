"""Split-conformal prediction intervals with optional per-stratum calibration.

The half-width is the ceil((n+1)*(1-alpha))-th order statistic of the
calibration absolute residuals (finite-sample-valid rule, not an interpolated
quantile).  Coverage and sharpness are reported as PICP, MPIW and PINAW.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

logger = logging.getLogger(__name__)


def _order_statistic_index(n: int, alpha: float) -> int:
    # ceil((n+1)*(1-alpha)) computed with a guard against float droop
    raw = (n + 1) * (1.0 - alpha)
    return int(math.ceil(raw - 1e-12))


def _quantile_with_info(residuals: np.ndarray, alpha: float) -> tuple[float, bool]:
    n = residuals.size
    idx = _order_statistic_index(n, alpha)
    ordered = np.sort(residuals)
    if idx >= n:
        return float(ordered[-1]), True
    return float(ordered[idx - 1]), False


def calibrate(residuals, alpha: float = 0.10) -> float:
    """Half-width from calibration residuals.

    Residuals must be non-negative.  When the order-statistic index lands on
    or beyond the sample maximum the half-width is the max residual and a
    diagnostic is logged (the finite-sample guarantee is weakened; supply at
    least ceil(1/alpha) points).
    """
    residuals = np.asarray(residuals, dtype=np.float64)
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must be in (0, 1)")
    if residuals.size < 2:
        raise ValueError("too few calibration points")
    if not np.isfinite(residuals).all() or np.any(residuals < 0):
        raise ValueError("residuals must be finite and non-negative")
    q, at_max = _quantile_with_info(residuals, alpha)
    if at_max:
        logger.warning(
            "conformal half-width hit the sample maximum (n=%d, alpha=%.3g); "
            "supply at least %d calibration points", residuals.size, alpha,
            int(math.ceil(1.0 / alpha)),
        )
    return q


@dataclass(frozen=True)
class ConformalModel:
    """Calibrated half-widths: one global, optionally one per stratum."""

    alpha: float
    global_q: float
    per_stratum_q: Mapping[str, float] = field(default_factory=dict)
    min_stratum_count: int = 100
    calibration_n: Mapping[str, int] = field(default_factory=dict)
    global_n: int = 0
    at_max: Mapping[str, bool] = field(default_factory=dict)
    mode: str = "global"  # "global" | "stratified"

    def q_for(self, stratum: str | None = None) -> float:
        if stratum is None:
            return self.global_q
        return self.per_stratum_q.get(stratum, self.global_q)

    def to_dict(self) -> dict:
        return {
            "alpha": self.alpha,
            "mode": self.mode,
            "global_q": self.global_q,
            "global_n": self.global_n,
            "min_stratum_count": self.min_stratum_count,
            "per_stratum_q": dict(sorted(self.per_stratum_q.items())),
            "calibration_n": dict(sorted(self.calibration_n.items())),
            "at_max": dict(sorted(self.at_max.items())),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "ConformalModel":
        return cls(
            alpha=float(d["alpha"]),
            global_q=float(d["global_q"]),
            per_stratum_q={k: float(v) for k, v in d.get("per_stratum_q", {}).items()},
            min_stratum_count=int(d.get("min_stratum_count", 100)),
            calibration_n={k: int(v) for k, v in d.get("calibration_n", {}).items()},
            global_n=int(d.get("global_n", 0)),
            at_max={k: bool(v) for k, v in d.get("at_max", {}).items()},
            mode=d.get("mode", "global"),
        )


def calibrate_stratified(
    residuals,
    strata: Sequence,
    alpha: float = 0.10,
    min_count: int = 100,
) -> ConformalModel:
    """Per-stratum half-widths where counts permit, global fallback otherwise."""
    residuals = np.asarray(residuals, dtype=np.float64)
    labels = np.asarray(strata, dtype=object)
    if residuals.shape != labels.shape:
        raise ValueError("residuals and strata must align")
    global_q = calibrate(residuals, alpha)
    _, global_at_max = _quantile_with_info(residuals, alpha)

    per_q: dict[str, float] = {}
    counts: dict[str, int] = {}
    at_max: dict[str, bool] = {"__global__": global_at_max}
    for label in sorted(set(labels.tolist()), key=str):
        mask = labels == label
        n = int(mask.sum())
        counts[str(label)] = n
        if n >= min_count:
            q, hit = _quantile_with_info(residuals[mask], alpha)
            per_q[str(label)] = q
            at_max[str(label)] = hit
        else:
            per_q[str(label)] = global_q
            logger.info("stratum %s has %d < %d calibration points; global fallback",
                        label, n, min_count)
    return ConformalModel(
        alpha=alpha, global_q=global_q, per_stratum_q=per_q,
        min_stratum_count=min_count, calibration_n=counts,
        global_n=int(residuals.size), at_max=at_max, mode="stratified",
    )


def predict_interval(
    yhat,
    model: ConformalModel,
    strata: Sequence | None = None,
    *,
    floor_zero: bool = False,
) -> np.ndarray:
    """Symmetric intervals (n, 2) of half-width q(stratum).

    ``floor_zero`` clamps lower bounds at 0 for physically non-negative
    targets (breaks exact symmetry; flagged by the caller's report).
    """
    yhat = np.atleast_1d(np.asarray(yhat, dtype=np.float64))
    if strata is None:
        q = np.full(yhat.shape, model.global_q)
    else:
        labels = np.asarray(strata, dtype=object)
        if labels.shape != yhat.shape:
            raise ValueError("strata must align with predictions")
        q = np.array([model.q_for(str(s)) for s in labels], dtype=np.float64)
    lower = yhat - q
    upper = yhat + q
    if floor_zero:
        lower = np.maximum(lower, 0.0)
    return np.column_stack([lower, upper])


@dataclass(frozen=True)
class IntervalReport:
    """Coverage/sharpness for one evaluation group."""

    stratum: str
    n: int
    picp: float
    mpiw: float
    pinaw: float | None
    mpiw_rank: float | None = None
    pinaw_rank: float | None = None
    avg_rank: float | None = None
    flags: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {
            "stratum": self.stratum,
            "n": self.n,
            "picp": self.picp,
            "mpiw": self.mpiw,
            "pinaw": self.pinaw,
            "mpiw_rank": self.mpiw_rank,
            "pinaw_rank": self.pinaw_rank,
            "avg_rank": self.avg_rank,
            "flags": list(self.flags),
        }


def _rank_ascending(values: list[float]) -> list[float]:
    # average rank for ties, 1-based
    order = np.argsort(values, kind="stable")
    ranks = np.empty(len(values), dtype=np.float64)
    i = 0
    pos = 1
    while i < len(values):
        j = i
        while j + 1 < len(values) and values[order[j + 1]] == values[order[i]]:
            j += 1
        avg = (pos + pos + (j - i)) / 2.0
        for t in range(i, j + 1):
            ranks[order[t]] = avg
        pos += j - i + 1
        i = j + 1
    return ranks.tolist()


def _one_report(y, intervals, stratum: str) -> IntervalReport:
    flags = []
    inside = (y >= intervals[:, 0]) & (y <= intervals[:, 1])
    widths = intervals[:, 1] - intervals[:, 0]
    picp = float(np.mean(inside))
    mpiw = float(np.mean(widths))
    spread = float(np.max(y) - np.min(y))
    if spread == 0.0:
        pinaw = None
        flags.append("pinaw undefined: constant targets")
    else:
        pinaw = mpiw / spread
    return IntervalReport(stratum=stratum, n=int(y.size), picp=picp, mpiw=mpiw,
                          pinaw=pinaw, flags=tuple(flags))


def evaluate_intervals(y, intervals, strata: Sequence | None = None) -> list[IntervalReport]:
    """PICP/MPIW/PINAW pooled and (optionally) per stratum.

    Per-stratum rows carry ranks by MPIW and PINAW (ascending; lower is
    better) plus their average.  PINAW uses each row's own target range.
    """
    y = np.asarray(y, dtype=np.float64)
    intervals = np.asarray(intervals, dtype=np.float64)
    if intervals.shape != (y.size, 2):
        raise ValueError("intervals must have shape (n, 2)")
    if y.size == 0:
        raise ValueError("empty input")
    if np.any(intervals[:, 0] > intervals[:, 1]):
        raise ValueError("interval lower bounds exceed upper bounds")

    pooled = _one_report(y, intervals, "all")
    if pooled.pinaw is None:
        raise ValueError("pinaw undefined: constant evaluation targets")
    reports = [pooled]
    if strata is not None:
        labels = np.asarray(strata, dtype=object)
        if labels.shape != y.shape:
            raise ValueError("strata must align with y")
        rows = []
        for label in sorted(set(labels.tolist()), key=str):
            mask = labels == label
            rows.append(_one_report(y[mask], intervals[mask], str(label)))
        mpiw_ranks = _rank_ascending([r.mpiw for r in rows])
        with_pinaw = [r for r in rows if r.pinaw is not None]
        pinaw_ranks_list = _rank_ascending([r.pinaw for r in with_pinaw])
        pinaw_ranks = {id(r): pr for r, pr in zip(with_pinaw, pinaw_ranks_list)}
        for r, mr in zip(rows, mpiw_ranks):
            pr = pinaw_ranks.get(id(r))
            avg = (mr + pr) / 2.0 if pr is not None else None
            reports.append(IntervalReport(
                stratum=r.stratum, n=r.n, picp=r.picp, mpiw=r.mpiw, pinaw=r.pinaw,
                mpiw_rank=mr, pinaw_rank=pr, avg_rank=avg, flags=r.flags,
            ))
    return reports
