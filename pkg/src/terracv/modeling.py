"""Per-target modeling pipeline and stratified affine calibration.

Each target gets its own feature subset (two-stage selection), an optional
log1p transform on the response, a boosted-tree fit, and an affine
per-stratum correction estimated on held-out predictions.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .data import is_nonnegative_target
from .featsel import FeatSelConfig, StabilityReport, two_stage_select
from .gbrt import GBRTParams, GradientBoostedTrees, fit_gbrt

logger = logging.getLogger(__name__)

MODEL_FILE_VERSION = "1.0.0"

TRANSFORMS = ("identity", "log1p")


@dataclass(frozen=True)
class StratumCalibrator:
    """Affine correction yhat' = a + b*yhat per stratum, with a global fallback."""

    coefficients: Mapping[str, tuple[float, float]]
    global_pair: tuple[float, float]
    min_count: int = 50
    notes: tuple[str, ...] = ()

    def pair_for(self, stratum: str | None) -> tuple[float, float]:
        if stratum is None:
            return self.global_pair
        return self.coefficients.get(str(stratum), self.global_pair)

    def correct(self, yhat, strata: Sequence | None = None) -> np.ndarray:
        yhat = np.asarray(yhat, dtype=np.float64)
        if strata is None:
            a, b = self.global_pair
            return a + b * yhat
        labels = np.asarray(strata, dtype=object)
        if labels.shape != yhat.shape:
            raise ValueError("strata must align with predictions")
        out = np.empty_like(yhat)
        for label in set(labels.tolist()):
            a, b = self.pair_for(label)
            mask = labels == label
            out[mask] = a + b * yhat[mask]
        return out

    def to_dict(self) -> dict:
        return {
            "global_pair": list(self.global_pair),
            "min_count": self.min_count,
            "coefficients": {k: list(v) for k, v in sorted(self.coefficients.items())},
            "notes": list(self.notes),
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "StratumCalibrator":
        return cls(
            coefficients={k: (float(v[0]), float(v[1])) for k, v in d["coefficients"].items()},
            global_pair=(float(d["global_pair"][0]), float(d["global_pair"][1])),
            min_count=int(d.get("min_count", 50)),
            notes=tuple(d.get("notes", ())),
        )


def _ols_pair(pred: np.ndarray, obs: np.ndarray) -> tuple[float, float] | None:
    """Least-squares (a, b) for obs ~ a + b*pred; None when pred is constant."""
    mp = float(np.mean(pred))
    mo = float(np.mean(obs))
    vp = float(np.mean((pred - mp) ** 2))
    if vp == 0.0:
        return None
    cov = float(np.mean((pred - mp) * (obs - mo)))
    b = cov / vp
    a = mo - b * mp
    return a, b


def fit_stratum_calibration(
    predictions,
    observations,
    strata: Sequence,
    min_count: int = 50,
) -> StratumCalibrator:
    """Per-stratum OLS affine fit of observations on predictions.

    Strata with fewer than ``min_count`` points use the global pair; a
    zero-variance stratum gets the identity correction with a note.
    """
    pred = np.asarray(predictions, dtype=np.float64)
    obs = np.asarray(observations, dtype=np.float64)
    labels = np.asarray(strata, dtype=object)
    if not (pred.shape == obs.shape == labels.shape):
        raise ValueError("predictions, observations and strata must align")
    if pred.size < 2:
        raise ValueError("need at least 2 points to calibrate")

    notes: list[str] = []
    global_pair = _ols_pair(pred, obs)
    if global_pair is None:
        global_pair = (0.0, 1.0)
        notes.append("global: zero-variance predictions; identity correction")
        logger.warning("calibration: global predictions have zero variance")

    coefficients: dict[str, tuple[float, float]] = {}
    for label in sorted(set(labels.tolist()), key=str):
        mask = labels == label
        n = int(mask.sum())
        if n < min_count:
            notes.append(f"{label}: n={n} below floor {min_count}; global fallback")
            continue
        pair = _ols_pair(pred[mask], obs[mask])
        if pair is None:
            coefficients[str(label)] = (0.0, 1.0)
            notes.append(f"{label}: zero-variance predictions; identity correction")
            logger.warning("calibration: stratum %s has zero-variance predictions", label)
        else:
            coefficients[str(label)] = pair
    return StratumCalibrator(
        coefficients=coefficients, global_pair=global_pair,
        min_count=min_count, notes=tuple(notes),
    )


@dataclass
class PipelinePredictor:
    """Fitted per-target pipeline: feature subset -> GBRT -> inverse transform
    -> optional floor -> optional per-stratum correction."""

    target: str
    feature_indices: tuple[int, ...]
    feature_names: tuple[str, ...]
    transform: str
    floor_zero: bool
    model: GradientBoostedTrees
    calibrator: StratumCalibrator | None = None
    stability: StabilityReport | None = None

    def predict(self, X, strata: Sequence | None = None) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        Z = X[:, self.feature_indices]
        raw = self.model.predict(Z)
        if self.transform == "log1p":
            raw = np.expm1(raw)
        if self.calibrator is not None:
            raw = self.calibrator.correct(raw, strata)
        if self.floor_zero:
            raw = np.maximum(raw, 0.0)
        return raw

    def with_calibrator(self, calibrator: StratumCalibrator) -> "PipelinePredictor":
        return PipelinePredictor(
            target=self.target, feature_indices=self.feature_indices,
            feature_names=self.feature_names, transform=self.transform,
            floor_zero=self.floor_zero, model=self.model,
            calibrator=calibrator, stability=self.stability,
        )

    def to_dict(self) -> dict:
        return {
            "version": MODEL_FILE_VERSION,
            "kind": "pipeline",
            "target": self.target,
            "feature_indices": list(self.feature_indices),
            "feature_names": list(self.feature_names),
            "transform": self.transform,
            "floor_zero": self.floor_zero,
            "model": self.model.to_dict(),
            "calibrator": self.calibrator.to_dict() if self.calibrator else None,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "PipelinePredictor":
        major = str(d.get("version", "")).split(".")[0]
        if major != MODEL_FILE_VERSION.split(".")[0]:
            raise ValueError(f"unsupported model file version {d.get('version')!r}")
        return cls(
            target=d["target"],
            feature_indices=tuple(int(i) for i in d["feature_indices"]),
            feature_names=tuple(d["feature_names"]),
            transform=d["transform"],
            floor_zero=bool(d["floor_zero"]),
            model=GradientBoostedTrees.from_dict(d["model"]),
            calibrator=StratumCalibrator.from_dict(d["calibrator"]) if d.get("calibrator") else None,
        )


def transform_response(y: np.ndarray, transform: str) -> np.ndarray:
    if transform == "identity":
        return y
    if transform == "log1p":
        if np.any(y <= -1.0):
            raise ValueError("log1p transform requires targets > -1")
        return np.log1p(y)
    raise ValueError(f"unknown transform {transform!r}; expected one of {TRANSFORMS}")


def fit_target_pipeline(
    ds,
    target: str,
    featsel_config: FeatSelConfig,
    params: GBRTParams,
    transform: str = "identity",
    *,
    seed: int = 0,
    min_labeled: int = 100,
    floor_zero: bool | None = None,
) -> PipelinePredictor:
    """Select features and fit the boosted model for one target.

    ``floor_zero`` defaults to whether the target name is registered as
    physically non-negative.  The calibrator is attached separately once
    held-out predictions exist.
    """
    if transform not in TRANSFORMS:
        raise ValueError(f"unknown transform {transform!r}")
    y_all = ds.target_vector(target)
    labeled = np.isfinite(y_all)
    n_labeled = int(labeled.sum())
    if n_labeled < min_labeled:
        raise ValueError(
            f"target {target!r} has {n_labeled} labeled samples; floor is {min_labeled}"
        )
    X = ds.feature_matrix()[labeled]
    y = transform_response(y_all[labeled], transform)

    report, cols = two_stage_select(X, y, featsel_config, seed,
                                    feature_names=list(ds.feature_names))
    if not cols:
        logger.warning("target %s: no features survived selection; keeping stage-1 top feature",
                       target)
        cols = [0] if not report.ranked else [list(ds.feature_names).index(report.ranked[0])]
    model = fit_gbrt(X[:, cols], y, params)
    if floor_zero is None:
        floor_zero = is_nonnegative_target(target)
    return PipelinePredictor(
        target=target,
        feature_indices=tuple(cols),
        feature_names=tuple(ds.feature_names[j] for j in cols),
        transform=transform,
        floor_zero=bool(floor_zero),
        model=model,
        stability=report,
    )
