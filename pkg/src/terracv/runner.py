"""Batch pipeline orchestration and the versioned run report.

One run executes: ingest (or synthesize) -> block -> holdout split -> fold
allocation -> fold diagnostics -> per-target feature selection -> out-of-fold
predictions -> stratified calibration -> metrics for the conservative (OOF)
and optimistic (independent test) scenarios -> conformal intervals -> report.
Everything numeric is a pure function of config + seed.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping

import numpy as np

from . import __version__
from .conformal import ConformalModel, calibrate_stratified, evaluate_intervals, predict_interval
from .data import ColumnSchema, Dataset, is_nonnegative_target, load_dataset, summarize
from .featsel import FeatSelConfig, two_stage_select
from .gbrt import GBRTParams, fit_gbrt
from .metrics import MetricsRow, evaluate_stratified, superclass_aggregate
from .modeling import (PipelinePredictor, StratumCalibrator,
                       fit_stratum_calibration, transform_response)
from .spatial import assign_blocks, nn_distance_report
from .splitting import (FoldPlan, allocate_folds, oof_predictions,
                        random_fold_plan, split_calibration_test)
from .stats import fold_diagnostics
from .synth import SynthConfig, generate

logger = logging.getLogger(__name__)

REPORT_SCHEMA_VERSION = "1.0.0"


class ConfigError(Exception):
    """Invalid run configuration (exit code 2)."""


class DataError(Exception):
    """Input data problem (exit code 3)."""


class PipelineError(Exception):
    """Failure while executing the pipeline (exit code 4)."""


@dataclass(frozen=True)
class RunConfig:
    seed: int
    synth: SynthConfig | None = None
    input_path: str | None = None
    schema: ColumnSchema | None = None
    targets: tuple[str, ...] | None = None
    block_km: float = 100.0
    k: int = 5
    test_fraction: float = 0.25
    alpha: float = 0.10
    transform: Mapping[str, str] = field(default_factory=dict)
    featsel: FeatSelConfig = field(default_factory=FeatSelConfig)
    model: GBRTParams = field(default_factory=GBRTParams)
    calibration_stratified: bool = True
    calibration_min_count: int = 50
    conformal_stratified: bool = True
    conformal_min_count: int = 100
    metrics_mode: str = "pooled"            # "pooled" | "fold_mean"
    min_labeled: int = 100
    superclass_map: Mapping[str, str] | None = None
    emit_plots: bool = True

    _KNOWN_KEYS = {
        "seed", "synth", "input", "targets", "block_km", "k", "test_fraction",
        "alpha", "transform", "featsel", "model", "calibration", "conformal",
        "metrics_mode", "min_labeled", "superclass_map", "emit_plots",
    }

    def validate(self) -> None:
        if self.k < 2:
            raise ConfigError(f"config field 'k' must be >= 2, got {self.k}")
        if not 0.0 < self.test_fraction < 0.5:
            raise ConfigError(
                f"config field 'test_fraction' must be in (0, 0.5), got {self.test_fraction}")
        if not 0.0 < self.alpha < 1.0:
            raise ConfigError(f"config field 'alpha' must be in (0, 1), got {self.alpha}")
        if self.block_km <= 0:
            raise ConfigError(f"config field 'block_km' must be > 0, got {self.block_km}")
        if self.metrics_mode not in ("pooled", "fold_mean"):
            raise ConfigError(
                f"config field 'metrics_mode' must be 'pooled' or 'fold_mean', got {self.metrics_mode!r}")
        if (self.synth is None) == (self.input_path is None):
            raise ConfigError("config must set exactly one of 'synth' or 'input'")
        for t, tr in self.transform.items():
            if tr not in ("identity", "log1p"):
                raise ConfigError(f"config field 'transform.{t}' must be identity or log1p")

    @classmethod
    def from_dict(cls, d: Mapping) -> "RunConfig":
        unknown = set(d) - cls._KNOWN_KEYS
        if unknown:
            raise ConfigError(f"unknown config field(s): {sorted(unknown)}")
        if "seed" not in d:
            raise ConfigError("config field 'seed' is mandatory")
        try:
            synth = SynthConfig.from_dict(d["synth"]) if d.get("synth") else None
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"config field 'synth' invalid: {exc}") from exc
        input_path = None
        schema = None
        if d.get("input"):
            inp = d["input"]
            input_path = inp.get("path")
            if not input_path:
                raise ConfigError("config field 'input.path' is mandatory with 'input'")
            schema = ColumnSchema.from_dict(inp.get("schema", {}))
        try:
            featsel_cfg = FeatSelConfig.from_dict(d.get("featsel", {}))
            model_params = GBRTParams.from_dict({**GBRTParams().to_dict(), **d.get("model", {})})
            model_params.validate()
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid config: {exc}") from exc
        cal = d.get("calibration", {})
        conf = d.get("conformal", {})
        cfg = cls(
            seed=int(d["seed"]),
            synth=synth,
            input_path=input_path,
            schema=schema,
            targets=tuple(d["targets"]) if d.get("targets") else None,
            block_km=float(d.get("block_km", 100.0)),
            k=int(d.get("k", 5)),
            test_fraction=float(d.get("test_fraction", 0.25)),
            alpha=float(d.get("alpha", 0.10)),
            transform=dict(d.get("transform", {})),
            featsel=featsel_cfg,
            model=model_params,
            calibration_stratified=bool(cal.get("stratified", True)),
            calibration_min_count=int(cal.get("min_count", 50)),
            conformal_stratified=bool(conf.get("stratified", True)),
            conformal_min_count=int(conf.get("min_count", 100)),
            metrics_mode=d.get("metrics_mode", "pooled"),
            min_labeled=int(d.get("min_labeled", 100)),
            superclass_map=dict(d["superclass_map"]) if d.get("superclass_map") else None,
            emit_plots=bool(d.get("emit_plots", True)),
        )
        cfg.validate()
        return cfg

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "synth": self.synth.to_dict() if self.synth else None,
            "input": ({"path": self.input_path, "schema": self.schema.to_dict()}
                      if self.input_path else None),
            "targets": list(self.targets) if self.targets else None,
            "block_km": self.block_km,
            "k": self.k,
            "test_fraction": self.test_fraction,
            "alpha": self.alpha,
            "transform": dict(self.transform),
            "featsel": self.featsel.to_dict(),
            "model": self.model.to_dict(),
            "calibration": {"stratified": self.calibration_stratified,
                            "min_count": self.calibration_min_count},
            "conformal": {"stratified": self.conformal_stratified,
                          "min_count": self.conformal_min_count},
            "metrics_mode": self.metrics_mode,
            "min_labeled": self.min_labeled,
            "superclass_map": dict(self.superclass_map) if self.superclass_map else None,
            "emit_plots": self.emit_plots,
        }


def json_safe(obj):
    """Recursively convert to JSON-serializable types; non-finite floats to None."""
    if isinstance(obj, dict):
        return {str(k): json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [json_safe(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        obj = float(obj)
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else None
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return [json_safe(v) for v in obj.tolist()]
    return obj


def dump_report(report: dict) -> str:
    return json.dumps(json_safe(report), indent=2, sort_keys=True) + "\n"


def load_report(path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        report = json.load(fh)
    version = str(report.get("schema_version", ""))
    major = version.split(".")[0]
    if major != REPORT_SCHEMA_VERSION.split(".")[0]:
        raise ValueError(f"unsupported report schema version {version!r}")
    return report


def _run_id(config: RunConfig) -> str:
    payload = json.dumps(json_safe(config.to_dict()), sort_keys=True).encode()
    return hashlib.sha256(payload).hexdigest()[:12]


def _load_or_generate(config: RunConfig) -> tuple[Dataset, dict | None]:
    if config.synth is not None:
        ds, truth = generate(config.synth)
        return ds, truth
    if config.schema is None or not config.schema.targets:
        raise ConfigError("config field 'input.schema.targets' must map at least one target")
    try:
        ds, issues = load_dataset(config.input_path, config.schema)
    except FileNotFoundError as exc:
        raise DataError(f"input file not found: {config.input_path}") from exc
    if issues:
        logger.warning("load rejected %d row(s)", len(issues))
    return ds, None


def _subset(ds: Dataset, keep: np.ndarray) -> Dataset:
    records = tuple(r for r, k in zip(ds.records, keep) if k)
    return Dataset(records=records, feature_names=ds.feature_names,
                   target_names=ds.target_names)


@dataclass
class _TargetArtifacts:
    pipeline: PipelinePredictor
    oof: np.ndarray
    metrics_rows: dict
    interval_rows: dict
    conformal: ConformalModel


def _metric_rows_for_scenario(y, yhat, *, target, scenario, strata_maps, min_n,
                              superclass_map, mode="pooled",
                              fold_labels=None) -> list[MetricsRow]:
    rows = evaluate_stratified(y, yhat, strata_maps, target=target,
                               scenario=scenario, min_n=min_n)
    if superclass_map:
        rows.extend(superclass_aggregate(rows, superclass_map))
    if mode == "fold_mean" and fold_labels is not None:
        fold_rows = [r for r in rows if r.dimension == "fold"]
        agg = superclass_aggregate(fold_rows, {r.group: "mean_of_folds" for r in fold_rows},
                                   dimension="fold", out_dimension="fold_aggregate")
        rows.extend(agg)
    return rows


def run(config: RunConfig, out_dir: str | Path | None = None) -> dict:
    """Execute the full pipeline; returns the report dict and optionally
    writes report.json, model.json, predictions.csv and plots/."""
    config.validate()
    t_start = time.perf_counter()
    timing: dict[str, float] = {}
    run_id = _run_id(config)
    logger.info("run_id=%s stage=start", run_id)

    t0 = time.perf_counter()
    ds, truth = _load_or_generate(config)
    timing["load_s"] = time.perf_counter() - t0

    targets = list(config.targets) if config.targets else list(ds.target_names)
    unknown_targets = [t for t in targets if t not in ds.target_names]
    if unknown_targets:
        raise ConfigError(f"config field 'targets' names unknown target(s) {unknown_targets}")

    superclass_map = dict(config.superclass_map) if config.superclass_map else (
        dict(truth["superclass"]) if truth else None)

    # --- blocking and splits -------------------------------------------------
    t0 = time.perf_counter()
    blocks = assign_blocks(ds, config.block_km)
    strata_by_id = {r.id: r.stratum for r in ds.records}
    if config.k > len(blocks):
        raise DataError(
            f"k={config.k} exceeds the {len(blocks)} spatial blocks; "
            "reduce k or block_km")
    cal_ids, test_ids = split_calibration_test(blocks, strata_by_id,
                                               config.test_fraction, config.seed)
    test_set = set(test_ids)
    cal_blocks = [b for b in blocks if b.block_id not in test_set]
    test_blocks = [b for b in blocks if b.block_id in test_set]
    cal_members = {sid for b in cal_blocks for sid in b.member_ids}
    in_cal = np.array([r.id in cal_members for r in ds.records])
    ds_cal = _subset(ds, in_cal)
    ds_test = _subset(ds, ~in_cal)
    if config.k > len(cal_blocks):
        raise DataError(f"k={config.k} exceeds the {len(cal_blocks)} calibration blocks")
    plan = allocate_folds(cal_blocks, strata_by_id, config.k, config.seed,
                          test_fraction=config.test_fraction)
    timing["split_s"] = time.perf_counter() - t0
    logger.info("run_id=%s stage=split blocks=%d cal=%d test=%d", run_id,
                len(blocks), len(cal_blocks), len(test_blocks))

    # --- fold diagnostics ----------------------------------------------------
    t0 = time.perf_counter()
    diagnostics = {}
    for target in targets:
        try:
            diagnostics[target] = fold_diagnostics(ds_cal, plan, cal_blocks, target)
        except ValueError as exc:
            logger.warning("fold diagnostics skipped for %s: %s", target, exc)
            diagnostics[target] = []
    holdout_nn = nn_distance_report(test_blocks, cal_blocks).to_dict() \
        if test_blocks and cal_blocks else None
    timing["diagnostics_s"] = time.perf_counter() - t0

    # --- per-target modeling -------------------------------------------------
    artifacts: dict[str, _TargetArtifacts] = {}
    stability_reports = {}
    metrics_report: dict[str, dict] = {"oof": {}, "test": {}}
    intervals_report: dict[str, dict] = {"oof": {}, "test": {}}
    predictions_rows: list[dict] = []

    for target in targets:
        t0 = time.perf_counter()
        transform = config.transform.get(target, "identity")
        try:
            art = _fit_and_evaluate_target(
                config, ds_cal, ds_test, plan, target, transform,
                superclass_map)
        except (ConfigError, DataError):
            raise
        except ValueError as exc:
            raise PipelineError(f"target {target}: {exc}") from exc
        artifacts[target] = art
        stability_reports[target] = art.pipeline.stability.to_dict()
        metrics_report["oof"][target] = art.metrics_rows["oof"]
        metrics_report["test"][target] = art.metrics_rows["test"]
        intervals_report["oof"][target] = art.interval_rows["oof"]
        intervals_report["test"][target] = art.interval_rows["test"]
        timing[f"target_{target}_s"] = time.perf_counter() - t0
        logger.info("run_id=%s stage=target target=%s done", run_id, target)

        y_cal = ds_cal.target_vector(target)
        strata_cal = ds_cal.strata()
        folds_cal = plan.fold_of_samples(ds_cal.ids())
        for i, rec in enumerate(ds_cal.records):
            if math.isfinite(y_cal[i]):
                predictions_rows.append({
                    "id": rec.id, "target": target, "scenario": "oof",
                    "y": y_cal[i], "yhat": art.oof[i],
                    "stratum": strata_cal[i], "depth": rec.depth_class.token,
                    "fold": int(folds_cal[i]),
                })
        y_test = ds_test.target_vector(target)
        test_pred = art.pipeline.predict(ds_test.feature_matrix(), ds_test.strata())
        for i, rec in enumerate(ds_test.records):
            if math.isfinite(y_test[i]):
                predictions_rows.append({
                    "id": rec.id, "target": target, "scenario": "test",
                    "y": y_test[i], "yhat": float(test_pred[i]),
                    "stratum": rec.stratum, "depth": rec.depth_class.token,
                    "fold": -1,
                })

    timing["total_s"] = time.perf_counter() - t_start
    report = {
        "schema_version": REPORT_SCHEMA_VERSION,
        "tool_version": __version__,
        "run_id": run_id,
        "mode": "blocked",
        "config": config.to_dict(),
        "dataset_summary": summarize(ds),
        "blocks": {
            "n_blocks": len(blocks),
            "block_km": config.block_km,
            "sizes": sorted(b.size() for b in blocks),
            "n_calibration_blocks": len(cal_blocks),
            "n_test_blocks": len(test_blocks),
            "holdout_nn": holdout_nn,
        },
        "fold_plan": plan.to_dict(),
        "fold_diagnostics": diagnostics,
        "stability": stability_reports,
        "metrics": {
            "mode": config.metrics_mode,
            "oof": {t: [r.to_dict() for r in rows] for t, rows in metrics_report["oof"].items()},
            "test": {t: [r.to_dict() for r in rows] for t, rows in metrics_report["test"].items()},
        },
        "intervals": {
            "calibration_source": "oof_residuals",
            "oof": intervals_report["oof"],
            "test": intervals_report["test"],
            "conformal_models": {t: artifacts[t].conformal.to_dict() for t in targets},
        },
        "timing": timing,
    }

    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        report["files"] = {"predictions": "predictions.csv", "model": "model.json"}
        (out / "report.json").write_text(dump_report(report), encoding="utf-8")
        model_payload = {
            "version": REPORT_SCHEMA_VERSION,
            "run_id": run_id,
            "targets": {t: artifacts[t].pipeline.to_dict() for t in targets},
            "conformal": {t: artifacts[t].conformal.to_dict() for t in targets},
        }
        (out / "model.json").write_text(dump_report(model_payload), encoding="utf-8")
        _write_predictions(out / "predictions.csv", predictions_rows)
        if config.emit_plots:
            from .plots import emit_plots
            emit_plots(report, out / "plots", predictions=predictions_rows)
    return report


def _fit_and_evaluate_target(config, ds_cal, ds_test, plan, target, transform,
                             superclass_map) -> _TargetArtifacts:
    from .modeling import fit_target_pipeline

    pipeline = fit_target_pipeline(
        ds_cal, target, config.featsel, config.model, transform,
        seed=config.seed, min_labeled=config.min_labeled)

    cols = list(pipeline.feature_indices)
    floor_zero = pipeline.floor_zero

    def trainer(X, y):
        ty = transform_response(y, transform)
        model = fit_gbrt(X[:, cols], ty, config.model)

        class _Wrapped:
            def predict(self, Xq):
                raw = model.predict(np.asarray(Xq)[:, cols])
                if transform == "log1p":
                    raw = np.expm1(raw)
                if floor_zero:
                    raw = np.maximum(raw, 0.0)
                return raw

        return _Wrapped()

    oof = oof_predictions(plan, trainer, ds_cal, target)

    y_cal = ds_cal.target_vector(target)
    labeled = np.isfinite(y_cal)
    strata_cal = ds_cal.strata()
    if config.calibration_stratified:
        calibrator = fit_stratum_calibration(
            oof[labeled], y_cal[labeled], strata_cal[labeled],
            min_count=config.calibration_min_count)
        oof_corrected = oof.copy()
        oof_corrected[labeled] = calibrator.correct(oof[labeled], strata_cal[labeled])
        if floor_zero:
            oof_corrected[labeled] = np.maximum(oof_corrected[labeled], 0.0)
        pipeline = pipeline.with_calibrator(calibrator)
    else:
        oof_corrected = oof

    folds = plan.fold_of_samples(ds_cal.ids())
    depth_cal = ds_cal.depth_tokens()
    strata_maps_oof = {
        "aez": strata_cal[labeled],
        "depth": depth_cal[labeled],
        "fold": folds[labeled].astype(str),
    }
    rows_oof = _metric_rows_for_scenario(
        y_cal[labeled], oof_corrected[labeled], target=target, scenario="oof",
        strata_maps=strata_maps_oof, min_n=10, superclass_map=superclass_map,
        mode=config.metrics_mode, fold_labels=folds[labeled])

    # independent test scenario: the full-calibration model
    y_test = ds_test.target_vector(target)
    test_labeled = np.isfinite(y_test)
    strata_test = ds_test.strata()
    test_pred = pipeline.predict(ds_test.feature_matrix(), strata_test)
    rows_test = []
    if test_labeled.sum() >= 2:
        strata_maps_test = {
            "aez": strata_test[test_labeled],
            "depth": ds_test.depth_tokens()[test_labeled],
        }
        rows_test = _metric_rows_for_scenario(
            y_test[test_labeled], test_pred[test_labeled], target=target,
            scenario="test", strata_maps=strata_maps_test, min_n=10,
            superclass_map=superclass_map)

    # conformal intervals calibrated on OOF absolute residuals
    residuals = np.abs(y_cal[labeled] - oof_corrected[labeled])
    if config.conformal_stratified:
        conformal_model = calibrate_stratified(
            residuals, strata_cal[labeled], config.alpha,
            min_count=config.conformal_min_count)
    else:
        from .conformal import calibrate
        conformal_model = ConformalModel(
            alpha=config.alpha, global_q=calibrate(residuals, config.alpha),
            global_n=int(labeled.sum()), mode="global")

    iv_oof = predict_interval(oof_corrected[labeled], conformal_model,
                              strata_cal[labeled], floor_zero=floor_zero)
    interval_rows_oof = [r.to_dict() for r in evaluate_intervals(
        y_cal[labeled], iv_oof, strata_cal[labeled])]
    interval_rows_test = []
    if test_labeled.sum() >= 2:
        iv_test = predict_interval(test_pred[test_labeled], conformal_model,
                                   strata_test[test_labeled], floor_zero=floor_zero)
        interval_rows_test = [r.to_dict() for r in evaluate_intervals(
            y_test[test_labeled], iv_test, strata_test[test_labeled])]

    return _TargetArtifacts(
        pipeline=pipeline,
        oof=oof_corrected,
        metrics_rows={"oof": rows_oof, "test": rows_test},
        interval_rows={"oof": interval_rows_oof, "test": interval_rows_test},
        conformal=conformal_model,
    )


def _write_predictions(path: Path, rows: list[dict]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id", "target", "scenario", "y", "yhat", "stratum", "depth", "fold"])
        for r in rows:
            writer.writerow([r["id"], r["target"], r["scenario"], repr(float(r["y"])),
                             repr(float(r["yhat"])), r["stratum"], r["depth"], r["fold"]])


def compare_cv_modes(config: RunConfig) -> dict:
    """Blocked-fold vs random-fold OOF metrics with identical models.

    Feature selection is skipped: both modes model every covariate, so the
    delta isolates the split mode.
    """
    config.validate()
    ds, truth = _load_or_generate(config)
    targets = list(config.targets) if config.targets else list(ds.target_names)
    strata_by_id = {r.id: r.stratum for r in ds.records}

    blocks = assign_blocks(ds, config.block_km)
    if config.k > len(blocks):
        raise DataError(f"k={config.k} exceeds the {len(blocks)} spatial blocks")
    blocked = allocate_folds(blocks, strata_by_id, config.k, config.seed)
    random_plan = random_fold_plan(ds.ids(), strata_by_id, config.k, config.seed)

    out: dict = {"modes": ["blocked", "random"], "targets": {}, "config": config.to_dict()}
    for target in targets:
        transform = config.transform.get(target, "identity")
        floor = is_nonnegative_target(target)

        def trainer(X, y):
            ty = transform_response(y, transform)
            model = fit_gbrt(X, ty, config.model)

            class _Wrapped:
                def predict(self, Xq):
                    raw = model.predict(Xq)
                    if transform == "log1p":
                        raw = np.expm1(raw)
                    if floor:
                        raw = np.maximum(raw, 0.0)
                    return raw

            return _Wrapped()

        y = ds.target_vector(target)
        labeled = np.isfinite(y)
        entry = {}
        for mode, plan in (("blocked", blocked), ("random", random_plan)):
            pred = oof_predictions(plan, trainer, ds, target)
            rows = evaluate_stratified(y[labeled], pred[labeled], target=target,
                                       scenario=f"oof_{mode}")
            entry[mode] = rows[0].to_dict()
        entry["delta"] = {
            m: (entry["blocked"][m] - entry["random"][m])
            if (entry["blocked"][m] is not None and entry["random"][m] is not None) else None
            for m in ("rmse", "mae", "ccc_log1p", "willmott_d15", "rpiq", "bias", "nrmse_minmax")
        }
        out["targets"][target] = entry
    return out
