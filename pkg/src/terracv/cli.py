"""Command-line entry point.

Verbs: run, synth, diagnose, select, evaluate, compare-cv, plots.  A run is
driven by a JSON config file; any relevant flag overrides its config key.
Exit codes: 0 success, 2 config error, 3 data error, 4 pipeline failure.

The default output directory comes from --out, then the TERRACV_OUTDIR
environment variable, then ./terracv_out.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .data import ColumnSchema, LoadError, load_dataset
from .runner import (ConfigError, DataError, PipelineError, RunConfig,
                     compare_cv_modes, dump_report, load_report, run)

logger = logging.getLogger("terracv")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_PIPELINE = 4


def _setup_logging(verbose: bool) -> None:
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s %(message)s",
        stream=sys.stderr,
    )


def _default_out() -> Path:
    return Path(os.environ.get("TERRACV_OUTDIR", "terracv_out"))


def _read_config(path: str) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc


def _apply_overrides(config_dict: dict, args) -> dict:
    overrides = {
        "seed": args.seed,
        "k": args.k,
        "block_km": args.block_km,
        "test_fraction": args.test_fraction,
        "alpha": args.alpha,
    }
    for key, value in overrides.items():
        if value is not None:
            config_dict[key] = value
    if getattr(args, "no_plots", False):
        config_dict["emit_plots"] = False
    if getattr(args, "targets", None):
        config_dict["targets"] = args.targets
    return config_dict


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", required=True, help="JSON run configuration")
    p.add_argument("--out", help="output directory (default: $TERRACV_OUTDIR or ./terracv_out)")
    p.add_argument("--seed", type=int, help="override config seed")
    p.add_argument("--k", type=int, help="override fold count")
    p.add_argument("--block-km", dest="block_km", type=float, help="override block size in km")
    p.add_argument("--test-fraction", dest="test_fraction", type=float,
                   help="override held-out block fraction")
    p.add_argument("--alpha", type=float, help="override interval miscoverage level")
    p.add_argument("--targets", nargs="+", help="override target list")


def cmd_run(args) -> int:
    config = RunConfig.from_dict(_apply_overrides(_read_config(args.config), args))
    out = Path(args.out) if args.out else _default_out()
    report = run(config, out_dir=out)
    print(f"report written to {out / 'report.json'}")
    for target, rows in report["metrics"]["oof"].items():
        pooled = next(r for r in rows if r["dimension"] == "all")
        print(f"  {target}: oof rmse={pooled['rmse']:.4g} ccc_log1p={pooled['ccc_log1p']}")
    return EXIT_OK


def cmd_synth(args) -> int:
    from .data import save_dataset
    from .synth import SynthConfig, generate, write_truth

    if args.config:
        config_dict = _read_config(args.config)
        synth_dict = config_dict.get("synth", config_dict)
        if synth_dict is None:
            raise ConfigError("config has no 'synth' section")
    else:
        synth_dict = {}
    if args.seed is not None:
        synth_dict["seed"] = args.seed
    if args.n is not None:
        synth_dict["n_samples"] = args.n
    try:
        synth_config = SynthConfig.from_dict(synth_dict)
        synth_config.validate()
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid synth config: {exc}") from exc
    out = Path(args.out) if args.out else _default_out()
    out.mkdir(parents=True, exist_ok=True)
    ds, truth = generate(synth_config)
    save_dataset(ds, out / "data.csv")
    write_truth(truth, out / "truth.json")
    print(f"wrote {len(ds)} samples to {out / 'data.csv'} (+ truth.json)")
    return EXIT_OK


def cmd_diagnose(args) -> int:
    from .spatial import assign_blocks
    from .splitting import allocate_folds, split_calibration_test
    from .stats import fold_diagnostics
    from .runner import _load_or_generate, _subset

    config = RunConfig.from_dict(_apply_overrides(_read_config(args.config), args))
    ds, _ = _load_or_generate(config)
    blocks = assign_blocks(ds, config.block_km)
    strata_by_id = {r.id: r.stratum for r in ds.records}
    cal_ids, test_ids = split_calibration_test(blocks, strata_by_id,
                                               config.test_fraction, config.seed)
    test_set = set(test_ids)
    cal_blocks = [b for b in blocks if b.block_id not in test_set]
    members = {sid for b in cal_blocks for sid in b.member_ids}
    ds_cal = _subset(ds, np.array([r.id in members for r in ds.records]))
    plan = allocate_folds(cal_blocks, strata_by_id, config.k, config.seed)
    targets = list(config.targets) if config.targets else list(ds.target_names)
    payload = {
        "fold_plan": plan.to_dict(),
        "fold_diagnostics": {t: fold_diagnostics(ds_cal, plan, cal_blocks, t)
                             for t in targets},
    }
    out = Path(args.out) if args.out else _default_out()
    out.mkdir(parents=True, exist_ok=True)
    (out / "diagnostics.json").write_text(dump_report(payload), encoding="utf-8")
    for t, rows in payload["fold_diagnostics"].items():
        for row in rows:
            print(f"{t} fold {row['fold']}: ks_p={row['ks']['p_value']:.4g} "
                  f"ad_p={row['ad']['p_value']:.4g} nn_median_km="
                  f"{row['nn']['median_km'] if row['nn'] else 'n/a'}")
    print(f"diagnostics written to {out / 'diagnostics.json'}")
    return EXIT_OK


def cmd_select(args) -> int:
    from .featsel import two_stage_select
    from .modeling import transform_response
    from .runner import _load_or_generate

    config = RunConfig.from_dict(_apply_overrides(_read_config(args.config), args))
    ds, _ = _load_or_generate(config)
    targets = list(config.targets) if config.targets else list(ds.target_names)
    out = Path(args.out) if args.out else _default_out()
    out.mkdir(parents=True, exist_ok=True)
    payload = {}
    for target in targets:
        y = ds.target_vector(target)
        labeled = np.isfinite(y)
        transform = config.transform.get(target, "identity")
        ty = transform_response(y[labeled], transform)
        report, cols = two_stage_select(ds.feature_matrix()[labeled], ty,
                                        config.featsel, config.seed,
                                        feature_names=list(ds.feature_names))
        payload[target] = report.to_dict()
        print(f"{target}: {report.stage_counts[0]} -> {report.stage_counts[1]} -> "
              f"{report.stage_counts[2]} features")
        if args.plot:
            from .plots import plot_stability_curve
            plot_stability_curve({"stability": {target: payload[target]}}, target,
                                 out / f"stability_{target}.svg")
    (out / "stability.json").write_text(dump_report(payload), encoding="utf-8")
    print(f"stability report written to {out / 'stability.json'}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    from .metrics import evaluate_stratified, rows_to_table

    path = Path(args.predictions)
    if not path.exists():
        raise DataError(f"predictions file not found: {path}")
    import csv as _csv
    with open(path, "r", encoding="utf-8", newline="") as fh:
        rows = list(_csv.DictReader(fh))
    if not rows:
        raise DataError(f"{path}: no rows")
    for col in (args.y_col, args.yhat_col):
        if col not in rows[0]:
            raise DataError(f"{path}: missing column {col!r}")
    try:
        y = np.array([float(r[args.y_col]) for r in rows])
        yhat = np.array([float(r[args.yhat_col]) for r in rows])
    except ValueError as exc:
        raise DataError(f"{path}: non-numeric cell ({exc})") from exc
    strata = {}
    for dim in args.strata_col or []:
        if dim not in rows[0]:
            raise DataError(f"{path}: missing stratum column {dim!r}")
        strata[dim] = [r[dim] for r in rows]
    metric_rows = evaluate_stratified(y, yhat, strata or None,
                                      target=args.target, scenario="evaluate")
    out = Path(args.out) if args.out else _default_out()
    out.mkdir(parents=True, exist_ok=True)
    (out / "metrics.json").write_text(
        dump_report({"metrics": [r.to_dict() for r in metric_rows]}), encoding="utf-8")
    (out / "metrics.csv").write_text(rows_to_table(metric_rows), encoding="utf-8")
    print(rows_to_table(metric_rows))
    return EXIT_OK


def cmd_compare_cv(args) -> int:
    config = RunConfig.from_dict(_apply_overrides(_read_config(args.config), args))
    result = compare_cv_modes(config)
    out = Path(args.out) if args.out else _default_out()
    out.mkdir(parents=True, exist_ok=True)
    (out / "compare_cv.json").write_text(dump_report(result), encoding="utf-8")
    for target, entry in result["targets"].items():
        print(f"{target}: blocked rmse={entry['blocked']['rmse']:.4g} "
              f"random rmse={entry['random']['rmse']:.4g} "
              f"delta={entry['delta']['rmse']:.4g}")
    return EXIT_OK


def cmd_plots(args) -> int:
    from .plots import emit_plots

    report = load_report(args.report)
    out = Path(args.out) if args.out else _default_out() / "plots"
    predictions = args.predictions
    if predictions is None:
        candidate = Path(args.report).parent / report.get("files", {}).get("predictions", "predictions.csv")
        predictions = candidate if candidate.exists() else None
    written = emit_plots(report, out, predictions=predictions)
    print(f"wrote {len(written)} figure(s) to {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="terracv",
        description="Spatially blocked evaluation and modeling for geospatial regression.",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute the full pipeline from a config file")
    _add_run_flags(p_run)
    p_run.add_argument("--no-plots", action="store_true", help="skip figure emission")
    p_run.set_defaults(func=cmd_run)

    p_synth = sub.add_parser("synth", help="generate a synthetic dataset (+ ground truth)")
    p_synth.add_argument("--config", help="JSON file with a 'synth' section")
    p_synth.add_argument("--seed", type=int)
    p_synth.add_argument("--n", type=int, help="number of samples")
    p_synth.add_argument("--out")
    p_synth.set_defaults(func=cmd_synth)

    p_diag = sub.add_parser("diagnose", help="fold plan + distribution/NN diagnostics only")
    _add_run_flags(p_diag)
    p_diag.set_defaults(func=cmd_diagnose)

    p_sel = sub.add_parser("select", help="two-stage feature selection only")
    _add_run_flags(p_sel)
    p_sel.add_argument("--plot", action="store_true", help="emit the stability curve SVG")
    p_sel.set_defaults(func=cmd_select)

    p_eval = sub.add_parser("evaluate", help="metric suite over a predictions CSV")
    p_eval.add_argument("--predictions", required=True, help="CSV with observed/predicted columns")
    p_eval.add_argument("--y-col", default="y")
    p_eval.add_argument("--yhat-col", default="yhat")
    p_eval.add_argument("--strata-col", nargs="*", help="stratum column(s) to disaggregate by")
    p_eval.add_argument("--target", default="target")
    p_eval.add_argument("--out")
    p_eval.set_defaults(func=cmd_evaluate)

    p_cmp = sub.add_parser("compare-cv", help="blocked vs random fold OOF comparison")
    _add_run_flags(p_cmp)
    p_cmp.set_defaults(func=cmd_compare_cv)

    p_plots = sub.add_parser("plots", help="emit SVG figures from an existing report")
    p_plots.add_argument("--report", required=True, help="path to report.json")
    p_plots.add_argument("--predictions", help="predictions.csv (default: next to the report)")
    p_plots.add_argument("--out")
    p_plots.set_defaults(func=cmd_plots)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    _setup_logging(args.verbose)
    try:
        return args.func(args)
    except ConfigError as exc:
        logger.error("config error: %s", exc)
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, LoadError, FileNotFoundError) as exc:
        logger.error("data error: %s", exc)
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # pipeline failures and anything unexpected
        logger.exception("pipeline failure")
        print(f"pipeline failure: {exc}", file=sys.stderr)
        return EXIT_PIPELINE


if __name__ == "__main__":
    sys.exit(main())
