"""terracv: spatially blocked evaluation and modeling for geospatial regression.

Blocks samples on a fixed equal-area grid, allocates stratified group folds,
certifies train/test separation with two-sample diagnostics and
nearest-neighbor audits, reduces the feature space with correlation filtering
plus randomized stability selection, fits boosted regression trees with
per-stratum calibration, scores the full agreement-metric suite, and wraps
predictions in split-conformal intervals.  A built-in generator of spatially
autocorrelated synthetic data makes the whole pipeline verifiable end to end.
"""

__version__ = "0.1.0"

from . import _kernels

__all__ = ["__version__", "_kernels"]


def _lazy_api():
    # Re-exported here for discoverability; heavy submodules load on demand.
    from .conformal import (ConformalModel, calibrate, calibrate_stratified,
                            evaluate_intervals, predict_interval)
    from .data import (ColumnSchema, Dataset, DepthClass, SampleRecord,
                       load_dataset, save_dataset, summarize)
    from .featsel import (FeatSelConfig, StabilityReport, category_stability,
                          correlation_filter, stability_select, two_stage_select)
    from .gbrt import GBRTParams, GradientBoostedTrees, fit_gbrt
    from .metrics import (MetricsRow, bias, ccc, evaluate_stratified, mae,
                          nrmse_minmax, rmse, rpiq, superclass_aggregate,
                          willmott_d)
    from .modeling import (PipelinePredictor, StratumCalibrator,
                           fit_stratum_calibration, fit_target_pipeline)
    from .runner import RunConfig, compare_cv_modes, load_report, run
    from .spatial import (NNDistanceReport, SpatialBlock, assign_blocks,
                          haversine_km, nn_distance_report)
    from .splitting import (FoldPlan, allocate_folds, oof_predictions,
                            random_fold_plan, split_calibration_test)
    from .stats import TestResult, ad_two_sample, fold_diagnostics, ks_two_sample
    from .synth import SynthConfig, generate, spatial_autocorrelation_check
    return locals()


def __getattr__(name):
    api = _lazy_api()
    if name in api:
        return api[name]
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")
