"""Per-target pipeline and stratified affine calibration."""

import json

import numpy as np
import pytest

from terracv.data import Dataset, DepthClass, SampleRecord
from terracv.featsel import FeatSelConfig
from terracv.gbrt import GBRTParams
from terracv.modeling import (PipelinePredictor, StratumCalibrator,
                              fit_stratum_calibration, fit_target_pipeline)

FAST_FEATSEL = FeatSelConfig(
    iterations=8, subsample=0.5, top_k=4, pi_threshold=0.5,
    oracle=GBRTParams(n_trees=15, max_depth=3, learning_rate=0.3,
                      min_samples_leaf=5),
)


def test_calibration_identity_when_perfect(rng):
    pred = rng.normal(size=300)
    strata = np.repeat(["a", "b", "c"], 100)
    cal = fit_stratum_calibration(pred, pred, strata, min_count=50)
    for s in "abc":
        a, b = cal.coefficients[s]
        assert abs(a) < 1e-10
        assert abs(b - 1.0) < 1e-10


def test_calibration_corrects_uniform_offset(rng):
    n = 200
    obs = rng.normal(size=n) * 2 + 10
    pred = obs + 2.0 + rng.normal(size=n) * 0.1  # stratum overpredicts by ~2
    cal = fit_stratum_calibration(pred, obs, ["z"] * n, min_count=50)
    a, b = cal.coefficients["z"]
    corrected = cal.correct(pred, ["z"] * n)
    assert abs(np.mean(corrected - obs)) < 1e-10  # OLS residual mean is 0
    assert abs(np.mean(pred - obs) - 2.0) < 0.05  # the offset was there


def test_calibration_small_stratum_uses_global(rng):
    pred = np.concatenate([rng.normal(size=100), [1.0, 2.0, 3.0]])
    obs = pred * 1.5
    strata = ["big"] * 100 + ["tiny"] * 3
    cal = fit_stratum_calibration(pred, obs, strata, min_count=50)
    assert "tiny" not in cal.coefficients
    assert cal.pair_for("tiny") == cal.global_pair


def test_calibration_zero_variance_stratum_identity(rng):
    pred = np.concatenate([rng.normal(size=100), np.full(60, 5.0)])
    obs = np.concatenate([rng.normal(size=100), rng.normal(size=60)])
    strata = ["ok"] * 100 + ["flat"] * 60
    cal = fit_stratum_calibration(pred, obs, strata, min_count=50)
    assert cal.coefficients["flat"] == (0.0, 1.0)
    assert any("flat" in note for note in cal.notes)


def test_calibration_residual_mean_zero_per_stratum(rng):
    n = 500
    pred = rng.normal(size=n) * 3 + 5
    obs = 0.8 * pred + rng.normal(size=n)
    strata = np.array(["a"] * 250 + ["b"] * 250)
    obs[strata == "b"] += 4.0
    cal = fit_stratum_calibration(pred, obs, strata, min_count=100)
    corrected = cal.correct(pred, strata)
    for s in "ab":
        assert abs(np.mean((obs - corrected)[strata == s])) < 1e-9


def test_calibration_alignment_validation(rng):
    with pytest.raises(ValueError, match="align"):
        fit_stratum_calibration([1.0, 2.0], [1.0], ["a", "b"])


def _pipeline_dataset(rng, n=300, transform_target=False):
    X = rng.normal(size=(n, 6))
    signal = 2.0 * X[:, 0] - X[:, 3]
    y = np.expm1(signal * 0.3 + 2.0) if transform_target else signal + 10.0
    strata = np.where(X[:, 5] > 0, "north", "south")
    records = tuple(
        SampleRecord(id=f"s{i}", lat=45.0, lon=8.0, year=2015,
                     depth_class=DepthClass.D0_30, stratum=str(strata[i]),
                     targets={"SOC": float(max(y[i], 0.0))},
                     covariates=tuple(float(v) for v in X[i]))
        for i in range(n)
    )
    return Dataset(records=records, feature_names=tuple(f"c{j}" for j in range(6)),
                   target_names=("SOC",))


def test_pipeline_records_selected_subset(rng):
    ds = _pipeline_dataset(rng)
    pipe = fit_target_pipeline(ds, "SOC", FAST_FEATSEL,
                               GBRTParams(n_trees=40, max_depth=3, seed=1),
                               transform="identity", seed=0, min_labeled=100)
    assert set(pipe.feature_names) <= set(ds.feature_names)
    assert len(pipe.feature_names) == len(pipe.feature_indices)
    assert pipe.stability is not None
    assert pipe.stability.stage_counts[2] == len(pipe.feature_indices)
    # the planted drivers are found
    assert "c0" in pipe.feature_names
    assert "c3" in pipe.feature_names


def test_pipeline_log1p_roundtrip_floor(rng):
    ds = _pipeline_dataset(rng, transform_target=True)
    pipe = fit_target_pipeline(ds, "SOC", FAST_FEATSEL,
                               GBRTParams(n_trees=60, max_depth=3, seed=1),
                               transform="log1p", seed=0, min_labeled=100)
    assert pipe.floor_zero  # SOC is registered non-negative
    pred = pipe.predict(ds.feature_matrix())
    assert np.all(pred >= 0.0)
    assert np.isfinite(pred).all()


def test_pipeline_identity_vs_log1p_on_clean_data(rng):
    from terracv.metrics import ccc
    ds = _pipeline_dataset(rng, n=400, transform_target=True)
    y = ds.target_vector("SOC")
    for transform in ("identity", "log1p"):
        pipe = fit_target_pipeline(ds, "SOC", FAST_FEATSEL,
                                   GBRTParams(n_trees=150, max_depth=4, seed=1),
                                   transform=transform, seed=0, min_labeled=100)
        pred = pipe.predict(ds.feature_matrix())
        assert ccc(y, pred) > 0.99


def test_pipeline_min_labeled_floor(rng):
    ds = _pipeline_dataset(rng, n=80)
    with pytest.raises(ValueError, match="floor"):
        fit_target_pipeline(ds, "SOC", FAST_FEATSEL, GBRTParams(),
                            min_labeled=100)


def test_pipeline_serialization_roundtrip(rng):
    ds = _pipeline_dataset(rng)
    pipe = fit_target_pipeline(ds, "SOC", FAST_FEATSEL,
                               GBRTParams(n_trees=20, max_depth=3, seed=2),
                               transform="log1p", seed=0, min_labeled=100)
    cal = fit_stratum_calibration(
        pipe.predict(ds.feature_matrix()), ds.target_vector("SOC"),
        ds.strata(), min_count=50)
    pipe = pipe.with_calibrator(cal)
    payload = json.loads(json.dumps(pipe.to_dict()))
    restored = PipelinePredictor.from_dict(payload)
    X = ds.feature_matrix()
    assert np.array_equal(pipe.predict(X, ds.strata()),
                          restored.predict(X, ds.strata()))


def test_pipeline_rejects_wrong_model_version(rng):
    ds = _pipeline_dataset(rng)
    pipe = fit_target_pipeline(ds, "SOC", FAST_FEATSEL,
                               GBRTParams(n_trees=5, seed=0), min_labeled=100)
    d = pipe.to_dict()
    d["version"] = "9.0.0"
    with pytest.raises(ValueError, match="version"):
        PipelinePredictor.from_dict(d)


def test_pipeline_prediction_invariant_to_feature_permutation(rng):
    # the pipeline carries its own feature order, so permuting the dataset's
    # columns (and nothing else) must not change predictions
    ds = _pipeline_dataset(rng, n=250)
    perm = [4, 0, 5, 2, 1, 3]
    permuted_records = tuple(
        SampleRecord(id=r.id, lat=r.lat, lon=r.lon, year=r.year,
                     depth_class=r.depth_class, stratum=r.stratum,
                     targets=r.targets,
                     covariates=tuple(r.covariates[j] for j in perm))
        for r in ds.records
    )
    ds_perm = Dataset(records=permuted_records,
                      feature_names=tuple(ds.feature_names[j] for j in perm),
                      target_names=ds.target_names)
    params = GBRTParams(n_trees=40, max_depth=3, seed=1)
    pipe = fit_target_pipeline(ds, "SOC", FAST_FEATSEL, params,
                               seed=0, min_labeled=100)
    pipe_perm = fit_target_pipeline(ds_perm, "SOC", FAST_FEATSEL, params,
                                    seed=0, min_labeled=100)
    assert set(pipe.feature_names) == set(pipe_perm.feature_names)
    pred = pipe.predict(ds.feature_matrix())
    pred_perm = pipe_perm.predict(ds_perm.feature_matrix())
    assert np.allclose(pred, pred_perm, atol=1e-9)


def test_calibrator_serialization():
    cal = StratumCalibrator(coefficients={"a": (0.5, 1.1)}, global_pair=(0.0, 1.0),
                            min_count=50, notes=("x",))
    restored = StratumCalibrator.from_dict(cal.to_dict())
    assert restored.coefficients == cal.coefficients
    assert restored.global_pair == cal.global_pair
