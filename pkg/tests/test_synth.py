"""Synthetic data generator: determinism, planted truth, autocorrelation."""

import numpy as np
import pytest

from terracv.data import save_dataset
from terracv.gbrt import GBRTParams, fit_gbrt
from terracv.synth import SynthConfig, generate, spatial_autocorrelation_check


def test_same_seed_bit_identical(tmp_path):
    cfg = SynthConfig(n_samples=300, seed=11, n_strata=3, stratum_effect_sd=0.3,
                      noise_sd=0.4, target_skew="lognormal")
    ds1, truth1 = generate(cfg)
    ds2, truth2 = generate(cfg)
    assert ds1 == ds2
    assert truth1 == truth2
    p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
    save_dataset(ds1, p1)
    save_dataset(ds2, p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_different_seed_differs():
    ds1, _ = generate(SynthConfig(n_samples=100, seed=1))
    ds2, _ = generate(SynthConfig(n_samples=100, seed=2))
    assert ds1 != ds2


def test_noiseless_target_exactly_recoverable(rng):
    cfg = SynthConfig(n_samples=400, seed=5, noise_sd=0.0, n_informative=1,
                      n_noise=0, n_redundant=0, n_strata=1)
    ds, truth = generate(cfg)
    w = truth["weights"][truth["informative"][0]]
    f = ds.feature_matrix()[:, 0]
    expected = cfg.base_level + cfg.amplitude * (f * w)
    y = ds.target_vector(cfg.target_name)
    assert np.allclose(expected, y, atol=1e-12)
    # and a boosted fit with sample-isolating leaves drives the training
    # error to a vanishing share of sd(y)
    model = fit_gbrt(ds.feature_matrix(), y,
                     GBRTParams(n_trees=100, max_depth=10, min_samples_leaf=1,
                                learning_rate=0.3, seed=0))
    assert model.train_rmse_[-1] < 1e-6 * np.std(y)


def test_truth_sidecar_complete():
    cfg = SynthConfig(n_samples=200, seed=3, n_informative=4, n_noise=5,
                      n_redundant=3, n_strata=4, stratum_effect_sd=0.5)
    ds, truth = generate(cfg)
    names = set(ds.feature_names)
    assert set(truth["informative"]) <= names
    assert set(truth["redundant"]) <= names
    assert set(truth["noise"]) <= names
    assert len(truth["informative"]) == 4
    assert len(truth["noise"]) == 5
    assert set(truth["categories"]) == names
    assert set(truth["stratum_effects"]) == set(truth["superclass"])
    for red, base in truth["redundant"].items():
        assert base in truth["informative"]
        i = list(ds.feature_names).index(red)
        j = list(ds.feature_names).index(base)
        X = ds.feature_matrix()
        r = np.corrcoef(X[:, i], X[:, j])[0, 1]
        assert abs(r) > 0.95  # dies in stage-1 filtering


def test_nonnegative_target_respected_for_registered_names():
    cfg = SynthConfig(n_samples=500, seed=9, target_name="SOC", noise_sd=2.0,
                      base_level=2.0, amplitude=5.0)
    ds, _ = generate(cfg)
    y = ds.target_vector("SOC")
    assert np.all(y >= 0.0)


def test_lognormal_skew_positive_and_skewed():
    cfg = SynthConfig(n_samples=2000, seed=2, target_skew="lognormal")
    ds, _ = generate(cfg)
    y = ds.target_vector(cfg.target_name)
    assert np.all(y > 0)
    assert np.mean(y) > np.median(y)  # right skew


def test_strata_partition_and_labels():
    cfg = SynthConfig(n_samples=300, seed=4, n_strata=5)
    ds, truth = generate(cfg)
    labels = set(ds.strata())
    assert labels <= {f"AEZ{i:02d}" for i in range(1, 6)}
    assert len(labels) >= 2


def test_trend_shifts_target_north(rng):
    cfg = SynthConfig(n_samples=1000, seed=6, trend=("north", 3.0), noise_sd=0.1)
    ds, _ = generate(cfg)
    y = ds.target_vector(cfg.target_name)
    lat = ds.coords()[:, 0]
    north = y[lat > np.median(lat)].mean()
    south = y[lat <= np.median(lat)].mean()
    assert north - south > 1.0


def test_autocorrelation_smooth_field_gap():
    cfg = SynthConfig(n_samples=700, seed=8, spatial_range_km=100.0)
    ds, truth = generate(cfg)
    chk = spatial_autocorrelation_check(ds, truth["informative"][0], range_km=100.0)
    assert chk["gap"] > 0.3


def test_autocorrelation_white_noise_gap_small():
    gaps = []
    for seed in range(10):
        cfg = SynthConfig(n_samples=400, seed=seed)
        ds, truth = generate(cfg)
        chk = spatial_autocorrelation_check(ds, truth["noise"][0], range_km=100.0)
        gaps.append(chk["gap"])
    assert max(abs(g) for g in gaps) < 0.1


def test_autocorrelation_constant_field_errors():
    cfg = SynthConfig(n_samples=100, seed=1)
    ds, _ = generate(cfg)
    records = tuple(
        type(r)(id=r.id, lat=r.lat, lon=r.lon, year=r.year,
                depth_class=r.depth_class, stratum=r.stratum,
                targets={"t": 5.0}, covariates=r.covariates)
        for r in ds.records
    )
    from terracv.data import Dataset
    flat = Dataset(records=records, feature_names=ds.feature_names,
                   target_names=("t",))
    with pytest.raises(ValueError, match="constant"):
        spatial_autocorrelation_check(flat, "t", range_km=100.0)


def test_autocorrelation_requires_enough_samples():
    ds, _ = generate(SynthConfig(n_samples=10, seed=1))
    with pytest.raises(ValueError, match="30"):
        spatial_autocorrelation_check(ds, "eo_sig_00")


def test_config_validation():
    with pytest.raises(ValueError):
        SynthConfig(n_samples=0).validate()
    with pytest.raises(ValueError):
        SynthConfig(spatial_range_km=-1).validate()
    with pytest.raises(ValueError):
        SynthConfig(target_skew="cauchy").validate()
    with pytest.raises(ValueError):
        SynthConfig(trend=("up", 1.0)).validate()
    with pytest.raises(ValueError):
        SynthConfig(latent_share=1.0).validate()


def test_config_dict_roundtrip():
    cfg = SynthConfig(n_samples=50, trend=("east", 2.0), latent_share=0.3,
                      extent_km=(400.0, 300.0))
    assert SynthConfig.from_dict(cfg.to_dict()) == cfg
