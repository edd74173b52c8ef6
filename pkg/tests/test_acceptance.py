"""Acceptance suite: one test per release criterion, each printing a
PASS/FAIL line.  Run with ``pytest tests/test_acceptance.py -v -s``."""

import json
import math
import time

import numpy as np
import pytest

from terracv.cli import main as cli_main
from terracv.conformal import calibrate, calibrate_stratified, evaluate_intervals, predict_interval
from terracv.data import Dataset, DepthClass, SampleRecord
from terracv.featsel import FeatSelConfig, two_stage_select
from terracv.gbrt import GBRTParams, fit_gbrt
from terracv.metrics import bias, ccc, mae, nrmse_minmax, rmse, rpiq, willmott_d
from terracv.runner import RunConfig, compare_cv_modes
from terracv.spatial import (EARTH_RADIUS_KM, assign_blocks,
                             haversine_km, nn_distance_report)
from terracv.splitting import allocate_folds, split_calibration_test
from terracv.stats import ad_two_sample, fold_diagnostics, ks_two_sample
from terracv.synth import SynthConfig, generate

KM_PER_DEG = EARTH_RADIUS_KM * math.pi / 180.0


def _verdict(name, ok, detail=""):
    print(f"[{'PASS' if ok else 'FAIL'}] {name}" + (f"  ({detail})" if detail else ""))
    assert ok, f"{name}: {detail}"


# --- 1. metric-oracle equivalence -------------------------------------------

def _oracle_quantile(values, q):
    s = sorted(values)
    h = (len(s) - 1) * q
    lo, hi = math.floor(h), math.ceil(h)
    return s[lo] + (s[hi] - s[lo]) * (h - lo)


def test_metric_oracle_equivalence():
    start = time.perf_counter()
    r = np.random.default_rng(1001)
    worst = 0.0
    for _ in range(100):
        n = int(r.integers(2, 201))
        y = r.lognormal(mean=1.0, sigma=0.7, size=n)
        p = np.abs(y + r.normal(size=n) * r.uniform(0.05, 2.0))
        yl, pl = y.tolist(), p.tolist()

        o_rmse = math.sqrt(sum((a - b) ** 2 for a, b in zip(yl, pl)) / n)
        o_mae = sum(abs(a - b) for a, b in zip(yl, pl)) / n
        my = sum(yl) / n
        mp = sum(pl) / n
        o_bias = mp - my
        checks = [
            (rmse(y, p), o_rmse),
            (mae(y, p), o_mae),
            (bias(y, p), o_bias),
        ]
        if max(yl) > min(yl):
            checks.append((nrmse_minmax(y, p), o_rmse / (max(yl) - min(yl))))
        if n >= 2:
            vy = sum((v - my) ** 2 for v in yl) / n
            vp = sum((v - mp) ** 2 for v in pl) / n
            cov = sum((a - my) * (b - mp) for a, b in zip(yl, pl)) / n
            checks.append((ccc(y, p), 2 * cov / (vy + vp + (my - mp) ** 2)))
            tl = [math.log1p(v) for v in yl]
            tp = [math.log1p(v) for v in pl]
            mty, mtp = sum(tl) / n, sum(tp) / n
            vty = sum((v - mty) ** 2 for v in tl) / n
            vtp = sum((v - mtp) ** 2 for v in tp) / n
            ctv = sum((a - mty) * (b - mtp) for a, b in zip(tl, tp)) / n
            checks.append((ccc(y, p, transform="log1p"),
                           2 * ctv / (vty + vtp + (mty - mtp) ** 2)))
            num = sum(abs(a - b) ** 1.5 for a, b in zip(yl, pl))
            den = sum((abs(b - my) + abs(a - my)) ** 1.5 for a, b in zip(yl, pl))
            if den > 0:
                checks.append((willmott_d(y, p), 1 - num / den))
        if n >= 4:
            t_rmse = math.sqrt(sum((a - b) ** 2 for a, b in zip(tl, tp)) / n)
            if t_rmse > 0:
                o_rpiq = (_oracle_quantile(tl, 0.75) - _oracle_quantile(tl, 0.25)) / t_rmse
                checks.append((rpiq(y, p), o_rpiq))
        for got, want in checks:
            worst = max(worst, abs(got - want))
    elapsed = time.perf_counter() - start
    _verdict("metric-oracle equivalence (100 instances, tol 1e-10)",
             worst <= 1e-10 and elapsed < 5.0,
             f"worst |diff| = {worst:.2e}, {elapsed:.2f}s")


# --- 2. conformal coverage ----------------------------------------------------

def test_conformal_coverage_iid():
    start = time.perf_counter()
    picps = []
    for seed in range(50):
        r = np.random.default_rng([seed, 2002])
        mu_cal = r.uniform(0, 10, size=2000)
        y_cal = mu_cal + r.normal(size=2000)
        q = calibrate(np.abs(y_cal - mu_cal), alpha=0.10)
        mu_eval = r.uniform(0, 10, size=2000)
        y_eval = mu_eval + r.normal(size=2000)
        intervals = np.column_stack([mu_eval - q, mu_eval + q])
        picps.append(evaluate_intervals(y_eval, intervals)[0].picp)
    mean_picp = float(np.mean(picps))
    elapsed = time.perf_counter() - start
    _verdict("conformal coverage (alpha=0.10, mean PICP in [0.885, 0.915])",
             0.885 <= mean_picp <= 0.915 and elapsed < 30.0,
             f"mean PICP = {mean_picp:.4f}, {elapsed:.1f}s")


# --- 3. stratified coverage ----------------------------------------------------

def test_stratified_coverage_heteroscedastic():
    strat_picp = {"a": [], "b": []}
    glob_picp = {"a": [], "b": []}
    for seed in range(50):
        r = np.random.default_rng([seed, 3003])
        scales = {"a": 1.0, "b": 3.0}
        n_side = 1000
        strata_cal = np.array(["a"] * n_side + ["b"] * n_side, dtype=object)
        res_cal = np.abs(np.concatenate([
            r.normal(size=n_side) * scales["a"],
            r.normal(size=n_side) * scales["b"],
        ]))
        model = calibrate_stratified(res_cal, strata_cal, alpha=0.10, min_count=100)
        for s in ("a", "b"):
            res_eval = np.abs(r.normal(size=n_side) * scales[s])
            strat_picp[s].append(float(np.mean(res_eval <= model.per_stratum_q[s])))
            glob_picp[s].append(float(np.mean(res_eval <= model.global_q)))
    strat_ok = all(abs(np.mean(strat_picp[s]) - 0.90) <= 0.02 for s in ("a", "b"))
    glob_dev = max(abs(np.mean(glob_picp[s]) - 0.90) for s in ("a", "b"))
    _verdict("stratified coverage (per-stratum PICP within 2pts; global off > 3pts)",
             strat_ok and glob_dev > 0.03,
             f"stratified a/b = {np.mean(strat_picp['a']):.3f}/{np.mean(strat_picp['b']):.3f}, "
             f"global worst dev = {glob_dev:.3f}")


# --- 4. split integrity ---------------------------------------------------------

def test_split_integrity():
    ok = True
    detail = []
    for seed in range(3):
        ds, _ = generate(SynthConfig(
            n_samples=4000, extent_km=(800, 800), spatial_range_km=80,
            n_informative=2, n_noise=2, n_redundant=0, n_strata=3,
            stratum_effect_sd=0.2, seed=seed))
        blocks = assign_blocks(ds, 100.0)
        assert len(blocks) >= 50
        strata = {r.id: r.stratum for r in ds.records}
        plan = allocate_folds(blocks, strata, 5, seed)
        # zero blocks span folds
        id_to_block = {sid: b.block_id for b in blocks for sid in b.member_ids}
        for sid, fold in plan.sample_to_fold.items():
            if fold != plan.block_to_fold[id_to_block[sid]]:
                ok = False
        # per-fold shares within 5 points of global shares
        totals = {}
        for s in strata.values():
            totals[s] = totals.get(s, 0) + 1
        grand = sum(totals.values())
        worst = 0.0
        for f in range(5):
            fold_n = sum(plan.stratum_balance[f].values())
            for s, tot in totals.items():
                dev = abs(plan.stratum_balance[f].get(s, 0) / fold_n - tot / grand)
                worst = max(worst, dev)
        detail.append(f"seed {seed}: {len(blocks)} blocks, worst dev {worst * 100:.2f}pp")
        if worst > 0.05:
            ok = False
    _verdict("split integrity (group folds, shares within 5pp)", ok, "; ".join(detail))


# --- 5. leakage audit ------------------------------------------------------------

def _grid_aligned_points(n, seed, extent=600.0, x0=600.0, y0=4900.0):
    r = np.random.default_rng([seed, 19])
    x = r.uniform(x0, x0 + extent, n)
    y = r.uniform(y0, y0 + extent, n)
    lat = y / KM_PER_DEG
    lon = x / (KM_PER_DEG * np.cos(np.radians(lat)))
    records = tuple(
        SampleRecord(id=f"p{i}", lat=float(lat[i]), lon=float(lon[i]), year=2015,
                     depth_class=DepthClass.D0_30,
                     stratum="A" if i % 2 else "B",
                     targets={"t": float(i)}, covariates=())
        for i in range(n)
    )
    return Dataset(records=records, feature_names=(), target_names=("t",))


def test_leakage_audit():
    ok = True
    detail = []
    for seed in range(3):
        ds = _grid_aligned_points(3000, seed)
        blocks = assign_blocks(ds, 100.0)
        strata = {r.id: r.stratum for r in ds.records}
        _, test_ids = split_calibration_test(blocks, strata, 0.25, seed)
        test_set = set(test_ids)
        test_blocks = [b for b in blocks if b.block_id in test_set]
        train_blocks = [b for b in blocks if b.block_id not in test_set]
        rep = nn_distance_report(test_blocks, train_blocks)
        if rep.min_km < 50.0:
            ok = False
        # exhaustive pairwise-minimum oracle, exact equality
        expected = []
        for tb in test_blocks:
            best = math.inf
            for rb in train_blocks:
                phi1, lam1 = math.radians(tb.centroid[0]), math.radians(tb.centroid[1])
                phi2, lam2 = math.radians(rb.centroid[0]), math.radians(rb.centroid[1])
                h = math.sin((phi2 - phi1) / 2) ** 2 + \
                    math.cos(phi1) * math.cos(phi2) * math.sin((lam2 - lam1) / 2) ** 2
                best = min(best, 2 * EARTH_RADIUS_KM * math.asin(min(1.0, math.sqrt(h))))
            expected.append(best)
        if list(rep.distances_km) != expected:
            ok = False
        detail.append(f"seed {seed}: min {rep.min_km:.1f} km, oracle exact")
    _verdict("leakage audit (NN >= 50 km; equals brute force exactly)", ok,
             "; ".join(detail))


# --- 6. distribution diagnostics --------------------------------------------------

def test_distribution_diagnostics():
    # (a) north-trend data: at least 4 of 5 folds significantly distinct
    ds, _ = generate(SynthConfig(
        n_samples=1500, extent_km=(800, 800), spatial_range_km=80,
        n_informative=2, n_noise=2, n_redundant=0, noise_sd=0.2, n_strata=1,
        trend=("north", 4.0), seed=1))
    blocks = assign_blocks(ds, 100.0)
    strata = {r.id: r.stratum for r in ds.records}
    plan = allocate_folds(blocks, strata, 5, seed=1)
    rows = fold_diagnostics(ds, plan, blocks, "soc_like")
    significant = sum(r["ks"]["p_value"] < 0.05 for r in rows)
    trend_ok = significant >= 4

    # (b) exchangeable data: false-positive rate at the 0.05 level
    hits_ks = 0
    hits_ad = 0
    trials = 200
    for seed in range(trials):
        r = np.random.default_rng([seed, 6006])
        a = r.normal(size=400)
        b = r.normal(size=400)
        hits_ks += ks_two_sample(a, b).p_value < 0.05
        hits_ad += ad_two_sample(a, b).p_value < 0.05
    fpr_ks = hits_ks / trials
    fpr_ad = hits_ad / trials
    fpr_ok = 0.02 <= fpr_ks <= 0.09 and 0.02 <= fpr_ad <= 0.09
    _verdict("distribution diagnostics (trend >= 4/5 folds; FPR in [0.02, 0.09])",
             trend_ok and fpr_ok,
             f"significant folds {significant}/5, FPR ks={fpr_ks:.3f} ad={fpr_ad:.3f}")


# --- 7. stability selection -------------------------------------------------------

def _planted_feature_matrix(seed):
    """200 features: 5 informative at random positions among the first 100
    columns, 15 redundant copies (placed after their bases) and 180 noise."""
    r = np.random.default_rng([seed, 23])
    n = 200
    informative_pos = sorted(r.choice(100, size=5, replace=False).tolist())
    fields = r.normal(size=(n, 5))
    X = np.empty((n, 200))
    noise_cols = [j for j in range(100) if j not in informative_pos]
    X[:, noise_cols] = r.normal(size=(n, len(noise_cols)))
    for k, j in enumerate(informative_pos):
        X[:, j] = fields[:, k]
    for k in range(15):
        X[:, 100 + k] = fields[:, k % 5] * r.uniform(0.9, 1.1) + r.normal(size=n) * 0.02
    X[:, 115:] = r.normal(size=(n, 85))
    y = fields @ r.uniform(1.0, 2.0, size=5) + r.normal(size=n) * 0.5
    return X, y, [f"f{j}" for j in informative_pos]


def test_stability_selection():
    start = time.perf_counter()
    config = FeatSelConfig()  # 64 iterations, subsample 0.5 -> 100 rows/iter
    hits = 0
    counts_ok = True
    for seed in range(20):
        X, y, planted = _planted_feature_matrix(seed)
        report, _ = two_stage_select(X, y, config, seed)
        top10 = set(report.ranked[:10])
        hits += all(name in top10 for name in planted)
        i0, i1, i2 = report.stage_counts
        if not (i0 >= i1 >= i2):
            counts_ok = False
    elapsed = time.perf_counter() - start
    _verdict("stability selection (planted in top 10 in >= 95% of seeds; < 2 min)",
             hits >= 19 and counts_ok and elapsed < 120.0,
             f"hits {hits}/20, {elapsed:.1f}s")


# --- 8. blocked-vs-random CV gap ----------------------------------------------------

def test_blocked_vs_random_cv_gap():
    start = time.perf_counter()
    wins = 0
    for seed in range(20):
        config = RunConfig.from_dict({
            "seed": seed,
            "synth": {"n_samples": 600, "extent_km": [500, 500],
                      "spatial_range_km": 100, "n_informative": 3, "n_noise": 4,
                      "n_redundant": 0, "noise_sd": 0.2, "latent_share": 0.5,
                      "n_strata": 2, "seed": seed},
            "k": 5,
            "model": {"n_trees": 100, "max_depth": 4},
            "min_labeled": 50,
        })
        result = compare_cv_modes(config)
        if result["targets"]["soc_like"]["delta"]["rmse"] >= 0:
            wins += 1
    elapsed = time.perf_counter() - start
    _verdict("blocked-vs-random CV gap (blocked RMSE >= random in >= 90% of seeds)",
             wins >= 18, f"wins {wins}/20, {elapsed:.1f}s")


# --- 9. GBRT sanity -----------------------------------------------------------------

E2E_CONFIG = {
    "seed": 42,
    "synth": {"n_samples": 2000, "extent_km": [600, 600], "spatial_range_km": 60,
              "n_informative": 3, "n_noise": 6, "n_redundant": 3, "noise_sd": 0.0,
              "n_strata": 3, "stratum_effect_sd": 0.0, "seed": 42},
    "k": 5,
    "test_fraction": 0.25,
    "featsel": {"iterations": 16, "top_k": 6, "pi_threshold": 0.5},
    "model": {"n_trees": 300, "max_depth": 6},
    "min_labeled": 50,
}


def test_gbrt_sanity(tmp_path):
    # training loss is non-increasing on every fixture
    r = np.random.default_rng(9009)
    fixtures = []
    X1 = r.normal(size=(250, 6))
    fixtures.append((X1, 2 * X1[:, 0] - X1[:, 3] + r.normal(size=250) * 0.2))
    fixtures.append((X1, np.exp(X1[:, 1])))
    fixtures.append((X1, r.normal(size=250)))
    X2 = np.round(r.normal(size=(150, 3)), 1)
    fixtures.append((X2, np.where(X2[:, 0] > 0, 1.0, -1.0)))
    loss_ok = True
    for X, y in fixtures:
        model = fit_gbrt(X, y, GBRTParams(n_trees=80, max_depth=4, seed=0))
        for a, b in zip(model.train_rmse_, model.train_rmse_[1:]):
            if b > a + 1e-12:
                loss_ok = False

    # noiseless planted-signal pipeline through the CLI
    cfg_path = tmp_path / "e2e.json"
    cfg_path.write_text(json.dumps(E2E_CONFIG), encoding="utf-8")
    out = tmp_path / "out"
    code = cli_main(["run", "--config", str(cfg_path), "--out", str(out), "--no-plots"])
    report = json.loads((out / "report.json").read_text())
    pooled = [row for row in report["metrics"]["oof"]["soc_like"]
              if row["dimension"] == "all"][0]
    oof_ccc = pooled["ccc_log1p"]
    _verdict("GBRT sanity (monotone loss; e2e OOF CCC > 0.95)",
             loss_ok and code == 0 and oof_ccc > 0.95,
             f"oof ccc_log1p = {oof_ccc:.4f}")


# --- 10. determinism -----------------------------------------------------------------

def test_cli_determinism(tmp_path):
    cfg_path = tmp_path / "det.json"
    config = json.loads(json.dumps(E2E_CONFIG))
    config["model"]["n_trees"] = 120  # keep the double run quick
    cfg_path.write_text(json.dumps(config), encoding="utf-8")
    outs = []
    for name in ("a", "b"):
        out = tmp_path / name
        code = cli_main(["run", "--config", str(cfg_path), "--out", str(out)])
        assert code == 0
        outs.append(out / "report.json")
    docs = []
    for path in outs:
        doc = json.loads(path.read_text())
        doc.pop("timing")
        docs.append(json.dumps(doc, sort_keys=True))
    _verdict("determinism (identical report.json apart from timing)",
             docs[0] == docs[1],
             f"{len(docs[0])} canonical bytes compared")
