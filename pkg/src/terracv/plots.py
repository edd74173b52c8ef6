"""Static SVG figures generated from a run report.

Observed-vs-predicted scatter (log1p axes, 1:1 line), the stability curve,
per-stratum NRMSE bars and per-depth CCC bars.  Missing report sections skip
their plot with a warning instead of failing the run.
"""

from __future__ import annotations

import csv
import logging
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

logger = logging.getLogger(__name__)


def _load_predictions(source) -> list[dict]:
    if source is None:
        return []
    if isinstance(source, (str, Path)):
        path = Path(source)
        if not path.exists():
            return []
        with open(path, "r", encoding="utf-8", newline="") as fh:
            return [dict(row) for row in csv.DictReader(fh)]
    return list(source)


def _save(fig, path: Path) -> Path:
    fig.savefig(path, format="svg")
    plt.close(fig)
    return path


def plot_observed_predicted(predictions, target: str, scenario: str, path: Path) -> Path | None:
    rows = [r for r in predictions
            if r["target"] == target and r["scenario"] == scenario]
    if not rows:
        logger.warning("plot skipped: no %s predictions for %s", scenario, target)
        return None
    y = np.array([float(r["y"]) for r in rows])
    yhat = np.array([float(r["yhat"]) for r in rows])
    if np.any(y <= -1) or np.any(yhat <= -1):
        logger.warning("plot skipped: %s has values <= -1, log1p axes undefined", target)
        return None
    ly, lp = np.log1p(y), np.log1p(yhat)
    fig, ax = plt.subplots(figsize=(5, 5))
    ax.scatter(ly, lp, s=6, alpha=0.4, edgecolors="none")
    lims = [min(ly.min(), lp.min()), max(ly.max(), lp.max())]
    ax.plot(lims, lims, "k--", linewidth=1)
    ax.set_xlabel(f"observed {target} (log1p)")
    ax.set_ylabel(f"predicted {target} (log1p)")
    ax.set_title(f"{target} — {scenario}")
    fig.tight_layout()
    return _save(fig, path)


def plot_stability_curve(report: dict, target: str, path: Path) -> Path | None:
    section = report.get("stability", {}).get(target)
    if not section or not section.get("ranked"):
        logger.warning("plot skipped: no stability section for %s", target)
        return None
    pis = [pi for _, pi in section["ranked"]]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(range(1, len(pis) + 1), pis, marker=".", linestyle="-", markersize=3)
    ax.axhline(section.get("threshold", 0.6), color="gray", linestyle=":", linewidth=1)
    ax.set_xlabel("ranked features")
    ax.set_ylabel("selection probability")
    ax.set_ylim(-0.02, 1.02)
    ax.set_title(f"{target} stability curve")
    fig.tight_layout()
    return _save(fig, path)


def _rows_for(report, scenario, target, dimension):
    rows = report.get("metrics", {}).get(scenario, {}).get(target, [])
    return [r for r in rows if r.get("dimension") == dimension and not r.get("unstable")]


def plot_stratum_nrmse(report: dict, target: str, path: Path, scenario: str = "oof") -> Path | None:
    rows = _rows_for(report, scenario, target, "aez")
    rows = [r for r in rows if r.get("nrmse_minmax") is not None]
    if not rows:
        logger.warning("plot skipped: no per-stratum metrics for %s", target)
        return None
    labels = [r["group"] for r in rows]
    vals = [r["nrmse_minmax"] for r in rows]
    fig, ax = plt.subplots(figsize=(max(4, 0.7 * len(rows) + 2), 4))
    ax.bar(labels, vals)
    ax.set_ylabel("NRMSE (min-max)")
    ax.set_title(f"{target} NRMSE by stratum — {scenario}")
    ax.tick_params(axis="x", rotation=45)
    fig.tight_layout()
    return _save(fig, path)


def plot_depth_ccc(report: dict, target: str, path: Path, scenario: str = "test") -> Path | None:
    rows = _rows_for(report, scenario, target, "depth")
    rows = [r for r in rows if r.get("ccc_log1p") is not None]
    if not rows:
        logger.warning("plot skipped: no per-depth metrics for %s", target)
        return None
    labels = [r["group"] for r in rows]
    vals = [r["ccc_log1p"] for r in rows]
    fig, ax = plt.subplots(figsize=(4.5, 4))
    ax.bar(labels, vals)
    ax.set_ylabel("CCC (log1p)")
    ax.set_ylim(0, 1)
    ax.set_title(f"{target} CCC by depth — {scenario}")
    fig.tight_layout()
    return _save(fig, path)


def emit_plots(report: dict, out_dir, predictions=None) -> list[Path]:
    """Write every available figure for every target; returns written paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    prediction_rows = _load_predictions(predictions)
    targets = sorted(report.get("metrics", {}).get("oof", {}).keys()
                     or report.get("stability", {}).keys())
    written: list[Path] = []
    for target in targets:
        for scenario in ("oof", "test"):
            p = plot_observed_predicted(prediction_rows, target, scenario,
                                        out / f"obs_pred_{target}_{scenario}.svg")
            if p:
                written.append(p)
        for fn, name in ((plot_stability_curve, "stability"),
                         (plot_stratum_nrmse, "nrmse_by_stratum"),
                         (plot_depth_ccc, "ccc_by_depth")):
            p = fn(report, target, out / f"{name}_{target}.svg")
            if p:
                written.append(p)
    return written
