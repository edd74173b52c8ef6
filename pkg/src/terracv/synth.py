"""Deterministic generator of spatially autocorrelated synthetic datasets.

Latent smooth fields are sums of seeded random cosine basis functions with
wavelengths near the configured autocorrelation range.  Informative
covariates expose those fields, redundant covariates are near-copies (to
exercise the correlation filter), noise covariates are white.  The target is
a known combination of the informative fields plus stratum offsets, an
optional directional trend and noise, optionally exponentiated for skew.
Ground truth (which features matter, stratum effects, category map) is
returned alongside the dataset for oracle checks.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from typing import Mapping

import numpy as np

from .data import Dataset, DepthClass, SampleRecord, is_nonnegative_target
from .spatial import pairwise_km

_ANCHOR_LAT = 45.0
_ANCHOR_LON = 8.0
_KM_PER_DEG_LAT = 6371.0 * math.pi / 180.0
_N_BASIS = 24
_YEARS = (2009, 2012, 2015, 2018)
_CATEGORIES = ("eo", "climate", "terrain")

_SALT_GEN = 307


@dataclass(frozen=True)
class SynthConfig:
    n_samples: int = 2000
    extent_km: tuple[float, float] = (600.0, 600.0)
    spatial_range_km: float = 100.0
    n_informative: int = 5
    n_noise: int = 10
    n_redundant: int = 5
    noise_sd: float = 0.5
    target_skew: str = "none"              # "none" | "lognormal"
    n_strata: int = 3
    stratum_effect_sd: float = 0.0
    latent_share: float = 0.0               # link variance from unobserved smooth fields
    trend: tuple[str, float] | None = None  # ("north"|"east", magnitude)
    seed: int = 0
    target_name: str = "soc_like"
    base_level: float = 20.0
    amplitude: float = 5.0
    depth_mix: tuple[float, float, float] = (0.8, 0.12, 0.08)

    def validate(self) -> None:
        if self.n_samples < 1:
            raise ValueError("n_samples must be positive")
        if self.extent_km[0] <= 0 or self.extent_km[1] <= 0:
            raise ValueError("extent_km must be positive")
        if self.spatial_range_km <= 0:
            raise ValueError("spatial_range_km must be positive")
        for name in ("n_informative", "n_strata"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        for name in ("n_noise", "n_redundant"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.noise_sd < 0:
            raise ValueError("noise_sd must be >= 0")
        if not 0.0 <= self.latent_share < 1.0:
            raise ValueError("latent_share must be in [0, 1)")
        if self.target_skew not in ("none", "lognormal"):
            raise ValueError("target_skew must be 'none' or 'lognormal'")
        if self.trend is not None and self.trend[0] not in ("north", "east"):
            raise ValueError("trend direction must be 'north' or 'east'")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["extent_km"] = list(self.extent_km)
        d["depth_mix"] = list(self.depth_mix)
        d["trend"] = list(self.trend) if self.trend is not None else None
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "SynthConfig":
        d = dict(d)
        if "extent_km" in d:
            d["extent_km"] = tuple(d["extent_km"])
        if "depth_mix" in d:
            d["depth_mix"] = tuple(d["depth_mix"])
        if d.get("trend") is not None:
            d["trend"] = (d["trend"][0], float(d["trend"][1]))
        return cls(**d)


def _cosine_field(rng: np.random.Generator, x: np.ndarray, y: np.ndarray,
                  range_km: float) -> np.ndarray:
    """Smooth random field as a sum of cosine plane waves, standardized."""
    amps = rng.normal(size=_N_BASIS) / math.sqrt(_N_BASIS)
    # A random-direction plane wave decorrelates like J0(2*pi*d/lambda), so
    # wavelengths ~4x the range keep pairs within the range well correlated.
    wavelengths = range_km * rng.uniform(2.5, 6.0, size=_N_BASIS)
    angles = rng.uniform(0.0, 2.0 * math.pi, size=_N_BASIS)
    phases = rng.uniform(0.0, 2.0 * math.pi, size=_N_BASIS)
    field = np.zeros_like(x)
    for a, lam, th, ph in zip(amps, wavelengths, angles, phases):
        proj = x * math.cos(th) + y * math.sin(th)
        field += a * np.cos(2.0 * math.pi * proj / lam + ph)
    sd = field.std()
    if sd > 0:
        field = (field - field.mean()) / sd
    return field


def generate(config: SynthConfig) -> tuple[Dataset, dict]:
    """Build a dataset plus its planted ground truth, fully determined by the seed."""
    config.validate()
    rng = np.random.default_rng([config.seed, _SALT_GEN])
    n = config.n_samples
    width, height = config.extent_km

    x = rng.uniform(0.0, width, size=n)
    y = rng.uniform(0.0, height, size=n)
    lat = _ANCHOR_LAT + y / _KM_PER_DEG_LAT
    lon = _ANCHOR_LON + x / (_KM_PER_DEG_LAT * math.cos(math.radians(_ANCHOR_LAT)))

    # informative fields and their covariate views
    fields = np.column_stack([
        _cosine_field(rng, x, y, config.spatial_range_km)
        for _ in range(config.n_informative)
    ])
    info_names = [
        f"{_CATEGORIES[j % len(_CATEGORIES)]}_sig_{j:02d}" for j in range(config.n_informative)
    ]

    # redundant covariates: scaled near-copies of informative ones
    red_cols = []
    red_names = []
    red_base: dict[str, str] = {}
    for r in range(config.n_redundant):
        base_j = r % config.n_informative
        coef = rng.uniform(0.8, 1.2) * (1.0 if rng.random() < 0.5 else -1.0)
        jitter = rng.normal(size=n) * 0.02
        red_cols.append(coef * fields[:, base_j] + jitter)
        name = f"{_CATEGORIES[r % len(_CATEGORIES)]}_mix_{r:02d}"
        red_names.append(name)
        red_base[name] = info_names[base_j]

    noise_cols = [rng.normal(size=n) for _ in range(config.n_noise)]
    noise_names = [
        f"{_CATEGORIES[j % len(_CATEGORIES)]}_noise_{j:02d}" for j in range(config.n_noise)
    ]

    feature_names = info_names + red_names + noise_names
    X = np.column_stack([fields] + [c[:, None] for c in red_cols] + [c[:, None] for c in noise_cols]) \
        if (red_cols or noise_cols) else fields.copy()

    # strata: nearest of n_strata seeded centers
    centers = np.column_stack([
        rng.uniform(0.0, width, size=config.n_strata),
        rng.uniform(0.0, height, size=config.n_strata),
    ])
    d2 = (x[:, None] - centers[None, :, 0]) ** 2 + (y[:, None] - centers[None, :, 1]) ** 2
    stratum_idx = np.argmin(d2, axis=1)
    stratum_labels = [f"AEZ{i + 1:02d}" for i in range(config.n_strata)]
    strata = np.array([stratum_labels[i] for i in stratum_idx], dtype=object)
    effects = rng.normal(scale=config.stratum_effect_sd, size=config.n_strata) \
        if config.stratum_effect_sd > 0 else np.zeros(config.n_strata)

    weights = rng.uniform(0.5, 1.5, size=config.n_informative)
    weights /= math.sqrt(float(np.sum(weights**2)))
    link = fields @ weights
    if config.latent_share > 0:
        # smooth structure that drives the target but is absent from the
        # covariates: the part only a spatially leaky split can exploit
        latent = _cosine_field(rng, x, y, config.spatial_range_km)
        link = math.sqrt(1.0 - config.latent_share) * link \
            + math.sqrt(config.latent_share) * latent
    link = link + effects[stratum_idx]
    if config.trend is not None:
        direction, magnitude = config.trend
        axis = y / height if direction == "north" else x / width
        link = link + magnitude * (axis - 0.5) * 2.0
    if config.noise_sd > 0:
        link = link + rng.normal(scale=config.noise_sd, size=n)

    if config.target_skew == "lognormal":
        target = config.base_level * np.exp(0.8 * link)
    else:
        target = config.base_level + config.amplitude * link
    if is_nonnegative_target(config.target_name):
        target = np.maximum(target, 0.0)

    years = rng.choice(_YEARS, size=n)
    depth_p = np.asarray(config.depth_mix, dtype=np.float64)
    depth_p = depth_p / depth_p.sum()
    depth_idx = rng.choice(3, size=n, p=depth_p)
    depth_members = list(DepthClass)

    records = []
    for i in range(n):
        records.append(SampleRecord(
            id=f"s{i:06d}",
            lat=float(lat[i]),
            lon=float(lon[i]),
            year=int(years[i]),
            depth_class=depth_members[depth_idx[i]],
            stratum=str(strata[i]),
            targets={config.target_name: float(target[i])},
            covariates=tuple(float(v) for v in X[i]),
        ))
    ds = Dataset(records=tuple(records), feature_names=tuple(feature_names),
                 target_names=(config.target_name,))

    categories = {}
    for name in feature_names:
        categories[name] = name.split("_", 1)[0]
    n_super = 2 if config.n_strata >= 2 else 1
    superclass = {stratum_labels[i]: f"SC{i % n_super + 1}" for i in range(config.n_strata)}

    truth = {
        "config": config.to_dict(),
        "informative": list(info_names),
        "redundant": red_base,
        "noise": list(noise_names),
        "weights": {info_names[j]: float(weights[j]) for j in range(config.n_informative)},
        "stratum_effects": {stratum_labels[i]: float(effects[i]) for i in range(config.n_strata)},
        "categories": categories,
        "superclass": superclass,
        "link": {
            "skew": config.target_skew,
            "base_level": config.base_level,
            "amplitude": config.amplitude,
            "trend": list(config.trend) if config.trend else None,
            "noise_sd": config.noise_sd,
        },
    }
    return ds, truth


def write_truth(truth: dict, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(truth, fh, indent=2, sort_keys=True)
        fh.write("\n")


def spatial_autocorrelation_check(ds, field: str, range_km: float = 100.0) -> dict:
    """Moran-style gap between close-pair and distant-pair covariance.

    Close pairs are nearer than range_km/2, distant pairs farther than
    2*range_km; the gap (close minus distant normalized covariance) is
    positive for spatially structured fields and near zero for white noise.
    """
    if len(ds) < 30:
        raise ValueError("need at least 30 samples")
    if field in ds.feature_names:
        values = ds.feature_matrix()[:, list(ds.feature_names).index(field)]
    elif field in ds.target_names:
        values = ds.target_vector(field)
        if not np.isfinite(values).all():
            raise ValueError("target has missing values")
    else:
        raise KeyError(f"unknown field {field!r}")

    var = float(np.var(values))
    if var == 0.0:
        raise ValueError("field is constant; autocorrelation undefined")

    coords = ds.coords()
    dist = pairwise_km(coords[:, 0], coords[:, 1])
    iu = np.triu_indices(len(ds), k=1)
    d = dist[iu]
    centered = values - values.mean()
    prod = (centered[:, None] * centered[None, :])[iu]

    close = d < range_km / 2.0
    far = d > 2.0 * range_km
    if close.sum() < 30 or far.sum() < 30:
        raise ValueError("too few close or distant pairs for a stable estimate")
    close_corr = float(prod[close].mean()) / var
    far_corr = float(prod[far].mean()) / var
    return {
        "close_corr": close_corr,
        "far_corr": far_corr,
        "gap": close_corr - far_corr,
        "n_close_pairs": int(close.sum()),
        "n_far_pairs": int(far.sum()),
    }
