"""Canonical sample data model, CSV ingestion and summaries.

A dataset is an immutable collection of georeferenced records, each holding a
location, survey year, depth class, stratum label, per-target values (missing
allowed) and a fixed-width covariate vector.  Loading validates schema and
physical invariants row by row: structural problems (missing columns,
duplicated ids) abort the load, cell-level violations reject only the
offending row and are reported with row/column identity.
"""

from __future__ import annotations

import csv
import enum
import logging
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

logger = logging.getLogger(__name__)


class LoadError(Exception):
    """Structural problem that prevents loading a dataset at all."""


class DepthClass(enum.Enum):
    D0_30 = "0-30"
    D30_60 = "30-60"
    D60_PLUS = "60+"

    @property
    def token(self) -> str:
        return self.value

    @classmethod
    def from_token(cls, token: str) -> "DepthClass":
        for member in cls:
            if member.value == token:
                return member
        raise ValueError(f"unknown depth class token {token!r}; expected one of "
                         f"{[m.value for m in cls]}")


# Physical plausibility bounds keyed by canonical target name (case-insensitive).
# (low, high, low_inclusive, high_inclusive); None = unbounded.
TARGET_BOUNDS: dict[str, tuple[float | None, float | None, bool, bool]] = {
    "ph": (0.0, 14.0, False, False),
    "soc": (0.0, None, True, True),
    "n": (0.0, None, True, True),
    "p": (0.0, None, True, True),
    "k": (0.0, None, True, True),
}


def target_bounds_for(name: str):
    return TARGET_BOUNDS.get(name.strip().lower())


def is_nonnegative_target(name: str) -> bool:
    b = target_bounds_for(name)
    return b is not None and b[0] == 0.0 and b[2]


def _check_target_value(name: str, value: float) -> str | None:
    if not math.isfinite(value):
        return f"target {name} is not finite"
    bounds = target_bounds_for(name)
    if bounds is None:
        return None
    lo, hi, lo_inc, hi_inc = bounds
    if lo is not None and (value < lo or (not lo_inc and value == lo)):
        return f"target {name}={value} below physical bound"
    if hi is not None and (value > hi or (not hi_inc and value == hi)):
        return f"target {name}={value} above physical bound"
    return None


@dataclass(frozen=True)
class SampleRecord:
    """One georeferenced observation."""

    id: str
    lat: float
    lon: float
    year: int
    depth_class: DepthClass
    stratum: str
    targets: Mapping[str, float | None]
    covariates: tuple[float, ...]

    def validate(self) -> None:
        if not -90.0 <= self.lat <= 90.0:
            raise ValueError(f"record {self.id}: lat {self.lat} out of [-90, 90]")
        if not -180.0 <= self.lon <= 180.0:
            raise ValueError(f"record {self.id}: lon {self.lon} out of [-180, 180]")
        for name, value in self.targets.items():
            if value is None:
                continue
            msg = _check_target_value(name, value)
            if msg:
                raise ValueError(f"record {self.id}: {msg}")
        for v in self.covariates:
            if not math.isfinite(v):
                raise ValueError(f"record {self.id}: non-finite covariate")


@dataclass(frozen=True)
class Dataset:
    """Immutable ordered collection of records with named features/targets."""

    records: tuple[SampleRecord, ...]
    feature_names: tuple[str, ...]
    target_names: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "records", tuple(self.records))
        object.__setattr__(self, "feature_names", tuple(self.feature_names))
        object.__setattr__(self, "target_names", tuple(self.target_names))
        width = len(self.feature_names)
        seen: set[str] = set()
        for rec in self.records:
            rec.validate()
            if len(rec.covariates) != width:
                raise ValueError(
                    f"record {rec.id}: covariate width {len(rec.covariates)} != {width}"
                )
            if rec.id in seen:
                raise ValueError(f"duplicate record id {rec.id!r}")
            seen.add(rec.id)

    def __len__(self) -> int:
        return len(self.records)

    # Matrix/vector views are built once and memoised; the frozen dataclass
    # stores them via object.__setattr__ (not fields, so equality ignores them).
    def feature_matrix(self) -> np.ndarray:
        cached = self.__dict__.get("_X")
        if cached is None:
            cached = np.array([r.covariates for r in self.records], dtype=np.float64)
            cached = cached.reshape(len(self.records), len(self.feature_names))
            object.__setattr__(self, "_X", cached)
        return cached

    def target_vector(self, name: str) -> np.ndarray:
        if name not in self.target_names:
            raise KeyError(f"unknown target {name!r}")
        vals = [r.targets.get(name) for r in self.records]
        return np.array([np.nan if v is None else v for v in vals], dtype=np.float64)

    def ids(self) -> tuple[str, ...]:
        return tuple(r.id for r in self.records)

    def strata(self) -> np.ndarray:
        return np.array([r.stratum for r in self.records], dtype=object)

    def depth_tokens(self) -> np.ndarray:
        return np.array([r.depth_class.token for r in self.records], dtype=object)

    def coords(self) -> np.ndarray:
        return np.array([(r.lat, r.lon) for r in self.records], dtype=np.float64)


@dataclass(frozen=True)
class ColumnSchema:
    """Maps CSV columns onto the data model.

    ``covariates=None`` takes every unmapped column, in header order.
    """

    id: str = "id"
    lat: str = "lat"
    lon: str = "lon"
    year: str = "year"
    depth_class: str = "depth_class"
    stratum: str = "stratum"
    targets: Mapping[str, str] = field(default_factory=dict)
    covariates: Sequence[str] | None = None

    def required_columns(self) -> list[str]:
        cols = [self.id, self.lat, self.lon, self.year, self.depth_class, self.stratum]
        cols.extend(self.targets.values())
        if self.covariates is not None:
            cols.extend(self.covariates)
        return cols

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "lat": self.lat,
            "lon": self.lon,
            "year": self.year,
            "depth_class": self.depth_class,
            "stratum": self.stratum,
            "targets": dict(self.targets),
            "covariates": list(self.covariates) if self.covariates is not None else None,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "ColumnSchema":
        return cls(
            id=d.get("id", "id"),
            lat=d.get("lat", "lat"),
            lon=d.get("lon", "lon"),
            year=d.get("year", "year"),
            depth_class=d.get("depth_class", "depth_class"),
            stratum=d.get("stratum", "stratum"),
            targets=dict(d.get("targets", {})),
            covariates=list(d["covariates"]) if d.get("covariates") is not None else None,
        )


@dataclass(frozen=True)
class RowIssue:
    """Diagnostic for one rejected row."""

    row: int  # 1-based data row index (header excluded)
    column: str
    message: str


def load_dataset(path, schema: ColumnSchema) -> tuple[Dataset, list[RowIssue]]:
    """Load a delimited UTF-8 file into a Dataset.

    Returns the dataset plus diagnostics for every rejected row.  Raises
    :class:`LoadError` for structural problems: missing columns, duplicated
    ids, or no valid rows at all.
    """
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise LoadError(f"{path}: empty file") from None
        rows = list(reader)

    col_index = {name: i for i, name in enumerate(header)}
    missing = [c for c in schema.required_columns() if c not in col_index]
    if missing:
        raise LoadError(f"{path}: missing required column(s) {missing}")

    if schema.covariates is None:
        mapped = set(schema.required_columns())
        covariate_cols = [c for c in header if c not in mapped]
    else:
        covariate_cols = list(schema.covariates)
    target_items = list(schema.targets.items())

    records: list[SampleRecord] = []
    issues: list[RowIssue] = []
    ids_seen: dict[str, int] = {}
    duplicates: list[str] = []

    def cell(row, col):
        i = col_index[col]
        return row[i].strip() if i < len(row) else ""

    for ridx, row in enumerate(rows, start=1):
        bad: RowIssue | None = None

        rid = cell(row, schema.id)
        if not rid:
            bad = RowIssue(ridx, schema.id, "empty id")
        lat = lon = 0.0
        year = 0
        depth = DepthClass.D0_30
        stratum = ""
        if bad is None:
            try:
                lat = float(cell(row, schema.lat))
                if not (math.isfinite(lat) and -90.0 <= lat <= 90.0):
                    bad = RowIssue(ridx, schema.lat, f"latitude {lat} out of range")
            except ValueError:
                bad = RowIssue(ridx, schema.lat, f"non-numeric latitude {cell(row, schema.lat)!r}")
        if bad is None:
            try:
                lon = float(cell(row, schema.lon))
                if not (math.isfinite(lon) and -180.0 <= lon <= 180.0):
                    bad = RowIssue(ridx, schema.lon, f"longitude {lon} out of range")
            except ValueError:
                bad = RowIssue(ridx, schema.lon, f"non-numeric longitude {cell(row, schema.lon)!r}")
        if bad is None:
            try:
                year = int(cell(row, schema.year))
            except ValueError:
                bad = RowIssue(ridx, schema.year, f"non-integer year {cell(row, schema.year)!r}")
        if bad is None:
            try:
                depth = DepthClass.from_token(cell(row, schema.depth_class))
            except ValueError as exc:
                bad = RowIssue(ridx, schema.depth_class, str(exc))
        if bad is None:
            stratum = cell(row, schema.stratum)
            if not stratum:
                bad = RowIssue(ridx, schema.stratum, "empty stratum label")

        targets: dict[str, float | None] = {}
        if bad is None:
            for tname, tcol in target_items:
                raw = cell(row, tcol)
                if raw == "":
                    targets[tname] = None
                    continue
                try:
                    value = float(raw)
                except ValueError:
                    bad = RowIssue(ridx, tcol, f"non-numeric target value {raw!r}")
                    break
                msg = _check_target_value(tname, value)
                if msg:
                    bad = RowIssue(ridx, tcol, msg)
                    break
                targets[tname] = value

        covs: list[float] = []
        if bad is None:
            for ccol in covariate_cols:
                raw = cell(row, ccol)
                if raw == "":
                    bad = RowIssue(ridx, ccol, "missing covariate value")
                    break
                try:
                    v = float(raw)
                except ValueError:
                    bad = RowIssue(ridx, ccol, f"non-numeric covariate {raw!r}")
                    break
                if not math.isfinite(v):
                    bad = RowIssue(ridx, ccol, f"non-finite covariate {raw!r}")
                    break
                covs.append(v)

        if bad is not None:
            issues.append(bad)
            logger.warning("rejected row %d (%s): %s", bad.row, bad.column, bad.message)
            continue

        if rid in ids_seen:
            duplicates.append(rid)
            continue
        ids_seen[rid] = ridx
        records.append(SampleRecord(
            id=rid, lat=lat, lon=lon, year=year, depth_class=depth,
            stratum=stratum, targets=targets, covariates=tuple(covs),
        ))

    if duplicates:
        raise LoadError(f"{path}: duplicated id(s) {sorted(set(duplicates))}")
    if not records:
        raise LoadError(f"{path}: no valid rows ({len(issues)} rejected)")

    ds = Dataset(
        records=tuple(records),
        feature_names=tuple(covariate_cols),
        target_names=tuple(schema.targets.keys()),
    )
    return ds, issues


def save_dataset(ds: Dataset, path) -> None:
    """Write the canonical CSV layout; floats round-trip exactly via repr."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        header = ["id", "lat", "lon", "year", "depth_class", "stratum"]
        header.extend(ds.target_names)
        header.extend(ds.feature_names)
        writer.writerow(header)
        for rec in ds.records:
            row = [rec.id, repr(rec.lat), repr(rec.lon), str(rec.year),
                   rec.depth_class.token, rec.stratum]
            for t in ds.target_names:
                v = rec.targets.get(t)
                row.append("" if v is None else repr(v))
            row.extend(repr(v) for v in rec.covariates)
            writer.writerow(row)


def default_schema(target_names: Sequence[str]) -> ColumnSchema:
    """Schema matching :func:`save_dataset` output."""
    return ColumnSchema(targets={t: t for t in target_names})


def _quantile(values: np.ndarray, q: float) -> float:
    # Linear interpolation between order statistics (NumPy default), the
    # single convention used everywhere outside conformal calibration.
    return float(np.quantile(values, q))


def _target_summary(values: np.ndarray) -> dict:
    finite = values[np.isfinite(values)]
    if finite.size == 0:
        return {"count": 0, "median": None, "iqr": None, "q25": None, "q75": None}
    q25 = _quantile(finite, 0.25)
    q75 = _quantile(finite, 0.75)
    return {
        "count": int(finite.size),
        "median": _quantile(finite, 0.5),
        "iqr": q75 - q25,
        "q25": q25,
        "q75": q75,
    }


def summarize(ds: Dataset) -> dict:
    """Per-target count/median/IQR with a per-stratum breakdown."""
    if len(ds) == 0:
        raise ValueError("cannot summarize an empty dataset")
    strata = ds.strata()
    out: dict = {"n": len(ds), "targets": {}, "strata": {}}
    target_values = {t: ds.target_vector(t) for t in ds.target_names}
    for t, vals in target_values.items():
        out["targets"][t] = _target_summary(vals)
    for label in sorted(set(strata)):
        mask = strata == label
        entry = {"count": int(mask.sum()), "targets": {}}
        for t, vals in target_values.items():
            entry["targets"][t] = _target_summary(vals[mask])
        out["strata"][label] = entry
    return out
