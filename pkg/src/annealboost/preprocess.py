"""Tabular ingestion, KNN imputation, encoding, scaling and splitting.

Also hosts :func:`synth_ed`, a generator of emergency-department visits with
the same columns as the clinical table and a documented logistic ground truth
for the LBTC label.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from datetime import datetime, timedelta
from pathlib import Path
from typing import Any, Iterable, Optional, Sequence

import numpy as np
import pandas as pd

ROLES = ("numeric", "categorical_onehot", "categorical_ordinal", "arrival_timestamp", "label", "drop")

SMOKING_MAP = {"unknown": 0, "never": 1, "former": 2, "exposure": 3, "current": 4}
LABEL_MAP = {"sat": 0, "lbtc": 1, "0": 0, "1": 1}
UNKNOWN_CATEGORY = "unknown"


@dataclass(frozen=True)
class ColumnSchema:
    name: str
    role: str
    mapping: Optional[dict] = None

    def __post_init__(self):
        if self.role not in ROLES:
            raise ValueError(f"column {self.name!r}: unknown role {self.role!r}")

    def to_dict(self) -> dict:
        d = {"name": self.name, "role": self.role}
        if self.mapping is not None:
            d["mapping"] = dict(self.mapping)
        return d


def parse_schema(items: Iterable[dict]) -> list[ColumnSchema]:
    schema = [ColumnSchema(d["name"], d["role"], d.get("mapping")) for d in items]
    labels = [c for c in schema if c.role == "label"]
    if len(labels) != 1:
        raise ValueError(f"schema needs exactly one label column, found {len(labels)}")
    names = [c.name for c in schema]
    if len(set(names)) != len(names):
        raise ValueError("schema column names must be unique")
    return schema


def load_schema(path: str | Path) -> list[ColumnSchema]:
    with open(path) as fh:
        return parse_schema(json.load(fh))


@dataclass(frozen=True)
class Dataset:
    """Feature table plus a 0/1 label vector (1 = LBTC).

    ``schema`` describes the current feature columns, in order. Missing cells
    are NaN. Transformations return new datasets and never mutate in place.
    """

    frame: pd.DataFrame
    labels: np.ndarray
    schema: tuple[ColumnSchema, ...] = field(default=())

    def __post_init__(self):
        if len(self.frame) != len(self.labels):
            raise ValueError("frame and labels differ in length")

    @property
    def columns(self) -> list[str]:
        return list(self.frame.columns)

    @property
    def n_rows(self) -> int:
        return len(self.labels)

    @property
    def X(self) -> np.ndarray:
        try:
            return self.frame.to_numpy(dtype=np.float64)
        except (TypeError, ValueError) as exc:
            raise ValueError("dataset still has non-numeric columns; encode it first") from exc

    @property
    def y(self) -> np.ndarray:
        return self.labels

    def n_missing(self) -> int:
        return int(self.frame.isna().to_numpy().sum())

    def role_of(self, name: str) -> str:
        for c in self.schema:
            if c.name == name:
                return c.role
        return "numeric"

    def take(self, rows: Sequence[int]) -> "Dataset":
        rows = np.asarray(rows, dtype=np.int64)
        return Dataset(self.frame.iloc[rows].reset_index(drop=True), self.labels[rows].copy(), self.schema)

    def select(self, columns: Sequence[str]) -> "Dataset":
        missing = [c for c in columns if c not in self.frame.columns]
        if missing:
            raise ValueError(f"unknown columns: {missing}")
        schema = tuple(c for c in self.schema if c.name in set(columns))
        return Dataset(self.frame[list(columns)].copy(), self.labels.copy(), schema)

    @classmethod
    def from_arrays(cls, X, y, columns: Sequence[str] | None = None) -> "Dataset":
        X = np.asarray(X, dtype=np.float64)
        if columns is None:
            columns = [f"x{j}" for j in range(X.shape[1])]
        frame = pd.DataFrame(X, columns=list(columns))
        schema = tuple(ColumnSchema(c, "numeric") for c in columns)
        return cls(frame, np.asarray(y, dtype=np.int64), schema)

    def to_csv(self, path: str | Path, label_name: str = "label") -> None:
        out = self.frame.copy()
        out[label_name] = self.labels
        out.to_csv(path, index=False, float_format="%.12g", lineterminator="\n")


def read_numeric_csv(path: str | Path, label_name: str = "label") -> Dataset:
    """Read a table written by :meth:`Dataset.to_csv`."""
    df = pd.read_csv(path)
    y = df.pop(label_name).to_numpy(dtype=np.int64)
    schema = tuple(ColumnSchema(c, "numeric") for c in df.columns)
    return Dataset(df.astype(np.float64), y, schema)


# -- loading -----------------------------------------------------------------

def _parse_label(value: str, mapping: Optional[dict]) -> int:
    table = {str(k).lower(): int(v) for k, v in (mapping or LABEL_MAP).items()}
    key = value.strip().lower()
    if key not in table:
        raise ValueError(f"unrecognised label value {value!r}")
    return table[key]


def _ordinal_table(col: ColumnSchema) -> dict[str, int]:
    mapping = col.mapping if col.mapping is not None else SMOKING_MAP
    return {str(k).lower(): int(v) for k, v in mapping.items()}


def load_table(path: str | Path, schema: Sequence[ColumnSchema] | Sequence[dict]) -> Dataset:
    schema = [c if isinstance(c, ColumnSchema) else ColumnSchema(**c) for c in schema]
    schema = parse_schema(c.to_dict() for c in schema)
    raw = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    absent = [c.name for c in schema if c.name not in raw.columns]
    if absent:
        raise ValueError(f"columns missing from {path}: {absent}")

    label_col = next(c for c in schema if c.role == "label")
    labels = np.array([_parse_label(v, label_col.mapping) for v in raw[label_col.name]], dtype=np.int64)

    data: dict[str, Any] = {}
    kept = []
    for col in schema:
        if col.role in ("label", "drop"):
            continue
        cells = raw[col.name]
        if col.role == "numeric":
            values = np.empty(len(cells))
            for i, cell in enumerate(cells):
                cell = cell.strip()
                if cell == "":
                    values[i] = np.nan
                    continue
                try:
                    values[i] = float(cell)
                except ValueError:
                    raise ValueError(f"{col.name}, row {i + 1}: cannot parse {cell!r} as a number") from None
            data[col.name] = values
        else:
            stripped = [c.strip() for c in cells]
            if col.role == "categorical_ordinal":
                table = _ordinal_table(col)
                bad = sorted({c for c in stripped if c and c.lower() not in table})
                if bad:
                    raise ValueError(f"{col.name}: unmapped categories {bad}")
            data[col.name] = pd.Series([c if c else np.nan for c in stripped], dtype=object)
        kept.append(col)
    frame = pd.DataFrame(data, columns=[c.name for c in kept])
    return Dataset(frame, labels, tuple(kept))


# -- imputation --------------------------------------------------------------

def _k_nearest(dist: np.ndarray, kth: float, k: int) -> np.ndarray:
    # ties at the k-th distance resolve to the lowest row index
    closer = np.flatnonzero(dist < kth)
    tied = np.flatnonzero(dist == kth)[: k - len(closer)]
    return np.concatenate([closer, tied])


def knn_impute(ds: Dataset, k: int = 5) -> Dataset:
    """Fill missing numeric cells with the mean of the ``k`` nearest donors.

    Distances are Euclidean on min-max scaled numeric columns, restricted to
    the columns observed in the row being imputed (coordinates missing in a
    donor are skipped and the sum is re-weighted, as in nan-Euclidean
    distance). Donors for a column are the rows where that column is
    observed. Non-numeric columns are left untouched.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    num_cols = [c for c in ds.columns if ds.role_of(c) == "numeric"]
    if not num_cols:
        return ds
    A = ds.frame[num_cols].to_numpy(dtype=np.float64)
    miss = np.isnan(A)
    if not miss.any():
        return ds
    all_missing = [c for c, m in zip(num_cols, miss.all(axis=0)) if m]
    if all_missing:
        raise ValueError(f"columns missing in every row: {all_missing}")

    lo = np.nanmin(A, axis=0)
    span = np.nanmax(A, axis=0) - lo
    span[span == 0] = 1.0
    Z = (A - lo) / span
    Zf = np.where(miss, 0.0, Z)
    present = (~miss).astype(np.float64)

    out = A.copy()
    rows = np.flatnonzero(miss.any(axis=1))
    patterns, inverse = np.unique(miss[rows], axis=0, return_inverse=True)
    for p, pattern in enumerate(patterns):
        obs = ~pattern
        targets = np.flatnonzero(pattern)
        group = rows[inverse.ravel() == p]
        for chunk in np.array_split(group, max(1, len(group) // 256)):
            if obs.any():
                # nan-Euclidean distance over the columns this pattern observes
                diff = (Zf[None, :, obs] - Z[chunk][:, None, obs]) * present[None, :, obs]
                n_common = present[:, obs].sum(axis=1)
                with np.errstate(divide="ignore", invalid="ignore"):
                    dist = np.sqrt((diff ** 2).sum(axis=2) * obs.sum() / n_common[None, :])
                dist[:, n_common == 0] = np.inf
            else:
                dist = np.zeros((len(chunk), len(A)))
            dist[np.arange(len(chunk)), chunk] = np.inf
            # columns sharing a donor set share their neighbours
            by_donors: dict[bytes, list[int]] = {}
            for c in targets:
                by_donors.setdefault((~miss[:, c]).tobytes(), []).append(c)
            for cols in by_donors.values():
                d = np.where(~miss[:, cols[0]][None, :], dist, np.inf)
                if np.sum(np.isfinite(d), axis=1).min() < k:
                    raise ValueError(f"{num_cols[cols[0]]}: fewer than k={k} donors")
                kth = np.partition(d, k - 1, axis=1)[:, k - 1]
                for j, r in enumerate(chunk):
                    nearest = _k_nearest(d[j], kth[j], k)
                    out[r, cols] = A[nearest][:, cols].mean(axis=0)

    frame = ds.frame.copy()
    for j, c in enumerate(num_cols):
        frame[c] = out[:, j]
    return Dataset(frame, ds.labels.copy(), ds.schema)


# -- encoding ----------------------------------------------------------------

def encode(ds: Dataset, schema: Sequence[ColumnSchema] | None = None) -> Dataset:
    """One-hot and ordinal encoding.

    One-hot columns are named ``base=category`` (categories sorted; a missing
    cell becomes the ``unknown`` category). Ordinal columns without an explicit
    mapping use the smoking-status map.
    """
    schema = tuple(schema) if schema is not None else ds.schema
    roles = {c.name: c for c in schema}
    pieces: dict[str, np.ndarray] = {}
    new_schema = []
    for name in ds.columns:
        col = roles.get(name, ColumnSchema(name, "numeric"))
        cells = ds.frame[name]
        if col.role == "categorical_onehot":
            values = [UNKNOWN_CATEGORY if (isinstance(v, float) and math.isnan(v)) else str(v) for v in cells]
            for cat in sorted(set(values)):
                cname = f"{name}={cat}"
                pieces[cname] = np.array([1.0 if v == cat else 0.0 for v in values])
                new_schema.append(ColumnSchema(cname, "numeric"))
        elif col.role == "categorical_ordinal":
            table = _ordinal_table(col)
            mapped = np.empty(len(cells))
            for i, v in enumerate(cells):
                key = UNKNOWN_CATEGORY if (isinstance(v, float) and math.isnan(v)) else str(v).lower()
                if key not in table:
                    raise ValueError(f"{name}: unmapped category {v!r}")
                mapped[i] = table[key]
            pieces[name] = mapped
            new_schema.append(ColumnSchema(name, "numeric"))
        else:
            pieces[name] = cells.to_numpy()
            new_schema.append(col)
    frame = pd.DataFrame(pieces, columns=[c.name for c in new_schema])
    return Dataset(frame, ds.labels.copy(), tuple(new_schema))


def expand_timestamp(value: str) -> tuple[int, int, int]:
    """ISO-8601 local datetime -> (month 1-12, weekday 1-7 with Monday=1, hour 0-23)."""
    try:
        ts = datetime.fromisoformat(str(value).strip())
    except ValueError:
        raise ValueError(f"unparseable timestamp {value!r}") from None
    return ts.month, ts.isoweekday(), ts.hour


def expand_arrival_time(ds: Dataset) -> Dataset:
    pieces: dict[str, Any] = {}
    new_schema = []
    for col in (ds.schema or tuple(ColumnSchema(c, "numeric") for c in ds.columns)):
        if col.role == "arrival_timestamp":
            parts = np.array([expand_timestamp(v) for v in ds.frame[col.name]], dtype=np.float64).reshape(-1, 3)
            for j, suffix in enumerate(("month", "weekday", "hour")):
                cname = f"{col.name}_{suffix}"
                pieces[cname] = parts[:, j]
                new_schema.append(ColumnSchema(cname, "numeric"))
        else:
            pieces[col.name] = ds.frame[col.name].to_numpy()
            new_schema.append(col)
    frame = pd.DataFrame(pieces, columns=[c.name for c in new_schema])
    return Dataset(frame, ds.labels.copy(), tuple(new_schema))


# -- scaling and splitting ---------------------------------------------------

def scale_minmax(ds: Dataset) -> tuple[Dataset, dict[str, tuple[float, float]]]:
    X = ds.X
    if np.isnan(X).any():
        raise ValueError("impute missing values before scaling")
    lo = X.min(axis=0)
    hi = X.max(axis=0)
    ranges = {c: (float(a), float(b)) for c, a, b in zip(ds.columns, lo, hi)}
    return apply_minmax(ds, ranges), ranges


def apply_minmax(ds: Dataset, ranges: dict[str, tuple[float, float]]) -> Dataset:
    """Apply stored ranges verbatim; constant training columns map to 0."""
    frame = ds.frame.copy()
    for c in ds.columns:
        lo, hi = ranges[c]
        x = frame[c].to_numpy(dtype=np.float64)
        frame[c] = np.zeros_like(x) if hi == lo else (x - lo) / (hi - lo)
    return Dataset(frame, ds.labels.copy(), ds.schema)


def split(ds: Dataset, ratio: float = 0.8, stratified: bool = True,
          seed: int = 0) -> tuple[Dataset, Dataset]:
    if not 0 < ratio < 1:
        raise ValueError("ratio must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    n = ds.n_rows
    if stratified:
        train_idx = []
        for cls in (0, 1):
            members = np.flatnonzero(ds.labels == cls)
            if len(members) == 0:
                continue
            if len(members) < 2:
                raise ValueError(f"class {cls} has fewer than 2 rows; cannot stratify")
            n_train = int(round(ratio * len(members)))
            n_train = min(max(n_train, 1), len(members) - 1)
            train_idx.append(rng.permutation(members)[:n_train])
        train_idx = np.concatenate(train_idx)
    else:
        n_train = int(round(ratio * n))
        train_idx = rng.permutation(n)[:n_train]
    train_mask = np.zeros(n, dtype=bool)
    train_mask[train_idx] = True
    return ds.take(np.flatnonzero(train_mask)), ds.take(np.flatnonzero(~train_mask))


def prepare(path: str | Path, schema: Sequence[ColumnSchema], k: int = 5) -> Dataset:
    """load -> impute -> encode -> expand, leaving scaling to after the split."""
    ds = load_table(path, schema)
    ds = knn_impute(ds, k)
    ds = encode(ds)
    return expand_arrival_time(ds)


# -- synthetic ED visits -----------------------------------------------------

# Share of rows with each column blank (vitals are mostly missing together).
MISSING_RATES = {
    "respiratory_rate": 0.272,
    "o2_saturation": 0.269,
    "bmi": 0.257,
    "systolic_bp": 0.257,
    "diastolic_bp": 0.257,
    "pulse_rate": 0.257,
    "temperature_f": 0.257,
    "esi_score": 0.266,
}
VITALS_BLOCK_RATE = 0.257

# Ground-truth log-odds coefficients on standardised features.
GROUND_TRUTH = {
    "waiting_time": {"coef": 1.6, "center": 3.5, "scale": 0.8, "transform": "log"},
    "arrival_hour": {"coef": 0.6, "center": 13.0, "scale": 5.0, "transform": "identity"},
    "esi_score": {"coef": -0.5, "center": 3.0, "scale": 0.9, "transform": "identity"},
    "patient_age": {"coef": -0.6, "center": 45.0, "scale": 19.0, "transform": "identity"},
    "pulse_rate": {"coef": -0.4, "center": 85.0, "scale": 15.0, "transform": "identity"},
}

SYNTH_SCHEMA = [
    {"name": "respiratory_rate", "role": "numeric"},
    {"name": "o2_saturation", "role": "numeric"},
    {"name": "bmi", "role": "numeric"},
    {"name": "systolic_bp", "role": "numeric"},
    {"name": "diastolic_bp", "role": "numeric"},
    {"name": "pulse_rate", "role": "numeric"},
    {"name": "temperature_f", "role": "numeric"},
    {"name": "esi_score", "role": "numeric"},
    {"name": "patient_sex", "role": "categorical_onehot"},
    {"name": "patient_age", "role": "numeric"},
    {"name": "waiting_time", "role": "numeric"},
    {"name": "ed_location_id", "role": "numeric"},
    {"name": "arrival", "role": "arrival_timestamp"},
    {"name": "physician_assessment", "role": "drop"},
    {"name": "patient_ethnicity", "role": "categorical_onehot"},
    {"name": "smoking_status", "role": "categorical_ordinal", "mapping": dict(SMOKING_MAP)},
    {"name": "disposition", "role": "label", "mapping": {"SAT": 0, "LBTC": 1}},
]

ETHNICITIES = ["Hispanic or Latino", "Not Hispanic or Latino", "Unavailable"]


def _solve_intercept(lin: np.ndarray, prevalence: float) -> float:
    lo, hi = -30.0, 30.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if np.mean(1.0 / (1.0 + np.exp(-(lin + mid)))) < prevalence:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def synth_ed(n: int, prevalence: float = 0.06, seed: int = 0) -> tuple[pd.DataFrame, list[dict], dict]:
    """Generate ``n`` synthetic ED visits.

    Returns the raw table (strings, blanks for missing cells), its schema and
    the ground-truth sidecar. The label follows a logistic model in which
    longer waits and later arrival raise the LBTC odds while higher ESI score,
    age and pulse rate lower them.
    """
    if n < 100:
        raise ValueError("n must be at least 100")
    if not 0 < prevalence < 1:
        raise ValueError("prevalence must lie in (0, 1)")
    rng = np.random.default_rng(seed)

    age = np.clip(np.round(rng.normal(45, 19, n)), 1, 99)
    sex = np.where(rng.random(n) < 0.52, "F", "M")
    ethnicity = rng.choice(ETHNICITIES, size=n, p=[0.2, 0.7, 0.1])
    smoking = rng.choice(list(SMOKING_MAP), size=n, p=[0.15, 0.45, 0.2, 0.05, 0.15])
    location = rng.integers(1, 5, n)
    esi = rng.choice([1, 2, 3, 4, 5], size=n, p=[0.02, 0.2, 0.5, 0.23, 0.05])
    wait = np.round(np.exp(rng.normal(3.5, 0.8, n)), 1)
    hour_p = np.array([1, 1, 1, 1, 1, 2, 3, 4, 5, 6, 6, 6, 6, 6, 6, 6, 5, 5, 5, 4, 4, 3, 2, 2], float)
    hour = rng.choice(24, size=n, p=hour_p / hour_p.sum())
    day = rng.integers(0, 730, n)
    minute = rng.integers(0, 60, n)
    second = rng.integers(0, 60, n)
    vitals = {
        "respiratory_rate": np.round(rng.normal(18, 3, n)),
        "o2_saturation": np.clip(np.round(rng.normal(97, 2, n)), 70, 100),
        "bmi": np.round(np.clip(rng.normal(28, 6, n), 14, 60), 1),
        "systolic_bp": np.round(rng.normal(132, 20, n)),
        "diastolic_bp": np.round(rng.normal(80, 12, n)),
        "pulse_rate": np.round(rng.normal(85, 15, n)),
        "temperature_f": np.round(rng.normal(98.4, 0.8, n), 1),
    }
    raw_values = {"waiting_time": wait, "arrival_hour": hour.astype(float), "esi_score": esi.astype(float),
                  "patient_age": age, "pulse_rate": vitals["pulse_rate"]}
    lin = np.zeros(n)
    for name, gt in GROUND_TRUTH.items():
        x = raw_values[name]
        if gt["transform"] == "log":
            x = np.log(x)
        lin += gt["coef"] * (x - gt["center"]) / gt["scale"]
    intercept = _solve_intercept(lin, prevalence)
    prob = 1.0 / (1.0 + np.exp(-(lin + intercept)))
    for _ in range(1000):
        label = (rng.random(n) < prob).astype(int)
        if abs(label.mean() - prevalence) <= 0.01:
            break

    block = rng.random(n) < VITALS_BLOCK_RATE
    masks = {}
    for name, rate in MISSING_RATES.items():
        extra = (rate - VITALS_BLOCK_RATE) / (1 - VITALS_BLOCK_RATE)
        masks[name] = block | (rng.random(n) < extra)

    base = datetime(2018, 1, 1)
    arrivals = [base + timedelta(days=int(d), hours=int(h), minutes=int(m), seconds=int(s))
                for d, h, m, s in zip(day, hour, minute, second)]
    assessments = [a + timedelta(minutes=float(w)) for a, w in zip(arrivals, wait)]

    def fmt(values, mask=None, digits=0):
        out = [f"{v:.{digits}f}" for v in values]
        if mask is not None:
            out = ["" if m else s for s, m in zip(out, mask)]
        return out

    table = pd.DataFrame({
        "respiratory_rate": fmt(vitals["respiratory_rate"], masks["respiratory_rate"]),
        "o2_saturation": fmt(vitals["o2_saturation"], masks["o2_saturation"]),
        "bmi": fmt(vitals["bmi"], masks["bmi"], 1),
        "systolic_bp": fmt(vitals["systolic_bp"], masks["systolic_bp"]),
        "diastolic_bp": fmt(vitals["diastolic_bp"], masks["diastolic_bp"]),
        "pulse_rate": fmt(vitals["pulse_rate"], masks["pulse_rate"]),
        "temperature_f": fmt(vitals["temperature_f"], masks["temperature_f"], 1),
        "esi_score": fmt(esi, masks["esi_score"]),
        "patient_sex": sex,
        "patient_age": fmt(age),
        "waiting_time": fmt(wait, digits=1),
        "ed_location_id": fmt(location),
        "arrival": [a.isoformat() for a in arrivals],
        "physician_assessment": [a.isoformat(timespec="seconds") for a in assessments],
        "patient_ethnicity": ethnicity,
        "smoking_status": smoking,
        "disposition": np.where(label == 1, "LBTC", "SAT"),
    })
    truth = {
        "intercept": intercept,
        "features": {k: dict(v) for k, v in GROUND_TRUTH.items()},
        "prevalence_target": prevalence,
        "prevalence_realized": float(label.mean()),
        "n": n,
        "seed": seed,
    }
    return table, [dict(c) for c in SYNTH_SCHEMA], truth


def write_synth(out_dir: str | Path, n: int, prevalence: float = 0.06, seed: int = 0) -> dict[str, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    table, schema, truth = synth_ed(n, prevalence, seed)
    paths = {
        "table": out_dir / "ed_visits.csv",
        "schema": out_dir / "schema.json",
        "ground_truth": out_dir / "ground_truth.json",
    }
    table.to_csv(paths["table"], index=False, lineterminator="\n")
    paths["schema"].write_text(json.dumps(schema, indent=2) + "\n")
    paths["ground_truth"].write_text(json.dumps(truth, indent=2, sort_keys=True) + "\n")
    return paths
