"""Multivariate time-series container and loaders.

In memory a missing observation is NaN inside a float array; on disk it is an
empty CSV cell or a JSON null. Sentinel numerics (-999 and friends) are never
interpreted as missing.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
import json

import numpy as np
import pandas as pd

_TIMESTAMP_NAMES = {"time", "timestamp", "date", "datetime", "date time"}


@dataclass
class SeriesDataset:
    """Ordered observations for one or more features of equal length.

    timestamps, when present, must be strictly increasing and match the
    series length; sampling_period is an optional positive duration in
    seconds.
    """

    feature_names: list[str]
    values: dict[str, np.ndarray]
    timestamps: np.ndarray | None = None
    sampling_period: float | None = None

    def __post_init__(self):
        if not self.feature_names:
            raise ValueError("dataset needs at least one feature")
        lengths = set()
        for name in self.feature_names:
            if name not in self.values:
                raise ValueError(f"missing values for feature {name!r}")
            arr = np.asarray(self.values[name], dtype=float)
            self.values[name] = arr
            lengths.add(arr.shape[0])
        if len(lengths) != 1:
            raise ValueError(f"feature sequences differ in length: {sorted(lengths)}")
        self._length = lengths.pop()
        if self._length < 1:
            raise ValueError("feature sequences are empty")
        if self.timestamps is not None:
            ts = np.asarray(self.timestamps)
            if ts.shape[0] != self._length:
                raise ValueError("timestamp count does not match series length")
            if ts.shape[0] > 1 and not np.all(ts[1:] > ts[:-1]):
                raise ValueError("timestamps must be strictly increasing")
            self.timestamps = ts
        if self.sampling_period is not None and self.sampling_period <= 0:
            raise ValueError("sampling_period must be positive")

    def __len__(self) -> int:
        return self._length

    def feature(self, name: str) -> np.ndarray:
        return self.values[name]

    def matrix(self) -> np.ndarray:
        """Observations as a (T, n_features) array in feature order."""
        return np.column_stack([self.values[n] for n in self.feature_names])

    def has_missing(self) -> bool:
        return any(np.isnan(self.values[n]).any() for n in self.feature_names)

    def drop_incomplete_rows(self) -> tuple["SeriesDataset", int]:
        """Remove rows where any feature is NA.

        Returns the reduced dataset and the number of rows dropped. This is
        the framework's missing-value policy for model training; feature
        statistics tolerate NAs directly and do not need it.
        """
        mat = self.matrix()
        keep = ~np.isnan(mat).any(axis=1)
        dropped = int((~keep).sum())
        if dropped == 0:
            return self, 0
        values = {n: self.values[n][keep] for n in self.feature_names}
        ts = self.timestamps[keep] if self.timestamps is not None else None
        return SeriesDataset(list(self.feature_names), values, ts, self.sampling_period), dropped

    def to_json_dict(self) -> dict:
        out: dict = {
            "feature_names": list(self.feature_names),
            "values": {
                n: [None if np.isnan(v) else float(v) for v in self.values[n]]
                for n in self.feature_names
            },
        }
        if self.timestamps is not None:
            out["timestamps"] = [_jsonable(t) for t in self.timestamps]
        if self.sampling_period is not None:
            out["sampling_period"] = self.sampling_period
        return out


def _jsonable(t):
    if isinstance(t, (np.integer, int)):
        return int(t)
    if isinstance(t, (np.floating, float)):
        return float(t)
    return str(t)


def load_csv(path: str | Path) -> SeriesDataset:
    """Read a header-row CSV: one optional timestamp column, one column per feature.

    A column is treated as the timestamp axis when its header is a common
    time name (time/timestamp/date/datetime) or when it is the first column
    and non-numeric. Empty cells and the usual NA spellings become NaN.
    """
    df = pd.read_csv(path)
    if df.shape[1] == 0:
        raise ValueError(f"{path}: no columns")
    ts = None
    cols = list(df.columns)
    ts_col = None
    for c in cols:
        if str(c).strip().lower() in _TIMESTAMP_NAMES:
            ts_col = c
            break
    if ts_col is None and not pd.api.types.is_numeric_dtype(df[cols[0]]):
        ts_col = cols[0]
    if ts_col is not None:
        raw = df[ts_col]
        if pd.api.types.is_numeric_dtype(raw):
            ts = raw.to_numpy()
        else:
            ts = pd.to_datetime(raw).astype("int64").to_numpy()  # ns since epoch
        cols = [c for c in cols if c != ts_col]
    if not cols:
        raise ValueError(f"{path}: no feature columns")
    values = {str(c): pd.to_numeric(df[c], errors="coerce").to_numpy(dtype=float) for c in cols}
    return SeriesDataset([str(c) for c in cols], values, timestamps=ts)


def load_json(path: str | Path) -> SeriesDataset:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    values = {
        n: np.array([np.nan if v is None else float(v) for v in doc["values"][n]], dtype=float)
        for n in doc["feature_names"]
    }
    ts = np.asarray(doc["timestamps"]) if "timestamps" in doc else None
    return SeriesDataset(
        list(doc["feature_names"]), values, timestamps=ts,
        sampling_period=doc.get("sampling_period"),
    )


def load_dataset(path: str | Path) -> SeriesDataset:
    """Dispatch on extension: .json for the dataset JSON format, else CSV."""
    p = Path(path)
    if p.suffix.lower() == ".json":
        return load_json(p)
    return load_csv(p)


def save_csv(dataset: SeriesDataset, path: str | Path) -> None:
    data = {}
    if dataset.timestamps is not None:
        data["timestamp"] = dataset.timestamps
    for n in dataset.feature_names:
        data[n] = dataset.values[n]
    pd.DataFrame(data).to_csv(path, index=False)
