"""Household power series: UCI ingestion, imputation, resampling, splits, windows."""

from __future__ import annotations

import csv
import datetime as dt
import logging
from dataclasses import dataclass, field, replace

import numpy as np
import pandas as pd

from .errors import ConfigurationError, DataError, ShapeError
from .swt import WaveletSpec, decompose

__all__ = [
    "RESOLUTIONS",
    "TimeSeries",
    "SupervisedWindows",
    "NormStats",
    "parse_dataset",
    "impute",
    "resample",
    "split",
    "split_boundary",
    "normalize",
    "denormalize",
    "make_windows",
    "pad_to_multiple",
    "subband_features",
    "write_series_csv",
    "read_series_csv",
    "load_series",
]

log = logging.getLogger(__name__)

# minutes per step
RESOLUTIONS = {"minutely": 1, "hourly": 60, "daily": 1440, "weekly": 10080}

MAX_MALFORMED_FRACTION = 0.05
TRAIN_YEARS = 3


@dataclass
class TimeSeries:
    """Timestamped kW values; ``NaN`` marks a missing sample.

    ``origin`` is the first instant of the raw minutely recording and is
    carried through resampling so that splits agree across resolutions.
    """

    timestamps: np.ndarray
    values: np.ndarray
    resolution: str = "minutely"
    origin: np.datetime64 | None = None
    imputed: int = 0

    def __post_init__(self):
        self.timestamps = np.asarray(self.timestamps, dtype="datetime64[m]")
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.resolution not in RESOLUTIONS:
            raise ConfigurationError(f"unknown resolution {self.resolution!r}")
        if self.timestamps.shape != self.values.shape or self.values.ndim != 1:
            raise ShapeError(
                f"timestamps {self.timestamps.shape} and values {self.values.shape} must be equal-length 1-D"
            )
        if self.timestamps.size > 1 and np.any(np.diff(self.timestamps) <= np.timedelta64(0, "m")):
            raise DataError("timestamps must be strictly increasing")
        if self.origin is None and self.timestamps.size:
            self.origin = self.timestamps[0]

    def __len__(self):
        return self.values.size

    @property
    def step(self) -> np.timedelta64:
        return np.timedelta64(RESOLUTIONS[self.resolution], "m")

    @property
    def missing(self) -> np.ndarray:
        return np.isnan(self.values)

    def is_uniform(self) -> bool:
        return self.timestamps.size < 2 or bool(np.all(np.diff(self.timestamps) == self.step))

    def slice(self, start: int, stop: int | None = None) -> "TimeSeries":
        return replace(self, timestamps=self.timestamps[start:stop], values=self.values[start:stop])


@dataclass
class NormStats:
    """Per-feature min/max from the training split; constant features scale by 1."""

    minimum: np.ndarray
    maximum: np.ndarray
    degenerate: np.ndarray = field(default=None)

    def __post_init__(self):
        self.minimum = np.asarray(self.minimum, dtype=np.float64)
        self.maximum = np.asarray(self.maximum, dtype=np.float64)
        if self.degenerate is None:
            self.degenerate = self.maximum == self.minimum
        self.degenerate = np.asarray(self.degenerate, dtype=bool)

    @property
    def scale(self) -> np.ndarray:
        return np.where(self.degenerate, 1.0, self.maximum - self.minimum)


@dataclass
class SupervisedWindows:
    """``inputs[i] = source[i:i+n]`` and ``targets[i] = source[i+n]``."""

    inputs: np.ndarray
    targets: np.ndarray
    target_index: np.ndarray
    source: np.ndarray
    lookback: int
    timestamps: np.ndarray | None = None

    def __len__(self):
        return self.targets.shape[0]

    def target_timestamps(self) -> np.ndarray | None:
        return None if self.timestamps is None else self.timestamps[self.target_index]


# ---------------------------------------------------------------- ingestion


def parse_dataset(path, max_malformed: float = MAX_MALFORMED_FRACTION) -> TimeSeries:
    """Read the UCI ``household_power_consumption.txt`` layout.

    Only ``Global_active_power`` (kW) is kept. ``?`` marks a missing value;
    rows that cannot be parsed are skipped and logged, and more than
    ``max_malformed`` of them is an error.
    """
    dates, powers, linenos, bad_lines = [], [], [], []
    with open(path, encoding="utf-8", errors="replace") as fh:
        header = fh.readline().strip().split(";")
        if header[:3] != ["Date", "Time", "Global_active_power"]:
            raise DataError(f"{path}: unexpected header {header[:3]}")
        for lineno, line in enumerate(fh, start=2):
            parts = line.rstrip("\r\n").split(";", 3)
            if len(parts) < 3:
                if line.strip():
                    bad_lines.append(lineno)
                continue
            dates.append(parts[0] + " " + parts[1])
            powers.append(parts[2].strip())
            linenos.append(lineno)

    stamps = pd.to_datetime(pd.Series(dates, dtype=object), format="%d/%m/%Y %H:%M:%S", errors="coerce")
    raw = pd.Series(powers, dtype=object)
    sentinel = raw.eq("?") | raw.eq("")
    values = pd.to_numeric(raw.where(~sentinel), errors="coerce").to_numpy(dtype=np.float64)
    unparsable = (np.isnan(values) & ~sentinel.to_numpy()) | stamps.isna().to_numpy()
    bad_lines.extend(np.asarray(linenos)[unparsable].tolist())

    total = len(dates) + len(bad_lines) - int(unparsable.sum())
    if bad_lines:
        for ln in sorted(bad_lines)[:20]:
            log.warning("%s: skipping malformed line %d", path, ln)
        if len(bad_lines) > 20:
            log.warning("%s: %d further malformed lines skipped", path, len(bad_lines) - 20)
    if total and len(bad_lines) / total > max_malformed:
        raise DataError(
            f"{path}: {len(bad_lines)} of {total} rows malformed (> {max_malformed:.0%})"
        )

    keep = ~unparsable
    ts = stamps.to_numpy()[keep].astype("datetime64[m]")
    vals = values[keep]
    order = np.argsort(ts, kind="stable")
    ts, vals = ts[order], vals[order]
    dup = np.concatenate([[False], ts[1:] == ts[:-1]])
    if dup.any():
        log.warning("%s: dropping %d duplicate timestamps", path, int(dup.sum()))
        ts, vals = ts[~dup], vals[~dup]
    series = TimeSeries(ts, vals, "minutely")
    log.info("%s: %d rows, %d missing", path, len(series), int(series.missing.sum()))
    return series


# ---------------------------------------------------------------- cleaning


def impute(series: TimeSeries, max_fill: int = 60, neighbor_days: int = 7) -> TimeSeries:
    """Fill gaps on a uniform grid.

    Runs of at most ``max_fill`` missing steps are forward-filled. Longer runs
    take the mean of the same clock time on up to ``neighbor_days`` days
    before and after (observed values only), falling back to forward fill.
    A leading gap is back-filled from the first observation. Observed values
    are never changed.
    """
    step = series.step
    if len(series) == 0:
        return series
    n_steps = int((series.timestamps[-1] - series.timestamps[0]) // step) + 1
    grid = series.timestamps[0] + np.arange(n_steps) * step
    values = np.full(n_steps, np.nan)
    pos = ((series.timestamps - series.timestamps[0]) // step).astype(np.int64)
    values[pos] = series.values
    observed = ~np.isnan(values)
    if not observed.any():
        raise DataError("series has no observed values to impute from")
    missing = ~observed
    filled = values.copy()

    first = int(np.argmax(observed))
    filled[:first] = values[first]

    # run-length encode interior gaps
    edges = np.diff(np.concatenate([[0], missing[first:].astype(np.int8), [0]]))
    starts = np.flatnonzero(edges == 1) + first
    stops = np.flatnonzero(edges == -1) + first

    ffill_idx = np.where(observed, np.arange(n_steps), 0)
    np.maximum.accumulate(ffill_idx, out=ffill_idx)
    per_day = max(1, int(np.timedelta64(1, "D") // step))
    offsets = per_day * np.concatenate([-np.arange(neighbor_days, 0, -1), np.arange(1, neighbor_days + 1)])

    for a, b in zip(starts, stops):
        idx = np.arange(a, b)
        if b - a <= max_fill:
            filled[idx] = values[ffill_idx[idx]]
            continue
        cand = idx[:, None] + offsets[None, :]
        ok = (cand >= 0) & (cand < n_steps)
        cand_vals = np.where(ok, values[np.clip(cand, 0, n_steps - 1)], np.nan)
        has = ~np.all(np.isnan(cand_vals), axis=1)
        means = np.zeros(idx.size)
        means[has] = np.nanmean(cand_vals[has], axis=1)
        filled[idx] = np.where(has, means, values[ffill_idx[idx]])

    count = int(missing.sum())
    if count:
        log.info("imputed %d of %d samples (%.2f%%)", count, n_steps, 100.0 * count / n_steps)
    return TimeSeries(grid, filled, series.resolution, series.origin, series.imputed + count)


def _bucket_start(ts: np.ndarray, resolution: str) -> np.ndarray:
    if resolution == "minutely":
        return ts.astype("datetime64[m]")
    if resolution == "hourly":
        return ts.astype("datetime64[h]").astype("datetime64[m]")
    days = ts.astype("datetime64[D]")
    if resolution == "daily":
        return days.astype("datetime64[m]")
    # 1970-01-01 was a Thursday; shift so Monday starts a week
    weekday = (days.astype(np.int64) + 3) % 7
    return (days - weekday.astype("timedelta64[D]")).astype("datetime64[m]")


def resample(series: TimeSeries, resolution: str) -> TimeSeries:
    """Average into hour/day/ISO-week buckets, dropping incomplete edge buckets."""
    if resolution not in RESOLUTIONS:
        raise ConfigurationError(f"unknown resolution {resolution!r}")
    src, dst = RESOLUTIONS[series.resolution], RESOLUTIONS[resolution]
    if dst < src or dst % src:
        raise ConfigurationError(f"cannot resample {series.resolution} to {resolution}")
    if np.isnan(series.values).any():
        raise DataError("resample requires an imputed series (NaN present)")
    if dst == src:
        return series
    keys = _bucket_start(series.timestamps, resolution)
    starts = np.flatnonzero(np.concatenate([[True], keys[1:] != keys[:-1]]))
    sums = np.add.reduceat(series.values, starts)
    counts = np.diff(np.concatenate([starts, [keys.size]]))
    full = counts == dst // src
    return TimeSeries(keys[starts][full], sums[full] / counts[full], resolution, series.origin, series.imputed)


def split_boundary(series: TimeSeries, years: int = TRAIN_YEARS) -> np.datetime64:
    """Midnight of the day ``years`` calendar years after the recording start."""
    origin = (series.origin if series.origin is not None else series.timestamps[0]).astype("datetime64[D]")
    day = origin.astype(dt.date)
    try:
        shifted = day.replace(year=day.year + years)
    except ValueError:  # 29 February
        shifted = day.replace(year=day.year + years, day=28)
    return np.datetime64(shifted, "m")


def split(series: TimeSeries, boundary=None, years: int = TRAIN_YEARS) -> tuple[TimeSeries, TimeSeries]:
    """Train = samples before the boundary, test = from the boundary on."""
    boundary = split_boundary(series, years) if boundary is None else np.datetime64(boundary, "m")
    if len(series) == 0 or series.timestamps[-1] < boundary:
        raise ConfigurationError(f"series ends before the train/test boundary {boundary}")
    cut = int(np.searchsorted(series.timestamps, boundary, side="left"))
    return series.slice(0, cut), series.slice(cut)


# ---------------------------------------------------------------- features


def normalize(features, stats: NormStats | None = None) -> tuple[np.ndarray, NormStats]:
    """Per-column min-max scaling to [0, 1] on the fitting data; no clipping afterwards."""
    x = np.asarray(features, dtype=np.float64)
    if stats is None:
        stats = NormStats(x.min(axis=0), x.max(axis=0))
        if stats.degenerate.any():
            log.warning("constant feature columns %s scaled by 1", np.flatnonzero(stats.degenerate).tolist())
    if stats.minimum.shape != x.shape[-1:]:
        raise ShapeError(f"stats for {stats.minimum.shape} features applied to {x.shape}")
    return (x - stats.minimum) / stats.scale, stats


def denormalize(normalized, stats: NormStats) -> np.ndarray:
    return np.asarray(normalized, dtype=np.float64) * stats.scale + stats.minimum


def make_windows(features, n: int, timestamps=None) -> SupervisedWindows:
    """Sliding windows of ``n`` consecutive vectors with the next vector as target."""
    source = np.asarray(features, dtype=np.float64)
    N = source.shape[0]
    if not 1 <= n < N:
        raise ConfigurationError(f"lookback {n} must be in [1, {N})")
    view = np.lib.stride_tricks.sliding_window_view(source, n, axis=0)[: N - n]
    inputs = np.ascontiguousarray(np.moveaxis(view, -1, 1))
    return SupervisedWindows(
        inputs=inputs,
        targets=source[n:].copy(),
        target_index=np.arange(n, N),
        source=source,
        lookback=n,
        timestamps=timestamps,
    )


def pad_to_multiple(values, multiple: int) -> np.ndarray:
    """Append copies of the last value up to the next multiple of ``multiple``."""
    values = np.asarray(values, dtype=np.float64)
    extra = (-values.size) % multiple
    return np.concatenate([values, np.repeat(values[-1:], extra)]) if extra else values


def subband_features(values, spec: WaveletSpec) -> np.ndarray:
    """(N, 2L) coefficient matrix of one split, padded for the transform then trimmed."""
    values = np.asarray(values, dtype=np.float64)
    padded = pad_to_multiple(values, 2**spec.levels)
    return decompose(padded, spec).features()[: values.size]


# ---------------------------------------------------------------- CSV


def write_series_csv(path, series: TimeSeries) -> None:
    stamps = np.datetime_as_string(series.timestamps, unit="m")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["timestamp", "value_kw"])
        for t, v in zip(stamps, series.values):
            writer.writerow([t, repr(float(v))])


def read_series_csv(path, resolution: str | None = None) -> TimeSeries:
    """Read ``timestamp,value_kw``; the resolution is inferred from spacing if not given."""
    frame = pd.read_csv(path)
    if list(frame.columns[:2]) != ["timestamp", "value_kw"]:
        raise DataError(f"{path}: expected columns timestamp,value_kw, got {list(frame.columns)}")
    ts = pd.to_datetime(frame["timestamp"]).to_numpy().astype("datetime64[m]")
    values = frame["value_kw"].to_numpy(dtype=np.float64)
    if resolution is None:
        if ts.size < 2:
            raise DataError(f"{path}: cannot infer resolution from fewer than two rows")
        minutes = int(np.median(np.diff(ts)).astype(np.int64))
        matches = [k for k, v in RESOLUTIONS.items() if v == minutes]
        if not matches:
            raise DataError(f"{path}: spacing of {minutes} minutes is not a known resolution")
        resolution = matches[0]
    return TimeSeries(ts, values, resolution)


def load_series(path, resolution: str = "daily") -> TimeSeries:
    """UCI text file or canonical CSV, imputed and resampled to ``resolution``."""
    path = str(path)
    if path.endswith(".csv"):
        series = read_series_csv(path)
    else:
        series = parse_dataset(path)
    if np.isnan(series.values).any() or not series.is_uniform():
        series = impute(series)
    return resample(series, resolution)
