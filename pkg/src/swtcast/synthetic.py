"""Synthetic household load with UCI-like structure, for offline demos and tests.

The generator mimics the coarse statistics of a single-family meter: a
two-peak daily profile, weekend and winter uplift, day-to-day persistence,
an August absence, appliance bursts and a small fraction of missing minutes.
It is not a substitute for the measured dataset.
"""

from __future__ import annotations

import numpy as np

from .data import TimeSeries

__all__ = ["UCI_START", "UCI_END", "household_load", "write_uci"]

UCI_START = "2006-12-16T17:24"
UCI_END = "2010-11-26T21:02"

UCI_HEADER = (
    "Date;Time;Global_active_power;Global_reactive_power;Voltage;"
    "Global_intensity;Sub_metering_1;Sub_metering_2;Sub_metering_3"
)


def household_load(
    start: str = UCI_START,
    end: str = UCI_END,
    seed: int = 0,
    missing_fraction: float = 0.0125,
) -> TimeSeries:
    """Minutely global active power in kW between ``start`` and ``end`` inclusive."""
    rng = np.random.default_rng(seed)
    t0 = np.datetime64(start, "m")
    n = int((np.datetime64(end, "m") - t0) // np.timedelta64(1, "m")) + 1
    stamps = t0 + np.arange(n).astype("timedelta64[m]")

    minute_of_day = (stamps - stamps.astype("datetime64[D]")).astype(np.int64)
    hour = minute_of_day / 60.0
    days = stamps.astype("datetime64[D]")
    day_index = (days - days[0]).astype(np.int64)
    weekday = (days.astype(np.int64) + 3) % 7
    day_of_year = (days - days.astype("datetime64[Y]")).astype(np.int64)
    month = days.astype("datetime64[M]").astype(np.int64) % 12 + 1

    profile = (
        0.39
        + 1.05 * np.exp(-0.5 * ((hour - 7.8) / 1.1) ** 2)
        + 1.75 * np.exp(-0.5 * ((hour - 20.0) / 1.8) ** 2)
        + 0.35 * np.exp(-0.5 * ((hour - 13.0) / 1.5) ** 2)
    )
    weekend = np.where(weekday >= 5, 1.0 + 0.25 * np.exp(-0.5 * ((hour - 13.0) / 3.0) ** 2), 1.0)
    season = 1.0 + 0.35 * np.cos(2.0 * np.pi * (day_of_year - 15) / 365.25)

    n_days = int(day_index[-1]) + 1
    level = np.empty(n_days)
    level[0] = 0.0
    shocks = rng.normal(0.0, 0.22, n_days)
    for d in range(1, n_days):
        level[d] = 0.65 * level[d - 1] + shocks[d]
    daily = np.exp(level)[day_index]

    away = np.ones(n)
    for year in np.unique(days.astype("datetime64[Y]")):
        first = np.datetime64(f"{year}-08-01") + np.timedelta64(int(rng.integers(0, 10)), "D")
        length = np.timedelta64(int(rng.integers(10, 20)), "D")
        away[(days >= first) & (days < first + length)] = 0.35
    away[(month == 8) & (away == 1.0)] *= 0.85

    bursts = np.zeros(n)
    n_events = rng.poisson(n / 180)
    at = rng.integers(0, n, n_events)
    dur = rng.integers(3, 40, n_events)
    power = rng.gamma(2.0, 0.7, n_events)
    for a, d, p in zip(at, dur, power):
        bursts[a : a + d] += p

    noise = rng.lognormal(0.0, 0.25, n)
    values = np.maximum((profile * weekend * season * daily * away) * noise + bursts * away, 0.076)
    values = np.round(values, 3)

    if missing_fraction > 0:
        target = int(missing_fraction * n)
        gap_mask = np.zeros(n, dtype=bool)
        # mostly short outages plus a few multi-day ones
        while gap_mask.sum() < target:
            long_gap = rng.random() < 0.08
            length = int(rng.integers(1440, 5 * 1440)) if long_gap else int(rng.integers(1, 90))
            a = int(rng.integers(1, n - length))
            gap_mask[a : a + length] = True
        values[gap_mask] = np.nan
    return TimeSeries(stamps, values, "minutely")


def write_uci(series: TimeSeries, path) -> None:
    """Write ``series`` in the semicolon-separated UCI layout (``?`` for missing)."""
    stamps = series.timestamps.astype("datetime64[s]").astype(object)
    with open(path, "w") as fh:
        fh.write(UCI_HEADER + "\n")
        for ts, v in zip(stamps, series.values):
            date = f"{ts.day}/{ts.month}/{ts.year}"
            clock = ts.strftime("%H:%M:%S")
            if np.isnan(v):
                fh.write(f"{date};{clock};?;?;?;?;?;?;\n")
            else:
                fh.write(f"{date};{clock};{v:.3f};0.100;240.00;{v * 4.2:.1f};0.000;0.000;0.000\n")
