"""Error metrics, persistence baselines, rolling test evaluation and subband ablation.

Test evaluation uses rolling anchors over the test split: at each anchor the
model sees only test-side coefficients, forecasts up to ``horizon`` steps and
every available (anchor, step) pair enters the pooled metrics. The first
anchor is ``lookback + reach - 1``; earlier coefficients of the test split
mix in values from the periodic wrap of the transform. Baselines are scored
on exactly the same pairs.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .data import TimeSeries, subband_features
from .errors import UsageError
from .models import ForecastModel
from .pipeline import forecast_batch
from .swt import WaveletSpec, reach

__all__ = [
    "MAPE_EPSILON",
    "SEASONAL_PERIODS",
    "DEFAULT_HORIZONS",
    "MetricReport",
    "metrics",
    "naive_forecast",
    "seasonal_naive_forecast",
    "evaluation_anchors",
    "EvaluationRun",
    "run_model",
    "evaluate_model",
    "evaluate_baseline",
    "ablate_subbands",
    "horizon_mae_curve",
    "write_report_csv",
    "format_table",
]

MAPE_EPSILON = 1e-6
SEASONAL_PERIODS = {"minutely": 1440, "hourly": 24, "daily": 7, "weekly": 52}
DEFAULT_HORIZONS = {"minutely": 60, "hourly": 60, "daily": 60, "weekly": 48}
REPORT_COLUMNS = ["model", "resolution", "rmse_kw", "mae_kw", "mape_pct"]


@dataclass(frozen=True)
class MetricReport:
    model: str
    resolution: str
    rmse_kw: float
    mae_kw: float
    mape_pct: float
    count: int = 0

    def row(self) -> list:
        return [self.model, self.resolution, self.rmse_kw, self.mae_kw, self.mape_pct]


def metrics(actual, predicted, eps: float = MAPE_EPSILON) -> dict[str, float]:
    """RMSE and MAE in kW and MAPE in percent; MAPE divides by ``max(|y|, eps)``."""
    y = np.asarray(actual, dtype=np.float64).ravel()
    p = np.asarray(predicted, dtype=np.float64).ravel()
    if y.shape != p.shape:
        raise UsageError(f"actual has {y.size} values but predicted has {p.size}")
    if y.size == 0:
        raise UsageError("cannot score an empty forecast")
    err = p - y
    return {
        "rmse_kw": float(np.sqrt(np.mean(err**2))),
        "mae_kw": float(np.mean(np.abs(err))),
        "mape_pct": float(100.0 * np.mean(np.abs(err) / np.maximum(np.abs(y), eps))),
    }


def naive_forecast(history, horizon: int) -> np.ndarray:
    """Repeat the last observation."""
    history = np.asarray(history, dtype=np.float64)
    return np.repeat(history[-1:], horizon)


def seasonal_naive_forecast(history, horizon: int, period: int) -> np.ndarray:
    """``x[t+k] = x[t+k - period*ceil(k/period)]``: repeat the last full season."""
    history = np.asarray(history, dtype=np.float64)
    if history.size < period:
        raise UsageError(f"seasonal naive needs {period} past values, got {history.size}")
    k = np.arange(1, horizon + 1)
    lag = period * np.ceil(k / period).astype(int)
    return history[history.size - 1 + k - lag]


def evaluation_anchors(n_test: int, lookback: int, spec: WaveletSpec) -> np.ndarray:
    """Indices of the last observed test sample for each rolling forecast."""
    first = lookback + reach(spec) - 1
    if first > n_test - 2:
        raise UsageError(
            f"test split of {n_test} points is too short for lookback {lookback} "
            f"plus {reach(spec)} transform steps"
        )
    return np.arange(first, n_test - 1)


@dataclass
class EvaluationRun:
    """Rolling forecasts: ``power[i, k-1]`` predicts ``actual[anchors[i] + k]``."""

    anchors: np.ndarray
    power: np.ndarray
    actual: np.ndarray

    def valid(self) -> np.ndarray:
        """Boolean (anchors, horizon) mask of steps that fall inside the test split."""
        k = np.arange(1, self.power.shape[1] + 1)
        return (self.anchors[:, None] + k[None, :]) < self.actual.size

    def targets(self) -> np.ndarray:
        k = np.arange(1, self.power.shape[1] + 1)
        idx = np.minimum(self.anchors[:, None] + k[None, :], self.actual.size - 1)
        return self.actual[idx]

    def pooled(self):
        mask = self.valid()
        return self.targets()[mask], self.power[mask]

    def mae_by_step(self) -> np.ndarray:
        """MAE per step; NaN where the test split has no ``k``-step target."""
        mask = self.valid()
        err = np.where(mask, np.abs(self.power - self.targets()), 0.0)
        counts = mask.sum(axis=0)
        return np.divide(err.sum(axis=0), counts, out=np.full(counts.shape, np.nan), where=counts > 0)


def run_model(model: ForecastModel, test: TimeSeries, horizon: int, keep=None,
              batch: int = 512, zero_reconstruction: bool = False) -> EvaluationRun:
    cfg = model.config
    spec = WaveletSpec(cfg.wavelet, cfg.levels)
    raw = subband_features(test.values, spec)
    anchors = evaluation_anchors(raw.shape[0], cfg.lookback, spec)
    power = np.empty((anchors.size, horizon))
    n = cfg.lookback
    for a in range(0, anchors.size, batch):
        chunk = anchors[a : a + batch]
        histories = np.stack([raw[i + 1 - n : i + 1] for i in chunk])
        power[a : a + batch] = forecast_batch(
            model, histories, horizon, keep=keep, zero_reconstruction=zero_reconstruction
        )[1]
    return EvaluationRun(anchors, power, np.asarray(test.values, dtype=np.float64))


def _report(name, resolution, actual, predicted) -> MetricReport:
    return MetricReport(name, resolution, count=int(np.size(actual)), **metrics(actual, predicted))


def evaluate_model(model: ForecastModel, test: TimeSeries, horizon: int | None = None,
                   keep=None, name: str | None = None, zero_reconstruction: bool = False) -> MetricReport:
    horizon = horizon or DEFAULT_HORIZONS[test.resolution]
    run = run_model(model, test, horizon, keep=keep, zero_reconstruction=zero_reconstruction)
    return _report(name or model.config.architecture, test.resolution, *run.pooled())


def evaluate_baseline(kind: str, history: TimeSeries, test: TimeSeries, horizon: int | None = None,
                      lookback: int = 30, spec: WaveletSpec | None = None) -> MetricReport:
    """Score ``naive`` or ``seasonal_naive`` on the model's (anchor, step) pairs.

    Baselines may read raw values from before the test split (``history``),
    which seasonal periods longer than the test context require.
    """
    horizon = horizon or DEFAULT_HORIZONS[test.resolution]
    spec = spec or WaveletSpec()
    past = np.asarray(history.values, dtype=np.float64) if history is not None else np.empty(0)
    values = np.concatenate([past, test.values])
    anchors = evaluation_anchors(len(test), lookback, spec)
    k = np.arange(1, horizon + 1)
    if kind == "naive":
        lag = k
    elif kind == "seasonal_naive":
        period = SEASONAL_PERIODS[test.resolution]
        if past.size + anchors[0] + 1 < period:
            raise UsageError(f"seasonal naive needs {period} past values before the first anchor")
        lag = period * np.ceil(k / period).astype(int)
    else:
        raise UsageError(f"unknown baseline {kind!r}; expected naive or seasonal_naive")
    # same rule as naive_forecast / seasonal_naive_forecast, for all anchors at once
    pred = values[past.size + anchors[:, None] + (k - lag)[None, :]]
    run = EvaluationRun(anchors, pred, np.asarray(test.values, dtype=np.float64))
    return _report(kind, test.resolution, *run.pooled())


def ablate_subbands(model: ForecastModel, test: TimeSeries, keep, horizon: int | None = None,
                    zero_reconstruction: bool = False) -> MetricReport:
    """Metrics with only the ``keep`` subbands visible to the model.

    Removed subbands are zeroed in normalized space in every input window.
    By default the inverse transform still uses all predicted subbands;
    ``zero_reconstruction=True`` rebuilds the forecast from the kept ones only.
    """
    keep = [keep] if isinstance(keep, str) else list(keep)
    if not keep:
        raise UsageError("subband mask must keep at least one subband")
    label = f"{model.config.architecture}[{'+'.join(keep)}]"
    if zero_reconstruction:
        label += "/recon"
    return evaluate_model(model, test, horizon, keep=keep, name=label, zero_reconstruction=zero_reconstruction)


def horizon_mae_curve(model: ForecastModel, test: TimeSeries, horizon: int | None = None) -> np.ndarray:
    """MAE at each step ``k = 1..horizon`` over every anchor with a ``k``-step target.

    Steps longer than any anchor's remaining test data come back as NaN.
    """
    horizon = horizon or DEFAULT_HORIZONS[test.resolution]
    return run_model(model, test, horizon).mae_by_step()


def write_report_csv(path, reports) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(REPORT_COLUMNS)
        for r in reports:
            writer.writerow([r.model, r.resolution] + [f"{v:.6f}" for v in r.row()[2:]])


def format_table(reports) -> str:
    rows = [REPORT_COLUMNS] + [
        [r.model, r.resolution, f"{r.rmse_kw:.4f}", f"{r.mae_kw:.4f}", f"{r.mape_pct:.2f}"] for r in reports
    ]
    widths = [max(len(row[i]) for row in rows) for i in range(len(REPORT_COLUMNS))]
    return "\n".join("  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip() for row in rows)

