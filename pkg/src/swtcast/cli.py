"""Command-line interface: ``swtcast <command> [options]``.

Settings come from built-in defaults, then an optional ``--config`` file of
``key = value`` lines, then the ``SWTCAST_DATA`` environment variable (for
the dataset path), then command-line flags. Every command that writes into
an output directory also writes ``config.txt`` (the effective settings) and
``manifest.json`` (outputs and their sha256). If a command fails, the files
it created are removed.
"""

from __future__ import annotations

import argparse
import csv
import functools
import hashlib
import json
import logging
import os
import sys
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

import numpy as np

from . import __version__
from .data import (
    RESOLUTIONS,
    TimeSeries,
    impute,
    pad_to_multiple,
    parse_dataset,
    read_series_csv,
    resample,
    split,
    subband_features,
)
from .errors import SwtcastError, TrainingDiverged, UsageError
from .evaluation import (
    DEFAULT_HORIZONS,
    ablate_subbands,
    evaluate_baseline,
    evaluate_model,
    format_table,
    horizon_mae_curve,
    write_report_csv,
)
from .models import PRESETS, ModelConfig, load, save
from .pipeline import TrainConfig, fit, forecast
from .swt import WaveletSpec, decompose, read_subbands_csv, reconstruct, write_subbands_csv

log = logging.getLogger("swtcast")

DATA_ENV = "SWTCAST_DATA"
DEFAULT_DATA = "data/household_power_consumption.txt"
PAD_LABEL = "pad"


@dataclass(frozen=True)
class RunConfig:
    data: str = DEFAULT_DATA
    resolution: str = "daily"
    architecture: str = "transformer"
    lookback: int = 30
    horizon: int = 0  # 0 means the per-resolution default
    epochs: int = 100
    fine_tune_epochs: int = 5
    fine_tune_stages: int = 4
    learning_rate: float = 1e-3
    batch_size: int = 32
    wavelet: str = "db1"
    levels: int = 3
    seed: int = 0
    out: str = "runs/latest"

    def effective_horizon(self, resolution: str | None = None) -> int:
        return self.horizon or DEFAULT_HORIZONS[resolution or self.resolution]

    def model_config(self) -> ModelConfig:
        if self.architecture not in PRESETS:
            raise UsageError(f"unknown architecture {self.architecture!r}; choose from {sorted(PRESETS)}")
        return ModelConfig(
            **PRESETS[self.architecture],
            lookback=self.lookback,
            wavelet=self.wavelet,
            levels=self.levels,
            seed=self.seed,
        )

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            learning_rate=self.learning_rate,
            batch_size=self.batch_size,
            epochs=self.epochs,
            fine_tune_epochs=self.fine_tune_epochs,
            fine_tune_stages=self.fine_tune_stages,
            horizon=self.effective_horizon(),
            seed=self.seed,
        )

    def dump(self) -> str:
        return "".join(f"{k} = {v}\n" for k, v in asdict(self).items())


_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}
_CASTS = {"int": int, "float": float, "str": str}


def _coerce(key: str, value):
    if key not in _FIELD_TYPES:
        raise UsageError(f"unknown setting {key!r}; known: {sorted(_FIELD_TYPES)}")
    try:
        return _CASTS[_FIELD_TYPES[key]](value)
    except ValueError as exc:
        raise UsageError(f"setting {key}: cannot parse {value!r} as {_FIELD_TYPES[key]}") from exc


def read_config_file(path) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    settings = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{lineno}: expected 'key = value', got {line!r}")
            key, value = (part.strip() for part in line.split("=", 1))
            settings[key] = _coerce(key, value)
    return settings


def resolve_config(args: argparse.Namespace, environ=os.environ) -> RunConfig:
    cfg = RunConfig()
    if getattr(args, "config", None):
        cfg = replace(cfg, **read_config_file(args.config))
    if environ.get(DATA_ENV):
        cfg = replace(cfg, data=environ[DATA_ENV])
    overrides = {
        name: getattr(args, name)
        for name in _FIELD_TYPES
        if getattr(args, name, None) is not None
    }
    cfg = replace(cfg, **{k: _coerce(k, v) for k, v in overrides.items()})
    if cfg.resolution not in RESOLUTIONS:
        raise UsageError(f"unknown resolution {cfg.resolution!r}; choose from {list(RESOLUTIONS)}")
    return cfg


# ---------------------------------------------------------------- output bookkeeping


class Outputs:
    """Tracks files a command creates so they can be removed if it fails."""

    def __init__(self, directory: Path | None):
        self.directory = directory
        self.created: list[Path] = []
        self.keep_on_failure: set[Path] = set()

    def path(self, name: str) -> Path:
        target = self.directory / name
        self.created.append(target)
        return target

    def file(self, path) -> Path:
        path = Path(path)
        self.created.append(path)
        return path

    def cleanup(self) -> None:
        for p in self.created:
            if p not in self.keep_on_failure:
                for candidate in (p, Path(f"{p}.tmp")):
                    if candidate.exists():
                        candidate.unlink()

    def finish(self, command: str, cfg: RunConfig | None) -> None:
        if self.directory is None:
            return
        if cfg is not None:
            self.path("config.txt").write_text(cfg.dump())
        outputs = {
            p.name: hashlib.sha256(p.read_bytes()).hexdigest()
            for p in sorted(self.created)
            if p.exists()
        }
        manifest = {"command": command, "version": __version__, "outputs": outputs}
        if cfg is not None:
            manifest["config"] = asdict(cfg)
        self.path("manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _out_dir(cfg: RunConfig) -> Path:
    directory = Path(cfg.out)
    directory.mkdir(parents=True, exist_ok=True)
    return directory


# ---------------------------------------------------------------- data helpers


@functools.lru_cache(maxsize=2)
def _base_series(path: str) -> TimeSeries:
    series = read_series_csv(path) if path.endswith(".csv") else parse_dataset(path)
    if np.isnan(series.values).any() or not series.is_uniform():
        series = impute(series)
    return series


def _load_split(cfg: RunConfig, resolution: str) -> tuple[TimeSeries, TimeSeries]:
    if not Path(cfg.data).exists():
        raise FileNotFoundError(
            f"dataset not found at {cfg.data!r}; set {DATA_ENV} or the 'data' setting"
        )
    return split(resample(_base_series(str(cfg.data)), resolution))


def _fmt(value: float) -> str:
    return repr(float(value))


# ---------------------------------------------------------------- commands


def cmd_decompose(args, cfg: RunConfig, out: Outputs) -> None:
    series = read_series_csv(args.input)
    spec = WaveletSpec(cfg.wavelet, cfg.levels)
    values, index = series.values, list(np.datetime_as_string(series.timestamps, unit="m"))
    block = 2**spec.levels
    if values.size % block:
        if not args.pad:
            raise UsageError(
                f"{values.size} samples is not a multiple of {block}; pass --pad to extend with the last value"
            )
        values = pad_to_multiple(values, block)
        index += [PAD_LABEL] * (values.size - len(index))
    write_subbands_csv(out.file(args.output), decompose(values, spec), index)


def cmd_reconstruct(args, cfg: RunConfig, out: Outputs) -> None:
    index, subbands = read_subbands_csv(args.input, cfg.wavelet)
    signal = reconstruct(subbands)
    with open(out.file(args.output), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["timestamp", "value_kw"])
        for t, v in zip(index, signal):
            if t != PAD_LABEL:
                writer.writerow([t, _fmt(v)])


def _write_history(path, records, with_stage=False) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow((["stage"] if with_stage else []) + ["epoch", "train_loss", "val_loss"])
        for r in records:
            writer.writerow(([r.stage] if with_stage else []) + [r.epoch, _fmt(r.train_loss), _fmt(r.val_loss)])


def cmd_train(args, cfg: RunConfig, out: Outputs) -> None:
    train, _ = _load_split(cfg, cfg.resolution)
    try:
        result = fit(train, cfg.model_config(), cfg.train_config())
    except TrainingDiverged as exc:
        history = out.path("history.csv")
        _write_history(history, exc.history)
        out.keep_on_failure.add(history)
        raise
    save(result.model, out.path("model.ckpt"))
    _write_history(out.path("history.csv"), result.history)
    _write_history(out.path("fine_tune_history.csv"), result.fine_tune_history, with_stage=True)
    last = result.history[-1] if result.history else None
    if last is not None:
        print(f"trained {cfg.epochs} epochs: train loss {last.train_loss:.6f}, val loss {last.val_loss:.6f}")
    print(f"checkpoint written to {out.directory / 'model.ckpt'}")


def _checkpoint_split(cfg: RunConfig, model):
    resolution = model.metadata.get("resolution", cfg.resolution)
    train, test = _load_split(cfg, resolution)
    return resolution, train, test


def cmd_forecast(args, cfg: RunConfig, out: Outputs) -> None:
    model = load(args.checkpoint)
    resolution, _, test = _checkpoint_split(cfg, model)
    horizon = cfg.effective_horizon(resolution)
    spec = WaveletSpec(model.config.wavelet, model.config.levels)
    n = model.config.lookback
    if args.anchor is None:
        anchor = n - 1
    else:
        stamp = np.datetime64(args.anchor, "m")
        hits = np.flatnonzero(test.timestamps == stamp)
        if hits.size == 0:
            raise UsageError(
                f"anchor {args.anchor} is not a {resolution} timestamp of the test range "
                f"{test.timestamps[0]} .. {test.timestamps[-1]}"
            )
        anchor = int(hits[0])
    if anchor < n - 1:
        raise UsageError(f"anchor {test.timestamps[anchor]} has only {anchor + 1} of the {n} context steps")
    raw = subband_features(test.values, spec)
    result = forecast(model, raw[: anchor + 1], horizon, anchor=str(test.timestamps[anchor]))
    step = test.step
    with open(out.path("forecast.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "timestamp", "predicted_kw", "actual_kw"])
        for k in range(1, horizon + 1):
            ts = np.datetime_as_string(test.timestamps[anchor] + k * step, unit="m")
            idx = anchor + k
            actual = _fmt(test.values[idx]) if idx < len(test) else ""
            writer.writerow([k, ts, _fmt(result.power[k - 1]), actual])
    print(f"{horizon}-step forecast from {result.anchor} written to {out.directory / 'forecast.csv'}")


def cmd_evaluate(args, cfg: RunConfig, out: Outputs) -> None:
    reports = []
    for path in args.checkpoint or []:
        model = load(path)
        resolution, _, test = _checkpoint_split(cfg, model)
        reports.append(evaluate_model(model, test, cfg.effective_horizon(resolution)))
    if args.baseline:
        resolutions = args.resolutions or [cfg.resolution]
        for resolution in resolutions:
            train, test = _load_split(cfg, resolution)
            spec = WaveletSpec(cfg.wavelet, cfg.levels)
            reports.append(
                evaluate_baseline(args.baseline, train, test, cfg.effective_horizon(resolution), cfg.lookback, spec)
            )
    if not reports:
        raise UsageError("evaluate needs --checkpoint and/or --baseline")
    write_report_csv(out.path("report.csv"), reports)
    print(format_table(reports))


def cmd_ablate(args, cfg: RunConfig, out: Outputs) -> None:
    model = load(args.checkpoint)
    resolution, _, test = _checkpoint_split(cfg, model)
    reports = []
    for mask in args.keep:
        keep = [name.strip() for name in mask.split(",") if name.strip()]
        reports.append(
            ablate_subbands(model, test, keep, cfg.effective_horizon(resolution), args.zero_reconstruction)
        )
    write_report_csv(out.path("ablation.csv"), reports)
    print(format_table(reports))


def cmd_horizon_curve(args, cfg: RunConfig, out: Outputs) -> None:
    model = load(args.checkpoint)
    resolution, _, test = _checkpoint_split(cfg, model)
    curve = horizon_mae_curve(model, test, cfg.effective_horizon(resolution))
    with open(out.path("horizon_curve.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "mae_kw"])
        for k, v in enumerate(curve, 1):
            writer.writerow([k, _fmt(v)])
    covered = int(np.sum(np.isfinite(curve)))
    print(f"MAE step 1: {curve[0]:.4f} kW, step {covered}: {curve[covered - 1]:.4f} kW")
    if covered < curve.size:
        print(f"steps {covered + 1}..{curve.size} have no test targets (written as nan)")


# ---------------------------------------------------------------- parser


def _settings(p: argparse.ArgumentParser, *names) -> None:
    flags = {
        "data": dict(help=f"dataset path (UCI text or timestamp,value_kw CSV); env {DATA_ENV}"),
        "resolution": dict(choices=list(RESOLUTIONS)),
        "architecture": dict(choices=sorted(PRESETS), help="model preset"),
        "lookback": dict(type=int),
        "horizon": dict(type=int, help="forecast steps (default per resolution)"),
        "epochs": dict(type=int),
        "fine_tune_epochs": dict(type=int),
        "fine_tune_stages": dict(type=int),
        "learning_rate": dict(type=float),
        "batch_size": dict(type=int),
        "wavelet": dict(),
        "levels": dict(type=int),
        "seed": dict(type=int),
        "out": dict(help="output directory"),
    }
    for name in names:
        p.add_argument(f"--{name.replace('_', '-')}", dest=name, default=None, **flags[name])


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="swtcast", description="Wavelet-subband household load forecasting.")
    parser.add_argument("--config", help="file of 'key = value' settings")
    parser.add_argument("-v", "--verbose", action="store_true")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("decompose", help="write subbands t,A1..AL,D1..DL of a timestamp,value_kw CSV")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", dest="output", required=True, help="subband CSV to write")
    p.add_argument("--pad", action="store_true", help="extend with the last value to a multiple of 2**levels")
    _settings(p, "wavelet", "levels")
    p.set_defaults(handler=cmd_decompose, writes_dir=False)

    p = sub.add_parser("reconstruct", help="invert a subband CSV back to timestamp,value_kw")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", dest="output", required=True)
    _settings(p, "wavelet")
    p.set_defaults(handler=cmd_reconstruct, writes_dir=False)

    p = sub.add_parser("train", help="train on the first three years and write a checkpoint")
    _settings(p, "data", "resolution", "architecture", "lookback", "horizon", "epochs", "fine_tune_epochs",
              "fine_tune_stages", "learning_rate", "batch_size", "wavelet", "levels", "seed", "out")
    p.set_defaults(handler=cmd_train, writes_dir=True)

    p = sub.add_parser("forecast", help="recursive forecast from one test anchor")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--anchor", help="timestamp of the last observed step (default: first with full context)")
    _settings(p, "data", "horizon", "out")
    p.set_defaults(handler=cmd_forecast, writes_dir=True)

    p = sub.add_parser("evaluate", help="test-split RMSE/MAE/MAPE for checkpoints or baselines")
    p.add_argument("--checkpoint", nargs="+")
    p.add_argument("--baseline", choices=["naive", "seasonal_naive"])
    p.add_argument("--resolutions", nargs="+", choices=list(RESOLUTIONS), help="baseline resolutions")
    _settings(p, "data", "resolution", "horizon", "lookback", "wavelet", "levels", "out")
    p.set_defaults(handler=cmd_evaluate, writes_dir=True)

    p = sub.add_parser("ablate", help="metrics with only some subbands visible")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--keep", required=True, action="append", help="comma-separated subbands; repeatable")
    p.add_argument("--zero-reconstruction", action="store_true",
                   help="also drop removed subbands from the inverse transform")
    _settings(p, "data", "horizon", "out")
    p.set_defaults(handler=cmd_ablate, writes_dir=True)

    p = sub.add_parser("horizon-curve", help="MAE at each forecast step")
    p.add_argument("--checkpoint", required=True)
    _settings(p, "data", "horizon", "out")
    p.set_defaults(handler=cmd_horizon_curve, writes_dir=True)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    out = Outputs(None)
    try:
        cfg = resolve_config(args)
        out = Outputs(_out_dir(cfg) if args.writes_dir else None)
        args.handler(args, cfg, out)
        out.finish(args.command, cfg)
    except (SwtcastError, OSError, ValueError) as exc:
        out.cleanup()
        print(f"swtcast {args.command}: error: {exc}", file=sys.stderr)
        return 2 if isinstance(exc, UsageError) else 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
