"""Training with RMSProp, recursive fine-tuning and cascaded multistep forecasting.

The forecaster predicts the next subband coefficient vector from the last
``lookback`` vectors. Multistep forecasts feed each prediction back into the
window and finally invert the wavelet transform on the predicted
coefficients. Since synthesis at time ``t`` reads coefficients up to
``t + reach``, the recursion runs ``reach`` steps past the horizon so every
returned sample is rebuilt from a complete set of coefficients.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .data import (
    SupervisedWindows,
    TimeSeries,
    denormalize,
    make_windows,
    normalize,
    subband_features,
)
from .errors import ConfigurationError, TrainingDiverged, UsageError
from .models import ForecastModel, ModelConfig, build
from .swt import SubbandMatrix, WaveletSpec, reach, reconstruct

__all__ = [
    "TrainConfig",
    "EpochRecord",
    "ForecastResult",
    "RMSProp",
    "rmsprop_step",
    "train_one_step",
    "fine_tune_recursive",
    "forecast",
    "forecast_batch",
    "reconstruct_forecast",
    "reconstruction_window",
    "feature_mask",
    "fit",
]

log = logging.getLogger(__name__)

RECONSTRUCTION_WINDOW = 64


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 32
    epochs: int = 100
    fine_tune_epochs: int = 5
    fine_tune_stages: int = 4
    horizon: int = 1
    seed: int = 0
    validation_fraction: float = 0.1
    rho: float = 0.9
    eps: float = 1e-8
    divergence_threshold: float = 1e6

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ConfigurationError(f"learning rate must be positive, got {self.learning_rate}")
        if self.batch_size < 1 or self.horizon < 1 or self.epochs < 0 or self.fine_tune_epochs < 0:
            raise ConfigurationError("batch_size and horizon must be >= 1, epoch counts >= 0")
        if not 0.0 <= self.validation_fraction < 1.0:
            raise ConfigurationError("validation_fraction must be in [0, 1)")


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    stage: int = 1


@dataclass
class ForecastResult:
    """Normalized coefficient predictions and reconstructed kW for ``t+1..t+H``."""

    coefficients: np.ndarray
    power: np.ndarray
    lookahead: np.ndarray
    anchor: object = None

    @property
    def horizon(self) -> int:
        return self.power.shape[-1]


# ---------------------------------------------------------------- optimizer


def rmsprop_step(params, grads, state, lr: float, rho: float = 0.9, eps: float = 1e-8):
    """One RMSProp update on lists of arrays.

    ``s <- rho*s + (1-rho)*g**2`` then ``p <- p - lr*g/(sqrt(s) + eps)``.
    ``state`` may be ``None`` on the first call. Returns ``(params, state)``
    as new arrays; inputs are not modified.
    """
    if state is None:
        state = [np.zeros_like(p) for p in params]
    new_params, new_state = [], []
    for i, (p, g, s) in enumerate(zip(params, grads, state)):
        if p.shape != g.shape or p.shape != s.shape:
            raise UsageError(f"parameter {i}: shapes {p.shape}, grad {g.shape}, state {s.shape} differ")
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient in parameter {i}")
        s = rho * s + (1.0 - rho) * g * g
        new_state.append(s)
        new_params.append(p - lr * g / (np.sqrt(s) + eps))
    return new_params, new_state


class RMSProp:
    """Stateful wrapper over :func:`rmsprop_step` for a model's named parameters."""

    def __init__(self, named_params, lr=1e-3, rho=0.9, eps=1e-8):
        self.named = list(named_params)
        self.lr, self.rho, self.eps = lr, rho, eps
        self.state = None

    def step(self) -> None:
        tensors = [p for _, p in self.named]
        grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in tensors]
        for (name, _), g in zip(self.named, grads):
            if not np.all(np.isfinite(g)):
                raise FloatingPointError(f"non-finite gradient for {name}")
        params, self.state = rmsprop_step(
            [p.data for p in tensors], grads, self.state, self.lr, self.rho, self.eps
        )
        for p, new in zip(tensors, params):
            p.data = new


# ---------------------------------------------------------------- training


def _validation_split(count: int, fraction: float) -> int:
    n_val = int(math.floor(count * fraction))
    return count - n_val if count - n_val >= 1 else count


def _mse_batch(model, x, y, rng):
    model.zero_grad()
    pred = model(x, rng=rng)
    loss = ad.mse(pred, y)
    ad.backward(loss)
    return loss.item()


def _inference_loss(model, x, y, batch=256) -> float:
    if len(x) == 0:
        return float("nan")
    total = 0.0
    for a in range(0, len(x), batch):
        pred = model.predict(x[a : a + batch])
        total += float(np.sum((pred - y[a : a + batch]) ** 2))
    return total / (len(x) * y.shape[-1])


def _check(loss, history, threshold, where):
    if not np.isfinite(loss) or loss > threshold:
        raise TrainingDiverged(f"{where}: loss {loss} diverged", history)


def train_one_step(model: ForecastModel, windows: SupervisedWindows, cfg: TrainConfig):
    """Fit one-step-ahead prediction by minibatch MSE.

    The last ``validation_fraction`` of the windows (chronologically) is held
    out and only scored. Returns ``(model, history)`` with one
    :class:`EpochRecord` per epoch; the model is updated in place.
    """
    if len(windows) == 0:
        raise UsageError("no training windows")
    n_train = _validation_split(len(windows), cfg.validation_fraction)
    x_tr, y_tr = windows.inputs[:n_train], windows.targets[:n_train]
    x_va, y_va = windows.inputs[n_train:], windows.targets[n_train:]
    rng = np.random.default_rng(cfg.seed)
    opt = RMSProp(model.named_parameters(), cfg.learning_rate, cfg.rho, cfg.eps)
    history: list[EpochRecord] = []

    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(n_train)
        running = 0.0
        for a in range(0, n_train, cfg.batch_size):
            idx = order[a : a + cfg.batch_size]
            loss = _mse_batch(model, x_tr[idx], y_tr[idx], rng)
            _check(loss, history, cfg.divergence_threshold, f"epoch {epoch}")
            try:
                opt.step()
            except FloatingPointError as exc:
                raise TrainingDiverged(f"epoch {epoch}: {exc}", history) from exc
            running += loss * len(idx)
        record = EpochRecord(epoch, running / n_train, _inference_loss(model, x_va, y_va))
        history.append(record)
        log.debug("epoch %d train %.6f val %.6f", epoch, record.train_loss, record.val_loss)
    return model, history


def _rollout(model, contexts: np.ndarray, steps: int) -> np.ndarray:
    """Feed ``steps`` predictions back into the windows (inference mode)."""
    ctx = contexts
    for _ in range(steps):
        pred = model.predict(ctx)
        ctx = np.concatenate([ctx[:, 1:], pred[:, None, :]], axis=1)
    return ctx


def stage_loss(model, windows: SupervisedWindows, k: int, anchors=None) -> float:
    """Inference MSE of the ``k``-th recursive step against the true vector."""
    n, source = windows.lookback, windows.source
    if anchors is None:
        anchors = np.arange(0, source.shape[0] - n - k + 1)
    if len(anchors) == 0:
        return float("nan")
    ctx = np.stack([source[i : i + n] for i in anchors])
    ctx = _rollout(model, ctx, k - 1)
    target = source[anchors + n + k - 1]
    pred = model.predict(ctx)
    return float(np.mean((pred - target) ** 2))


def fine_tune_recursive(model: ForecastModel, windows: SupervisedWindows, cfg: TrainConfig):
    """Refine one shared model on its own rollouts for steps ``k = 2..``.

    Stage ``k`` rolls the model ``k-1`` steps forward from true windows,
    then trains the ``k``-th prediction against the true vector for
    ``fine_tune_epochs`` epochs. The fed-back predictions are constants:
    gradients pass only through the final forward call. At most
    ``fine_tune_stages`` stages run, and none when ``horizon == 1``.
    Returns ``(model, history)``.
    """
    history: list[EpochRecord] = []
    last_stage = min(cfg.horizon, cfg.fine_tune_stages + 1)
    if last_stage < 2 or cfg.fine_tune_epochs == 0:
        return model, history
    n, source = windows.lookback, windows.source
    n_train = _validation_split(len(windows), cfg.validation_fraction)
    rng = np.random.default_rng(cfg.seed + 1)
    opt = RMSProp(model.named_parameters(), cfg.learning_rate, cfg.rho, cfg.eps)

    for k in range(2, last_stage + 1):
        anchors = np.arange(0, min(n_train, source.shape[0] - n - k + 1))
        val_anchors = np.arange(n_train, source.shape[0] - n - k + 1)
        if anchors.size == 0:
            break
        for epoch in range(1, cfg.fine_tune_epochs + 1):
            order = rng.permutation(anchors)
            running = 0.0
            for a in range(0, order.size, cfg.batch_size):
                idx = order[a : a + cfg.batch_size]
                ctx = np.stack([source[i : i + n] for i in idx])
                ctx = _rollout(model, ctx, k - 1)
                loss = _mse_batch(model, ctx, source[idx + n + k - 1], rng)
                _check(loss, history, cfg.divergence_threshold, f"stage {k} epoch {epoch}")
                try:
                    opt.step()
                except FloatingPointError as exc:
                    raise TrainingDiverged(f"stage {k} epoch {epoch}: {exc}", history) from exc
                running += loss * idx.size
            val = stage_loss(model, windows, k, val_anchors) if val_anchors.size else float("nan")
            history.append(EpochRecord(epoch, running / order.size, val, stage=k))
    return model, history


# ---------------------------------------------------------------- forecasting


def feature_mask(keep, spec: WaveletSpec) -> np.ndarray:
    """0/1 vector over A1..AL, D1..DL from subband names (``None`` keeps all)."""
    names = spec.feature_names
    if keep is None:
        return np.ones(len(names))
    keep = [keep] if isinstance(keep, str) else list(keep)
    if not keep:
        raise UsageError("subband mask must keep at least one subband")
    unknown = [k for k in keep if k not in names]
    if unknown:
        raise UsageError(f"unknown subbands {unknown}; expected names from {names}")
    return np.array([1.0 if name in keep else 0.0 for name in names])


def reconstruction_window(horizon: int, spec: WaveletSpec, window: int = RECONSTRUCTION_WINDOW) -> int:
    block = 2**spec.levels
    steps = horizon + reach(spec)
    need = max(window, steps)
    return -(-need // block) * block


def reconstruct_forecast(history, future, horizon: int, spec: WaveletSpec, window: int = RECONSTRUCTION_WINDOW):
    """Inverse-transform a trailing buffer of raw coefficients and return the forecast samples.

    ``history`` is (..., M, 2L) and ``future`` is (..., horizon + reach, 2L);
    the result is the (..., horizon) signal following the history.
    """
    history = np.asarray(history, dtype=np.float64)
    future = np.asarray(future, dtype=np.float64)
    steps = future.shape[-2]
    if steps != horizon + reach(spec):
        raise UsageError(f"need {horizon + reach(spec)} future vectors, got {steps}")
    W = reconstruction_window(horizon, spec, window)
    keep_hist = W - steps
    if history.shape[-2] >= keep_hist:
        hist = history[..., history.shape[-2] - keep_hist :, :]
    else:
        # synthesis never looks backwards, so left padding cannot leak into the forecast
        pad = np.repeat(history[..., :1, :], keep_hist - history.shape[-2], axis=-2)
        hist = np.concatenate([pad, history], axis=-2)
    buffer = np.concatenate([hist, future], axis=-2)
    signal = reconstruct(SubbandMatrix.from_features(buffer, spec))
    return signal[..., keep_hist : keep_hist + horizon]


def forecast_batch(model: ForecastModel, histories, horizon: int, keep=None, teacher=None,
                   window: int = RECONSTRUCTION_WINDOW, zero_reconstruction: bool = False):
    """Cascaded forecast for a batch of raw coefficient histories.

    Parameters
    ----------
    histories : array (B, M, 2L)
        Raw (not normalized) coefficients up to each anchor, ``M >= lookback``.
    horizon : int
    keep : iterable of subband names, optional
        Inputs outside this set are zeroed in normalized space at every step.
    teacher : array (B, horizon + reach, 2L), optional
        Raw true future coefficients fed back instead of the predictions.
    zero_reconstruction : bool
        Also set the predicted coefficients outside ``keep`` to zero before
        the inverse transform, so the forecast is built from the kept
        subbands alone.

    Returns
    -------
    predictions : array (B, horizon + reach, 2L)
        Normalized model outputs at each recursive step.
    power : array (B, horizon)
    """
    if horizon < 1:
        raise UsageError(f"horizon must be >= 1, got {horizon}")
    if model.stats is None:
        raise UsageError("model has no normalization statistics; train or load it first")
    cfg = model.config
    spec = WaveletSpec(cfg.wavelet, cfg.levels)
    histories = np.asarray(histories, dtype=np.float64)
    if histories.ndim != 3 or histories.shape[-1] != spec.n_features:
        raise UsageError(f"histories must be (batch, time, {spec.n_features}), got {histories.shape}")
    if histories.shape[1] < cfg.lookback:
        raise UsageError(f"need at least {cfg.lookback} history vectors, got {histories.shape[1]}")
    steps = horizon + reach(spec)
    mask = feature_mask(keep, spec)
    ablate = not np.all(mask == 1.0)
    if teacher is not None:
        teacher = normalize(np.asarray(teacher, dtype=np.float64), model.stats)[0]
        if teacher.shape[:2] != (histories.shape[0], steps):
            raise UsageError(f"teacher must be (batch, {steps}, features), got {teacher.shape}")

    ctx = normalize(histories[:, -cfg.lookback :], model.stats)[0]
    preds = np.empty((histories.shape[0], steps, spec.n_features))
    for s in range(steps):
        y = model.predict(ctx * mask if ablate else ctx)
        preds[:, s] = y
        nxt = teacher[:, s] if teacher is not None else y
        ctx = np.concatenate([ctx[:, 1:], nxt[:, None, :]], axis=1)
    raw = denormalize(preds, model.stats)
    if zero_reconstruction:
        raw = raw * mask
    power = reconstruct_forecast(histories, raw, horizon, spec, window)
    return preds, power


def forecast(model: ForecastModel, history, horizon: int, keep=None, teacher=None,
             window: int = RECONSTRUCTION_WINDOW, anchor=None) -> ForecastResult:
    """Single-anchor wrapper around :func:`forecast_batch`."""
    history = np.asarray(history, dtype=np.float64)
    teacher = None if teacher is None else np.asarray(teacher)[None]
    preds, power = forecast_batch(model, history[None], horizon, keep, teacher, window)
    return ForecastResult(preds[0, :horizon], power[0], preds[0, horizon:], anchor)


# ---------------------------------------------------------------- end to end


@dataclass
class FitResult:
    model: ForecastModel
    history: list[EpochRecord] = field(default_factory=list)
    fine_tune_history: list[EpochRecord] = field(default_factory=list)


def fit(train: TimeSeries, model_config: ModelConfig, train_config: TrainConfig) -> FitResult:
    """Decompose, normalize, window, train and fine-tune on a training split."""
    spec = WaveletSpec(model_config.wavelet, model_config.levels)
    raw = subband_features(train.values, spec)
    normed, stats = normalize(raw)
    windows = make_windows(normed, model_config.lookback, train.timestamps)
    model = build(model_config)
    model.stats = stats
    _, history = train_one_step(model, windows, train_config)
    # zero epochs asks for an untrained checkpoint, so fine-tuning is skipped too
    ft_history = fine_tune_recursive(model, windows, train_config)[1] if train_config.epochs else []
    last = history[-1] if history else None
    model.metadata.update(
        {
            "resolution": train.resolution,
            "epochs": train_config.epochs,
            "fine_tune_epochs": train_config.fine_tune_epochs,
            "horizon": train_config.horizon,
            "learning_rate": train_config.learning_rate,
            "batch_size": train_config.batch_size,
            "train_seed": train_config.seed,
            "train_windows": len(windows),
            "final_train_loss": None if last is None else last.train_loss,
            "final_val_loss": None if last is None else last.val_loss,
            "train_start": str(train.timestamps[0]),
            "train_end": str(train.timestamps[-1]),
        }
    )
    return FitResult(model, history, ft_history)
