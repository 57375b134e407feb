import copy

import numpy as np
import pytest

from conftest import TINY_TRANSFORMER
from swtcast.data import SupervisedWindows, make_windows, normalize, subband_features
from swtcast.errors import ConfigurationError, TrainingDiverged, UsageError
from swtcast.models import build
from swtcast.pipeline import (
    RMSProp,
    TrainConfig,
    feature_mask,
    fine_tune_recursive,
    forecast,
    forecast_batch,
    reconstruct_forecast,
    reconstruction_window,
    rmsprop_step,
    stage_loss,
    train_one_step,
)
from swtcast.swt import WaveletSpec, decompose, reach
from swtcast.autodiff import Tensor


def daily_windows(daily_split, lookback=14):
    train, _ = daily_split
    spec = WaveletSpec()
    normed, stats = normalize(subband_features(train.values, spec))
    return make_windows(normed, lookback), stats


def weights(model):
    return {k: v.copy() for k, v in model.state_dict().items()}


class TestRmsprop:
    def test_zero_gradient_fixed_point(self):
        p = [np.array([1.0, -2.0])]
        new, state = rmsprop_step(p, [np.zeros(2)], None, lr=0.1)
        np.testing.assert_array_equal(new[0], p[0])
        np.testing.assert_array_equal(state[0], 0.0)

    def test_first_step_closed_form(self):
        g = np.array([0.5, -3.0, 1e-3])
        new, state = rmsprop_step([np.zeros(3)], [g], None, lr=0.01)
        s = 0.1 * g**2
        np.testing.assert_allclose(state[0], s)
        np.testing.assert_allclose(new[0], -0.01 * g / (np.sqrt(s) + 1e-8))
        # step length is close to lr / sqrt(1 - rho) for every coordinate
        np.testing.assert_allclose(np.abs(new[0]), 0.01 / np.sqrt(0.1), rtol=1e-4)

    def test_constant_gradient_limit(self):
        p, state = [np.zeros(1)], None
        for _ in range(300):
            before = p[0].copy()
            p, state = rmsprop_step(p, [np.array([2.0])], state, lr=0.01)
        np.testing.assert_allclose(before - p[0], 0.01, rtol=1e-6)

    def test_quadratic_bowl_monotone(self):
        a = np.array([1.0, 10.0, 0.1])
        x, state = [np.array([3.0, -2.0, 5.0])], None
        losses = []
        for _ in range(100):
            losses.append(float(np.sum(a * x[0] ** 2)))
            x, state = rmsprop_step(x, [2 * a * x[0]], state, lr=1e-3)
        assert np.all(np.diff(losses) < 0)

    def test_shape_mismatch(self):
        with pytest.raises(UsageError):
            rmsprop_step([np.zeros(2)], [np.zeros(3)], None, lr=0.1)

    def test_non_finite_gradient(self):
        with pytest.raises(FloatingPointError):
            rmsprop_step([np.zeros(2)], [np.array([1.0, np.nan])], None, lr=0.1)

    def test_wrapper_matches_function(self):
        t = Tensor(np.array([1.0, 2.0]), requires_grad=True)
        opt = RMSProp([("t", t)], lr=0.05)
        p, state = [t.data.copy()], None
        for g in ([0.3, -0.1], [1.0, 2.0]):
            t.grad = np.array(g)
            opt.step()
            p, state = rmsprop_step(p, [np.array(g)], state, lr=0.05)
        np.testing.assert_array_equal(t.data, p[0])

    def test_wrapper_names_parameter(self):
        t = Tensor(np.zeros(2), requires_grad=True)
        t.grad = np.array([np.inf, 0.0])
        with pytest.raises(FloatingPointError, match="encoder.w"):
            RMSProp([("encoder.w", t)]).step()


class TestTrainConfig:
    @pytest.mark.parametrize("kwargs", [dict(learning_rate=0.0), dict(batch_size=0), dict(horizon=0), dict(validation_fraction=1.0)])
    def test_invalid(self, kwargs):
        with pytest.raises(ConfigurationError):
            TrainConfig(**kwargs)


class TestTraining:
    def test_history_and_determinism(self, daily_split):
        windows, _ = daily_windows(daily_split)
        cfg = TrainConfig(epochs=3, seed=4)
        _, h1 = train_one_step(build(TINY_TRANSFORMER), windows, cfg)
        m2, h2 = train_one_step(build(TINY_TRANSFORMER), windows, cfg)
        assert [r.epoch for r in h1] == [1, 2, 3]
        assert [(r.train_loss, r.val_loss) for r in h1] == [(r.train_loss, r.val_loss) for r in h2]
        _, h3 = train_one_step(build(TINY_TRANSFORMER), windows, TrainConfig(epochs=3, seed=5))
        assert h3[-1].train_loss != h1[-1].train_loss

    def test_validation_loss_halves(self, daily_split):
        windows, _ = daily_windows(daily_split)
        n_val = int(len(windows) * 0.1)
        x_val, y_val = windows.inputs[-n_val:], windows.targets[-n_val:]
        model = build(TINY_TRANSFORMER)
        untrained = float(np.mean((model.predict(x_val) - y_val) ** 2))
        _, history = train_one_step(model, windows, TrainConfig(epochs=5))
        assert history[-1].val_loss <= 0.5 * untrained

    def test_cnn_lstm_trains(self, daily_split):
        windows, _ = daily_windows(daily_split)
        config = TINY_TRANSFORMER.replace(architecture="cnn_lstm_swt", conv_channels=(8,), lstm_hidden=(8,))
        _, history = train_one_step(build(config), windows, TrainConfig(epochs=3))
        assert history[-1].train_loss < history[0].train_loss

    def test_divergence_reports_history(self, daily_split):
        windows, _ = daily_windows(daily_split)
        with pytest.raises(TrainingDiverged) as info:
            train_one_step(build(TINY_TRANSFORMER), windows, TrainConfig(epochs=3, learning_rate=1e3, divergence_threshold=1e2))
        assert isinstance(info.value.history, list)

    def test_empty_windows(self):
        empty = SupervisedWindows(np.zeros((0, 14, 6)), np.zeros((0, 6)), np.zeros(0, int), np.zeros((14, 6)), 14)
        with pytest.raises(UsageError):
            train_one_step(build(TINY_TRANSFORMER), empty, TrainConfig(epochs=1))


class TestFineTune:
    def test_horizon_one_is_noop(self, tiny_daily_fit, daily_split):
        windows, _ = daily_windows(daily_split)
        model = copy.deepcopy(tiny_daily_fit.model)
        before = weights(model)
        _, history = fine_tune_recursive(model, windows, TrainConfig(horizon=1))
        assert history == []
        for k, v in weights(model).items():
            np.testing.assert_array_equal(v, before[k])

    def test_zero_epochs_is_noop(self, tiny_daily_fit, daily_split):
        windows, _ = daily_windows(daily_split)
        model = copy.deepcopy(tiny_daily_fit.model)
        before = weights(model)
        fine_tune_recursive(model, windows, TrainConfig(horizon=5, fine_tune_epochs=0))
        for k, v in weights(model).items():
            np.testing.assert_array_equal(v, before[k])

    def test_stage_loss_decreases(self, tiny_daily_fit, daily_split):
        windows, _ = daily_windows(daily_split)
        model = copy.deepcopy(tiny_daily_fit.model)
        anchors = np.arange(0, int(len(windows) * 0.9) - 2)
        before = stage_loss(model, windows, 3, anchors)
        _, history = fine_tune_recursive(model, windows, TrainConfig(horizon=3, fine_tune_epochs=3, fine_tune_stages=2))
        assert [r.stage for r in history] == [2, 2, 2, 3, 3, 3]
        assert stage_loss(model, windows, 3, anchors) < before

    def test_stages_capped(self, tiny_daily_fit, daily_split):
        windows, _ = daily_windows(daily_split)
        model = copy.deepcopy(tiny_daily_fit.model)
        _, history = fine_tune_recursive(model, windows, TrainConfig(horizon=60, fine_tune_epochs=1, fine_tune_stages=2))
        assert sorted({r.stage for r in history}) == [2, 3]


class TestForecast:
    @pytest.fixture
    def setup(self, tiny_daily_fit, daily_split):
        _, test = daily_split
        model = tiny_daily_fit.model
        raw = subband_features(test.values, WaveletSpec())
        return model, raw, test

    def test_length_and_first_step(self, setup):
        model, raw, _ = setup
        for H in (1, 7, 60):
            result = forecast(model, raw[:40], H)
            assert result.power.shape == (H,)
            assert result.coefficients.shape == (H, 6)
            assert result.lookahead.shape == (reach(WaveletSpec()), 6)
        ctx = normalize(raw[40 - 14 : 40], model.stats)[0]
        np.testing.assert_array_equal(forecast(model, raw[:40], 1).coefficients[0], model.predict(ctx[None])[0])

    def test_shorter_horizon_is_prefix(self, setup):
        model, raw, _ = setup
        long = forecast(model, raw[:50], 30)
        short = forecast(model, raw[:50], 5)
        np.testing.assert_allclose(short.power, long.power[:5], atol=1e-12)
        np.testing.assert_array_equal(short.coefficients, long.coefficients[:5])

    def test_recursion_feeds_predictions(self, setup):
        model, raw, _ = setup
        result = forecast(model, raw[:40], 3)
        ctx = normalize(raw[26:40], model.stats)[0]
        shifted = np.concatenate([ctx[1:], result.coefficients[:1]])
        np.testing.assert_allclose(result.coefficients[1], model.predict(shifted[None])[0], atol=1e-14)

    def test_teacher_forcing_gives_one_step_outputs(self, setup):
        model, raw, _ = setup
        H = 4
        steps = H + reach(WaveletSpec())
        result = forecast(model, raw[:40], H, teacher=raw[40 : 40 + steps])
        normed = normalize(raw, model.stats)[0]
        for k in range(H):
            expected = model.predict(normed[40 + k - 14 : 40 + k][None])[0]
            np.testing.assert_allclose(result.coefficients[k], expected, atol=1e-12)

    def test_batch_matches_single(self, setup):
        model, raw, _ = setup
        hist = np.stack([raw[10:40], raw[20:50]])
        _, power = forecast_batch(model, hist, 6)
        np.testing.assert_allclose(power[1], forecast(model, raw[20:50], 6).power, atol=1e-12)

    def test_deterministic(self, setup):
        model, raw, _ = setup
        np.testing.assert_array_equal(forecast(model, raw[:40], 10).power, forecast(model, raw[:40], 10).power)

    def test_keep_all_is_identity(self, setup):
        model, raw, _ = setup
        full = forecast(model, raw[:40], 10).power
        np.testing.assert_array_equal(forecast(model, raw[:40], 10, keep=WaveletSpec().feature_names).power, full)
        assert not np.array_equal(forecast(model, raw[:40], 10, keep=["A3"]).power, full)

    def test_errors(self, setup):
        model, raw, _ = setup
        with pytest.raises(UsageError):
            forecast(model, raw[:40], 0)
        with pytest.raises(UsageError):
            forecast(model, raw[:5], 3)
        bare = build(TINY_TRANSFORMER)
        with pytest.raises(UsageError, match="normalization"):
            forecast(bare, raw[:40], 3)


class TestReconstructionConsistency:
    @pytest.mark.parametrize("family", ["db1", "db2", "db3", "db4"])
    @pytest.mark.parametrize("levels", [1, 2, 3])
    def test_true_coefficients_give_true_power(self, family, levels):
        spec = WaveletSpec(family, levels)
        x = np.random.default_rng(levels).normal(size=512) + 1.5
        feats = decompose(x, spec).features()
        H = 20
        for t in (100, 200, 400):
            future = feats[t + 1 : t + 1 + H + reach(spec)]
            power = reconstruct_forecast(feats[: t + 1], future, H, spec)
            np.testing.assert_allclose(power, x[t + 1 : t + 1 + H], atol=1e-9)

    def test_short_history_is_padded(self):
        spec = WaveletSpec()
        x = np.random.default_rng(0).normal(size=128)
        feats = decompose(x, spec).features()
        power = reconstruct_forecast(feats[60:64], feats[64 : 64 + 10 + reach(spec)], 10, spec)
        np.testing.assert_allclose(power, x[64:74], atol=1e-12)

    def test_window_length(self):
        spec = WaveletSpec()
        assert reconstruction_window(1, spec) == 64
        assert reconstruction_window(60, spec) == 72

    def test_wrong_future_length(self):
        with pytest.raises(UsageError):
            reconstruct_forecast(np.zeros((10, 6)), np.zeros((3, 6)), 3, WaveletSpec())


class TestFeatureMask:
    def test_names(self):
        np.testing.assert_array_equal(feature_mask(["A3", "D1"], WaveletSpec()), [0, 0, 1, 1, 0, 0])
        np.testing.assert_array_equal(feature_mask(None, WaveletSpec()), np.ones(6))

    @pytest.mark.parametrize("keep", [[], ["A4"]])
    def test_invalid(self, keep):
        with pytest.raises(UsageError):
            feature_mask(keep, WaveletSpec())
