"""Train a desk-sized Transformer-SWT on synthetic daily load and forecast 60 days.

Run: python demos/02_train_and_forecast.py   (about four minutes)
The checkpoint lands in demos/out/ and is reused by demos 03 and 04.
"""
# %%
import time
from pathlib import Path

import numpy as np

from swtcast.data import impute, resample, split, subband_features
from swtcast.models import PRESETS, ModelConfig, count_params, save
from swtcast.pipeline import TrainConfig, fit, forecast
from swtcast.swt import WaveletSpec
from swtcast.synthetic import household_load

train, test = split(resample(impute(household_load(seed=0)), "daily"))
print(f"train {len(train)} days up to {train.timestamps[-1]}, test {len(test)} days")

# %% the desk preset keeps the architecture and shrinks the widths
config = ModelConfig(**PRESETS["transformer-desk"], lookback=30)
t0 = time.perf_counter()
result = fit(train, config, TrainConfig(horizon=60))
print(f"{count_params(result.model):,} parameters, trained in {time.perf_counter() - t0:.0f} s")
checkpoint = Path(__file__).parent / "out" / "daily_transformer.ckpt"
checkpoint.parent.mkdir(exist_ok=True)
save(result.model, checkpoint)
for rec in result.history[::20] + result.history[-1:]:
    print(f"  epoch {rec.epoch:3d}  train {rec.train_loss:.5f}  val {rec.val_loss:.5f}")
for rec in result.fine_tune_history[4::5]:
    print(f"  fine-tune stage {rec.stage} epoch {rec.epoch}  train {rec.train_loss:.5f}")

# %% 60-day recursive forecast from the first test day with 30 days of context
raw = subband_features(test.values, WaveletSpec())
anchor = config.lookback - 1
out = forecast(result.model, raw[: anchor + 1], 60, anchor=test.timestamps[anchor])
actual = test.values[anchor + 1 : anchor + 61]
print(f"forecast from {out.anchor}: coefficients {out.coefficients.shape}, power {out.power.shape}")
for k in (1, 7, 14, 30, 60):
    print(f"  day {k:2d}: predicted {out.power[k - 1]:.3f} kW, actual {actual[k - 1]:.3f} kW")
print(f"RMSE over the 60 days: {np.sqrt(np.mean((out.power - actual) ** 2)):.4f} kW")
