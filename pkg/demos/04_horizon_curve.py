"""Per-step MAE of the 60-day recursive forecast.

Run: python demos/04_horizon_curve.py   (under a minute, after demo 02)
"""
# %%
from pathlib import Path

import numpy as np

from swtcast.data import impute, resample, split
from swtcast.evaluation import horizon_mae_curve
from swtcast.models import load
from swtcast.synthetic import household_load

checkpoint = Path(__file__).parent / "out" / "daily_transformer.ckpt"
if not checkpoint.exists():
    raise SystemExit("run demos/02_train_and_forecast.py first to train the checkpoint")
model = load(checkpoint)
train, test = split(resample(impute(household_load(seed=0)), "daily"))

# %%
curve = horizon_mae_curve(model, test, 60)
for k in (1, 5, 10, 20, 30, 40, 50, 60):
    bar = "#" * int(round(curve[k - 1] * 100))
    print(f"step {k:2d}  MAE {curve[k - 1]:.4f} kW  {bar}")
print(f"MAE(60) / MAE(1) = {curve[-1] / curve[0]:.3f}")
print("steps where MAE first exceeds 1.2x step 1:", int(np.argmax(curve > 1.2 * curve[0])) + 1)
