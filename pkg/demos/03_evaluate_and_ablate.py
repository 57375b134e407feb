"""Rolling-origin evaluation against baselines, then subband ablation.

Run: python demos/03_evaluate_and_ablate.py   (about three minutes, after demo 02)
"""
# %%
from pathlib import Path

from swtcast.data import impute, resample, split
from swtcast.evaluation import ablate_subbands, evaluate_baseline, evaluate_model, format_table
from swtcast.models import load
from swtcast.swt import WaveletSpec
from swtcast.synthetic import household_load

checkpoint = Path(__file__).parent / "out" / "daily_transformer.ckpt"
if not checkpoint.exists():
    raise SystemExit("run demos/02_train_and_forecast.py first to train the checkpoint")
model = load(checkpoint)
train, test = split(resample(impute(household_load(seed=0)), "daily"))

# %% every test anchor with full context forecasts 60 days; errors pool over all (anchor, step) pairs
reports = [
    evaluate_model(model, test, 60),
    evaluate_baseline("naive", train, test, 60),
    evaluate_baseline("seasonal_naive", train, test, 60),
]
print(format_table(reports))

# %% ablation: removed subbands are zeroed in the normalized model inputs
masks = [["A3"], ["D1"], ["D2"], ["D3"], WaveletSpec().feature_names]
print(format_table([ablate_subbands(model, test, m, 60) for m in masks]))

# %% stricter variant: removed subbands are also left out of the inverse transform
print(format_table([ablate_subbands(model, test, m, 60, zero_reconstruction=True) for m in masks[:4]]))
