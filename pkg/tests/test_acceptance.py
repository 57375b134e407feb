"""Acceptance gate: one PASS/FAIL line per criterion.

Run with ``pytest tests/test_acceptance.py -v``. Criteria 5, 6, 7, 8 and 10
need the household power consumption text file, found through the
``SWTCAST_DATA`` environment variable or at
``data/household_power_consumption.txt``. Without it they fail with
"dataset not found"; they are never skipped.
"""

import os
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from swtcast import autodiff as ad
from swtcast.autodiff import Tensor, grad_check
from swtcast.cli import DATA_ENV, DEFAULT_DATA
from swtcast.data import TimeSeries, impute, parse_dataset, resample, split
from swtcast.evaluation import (
    ablate_subbands,
    evaluate_baseline,
    evaluate_model,
    horizon_mae_curve,
    metrics,
)
from swtcast.layers import (
    AttentionConfig,
    AttentionWeights,
    EncoderWeights,
    LstmParams,
    Time2VecParams,
    encoder_block,
    lstm_step,
    multi_head_attention,
    time2vec,
)
from swtcast.models import PRESETS, ModelConfig
from swtcast.pipeline import TrainConfig, fit
from swtcast.swt import WAVELETS, WaveletSpec, decompose, reconstruct
from swtcast.synthetic import household_load, write_uci

ROOT = Path(__file__).resolve().parents[1]
DESK = "transformer-desk"


def report(capsys, number, ok, detail):
    with capsys.disabled():
        print(f"\n{'PASS' if ok else 'FAIL'} criterion {number}: {detail}")
    assert ok, f"criterion {number}: {detail}"


def dataset_path():
    path = Path(os.environ.get(DATA_ENV) or DEFAULT_DATA)
    return path if path.is_absolute() else ROOT / path


@pytest.fixture(scope="module")
def real_minutely():
    path = dataset_path()
    if not path.exists():
        return None
    return impute(parse_dataset(path))


def require_data(capsys, number, series):
    if series is None:
        report(capsys, number, False, f"dataset not found at {dataset_path()} (set {DATA_ENV})")


def desk_model(lookback=30):
    return ModelConfig(**PRESETS[DESK], lookback=lookback)


# ---------------------------------------------------------------- 1, 2: wavelet transform


def test_criterion_1_perfect_reconstruction(capsys):
    rng = np.random.default_rng(1)
    specs = [WaveletSpec(f, L) for f in WAVELETS for L in (1, 2, 3)]
    start = time.perf_counter()
    worst = 0.0
    for i in range(1000):
        x = rng.normal(size=256) * rng.uniform(0.1, 10)
        spec = specs[i % len(specs)]
        worst = max(worst, float(np.max(np.abs(x - reconstruct(decompose(x, spec))))))
    elapsed = time.perf_counter() - start
    report(capsys, 1, worst < 1e-9 and elapsed < 5.0,
           f"max reconstruction error {worst:.2e} over 1000 signals in {elapsed:.2f} s")


def test_criterion_2_shift_and_linearity(capsys):
    rng = np.random.default_rng(2)
    specs = [WaveletSpec(f, L) for f in WAVELETS for L in (1, 2, 3)]
    shift_err = lin_err = 0.0
    for i in range(100):
        spec = specs[i % len(specs)]
        x = rng.normal(size=256)
        s = int(rng.integers(-100, 100))
        lhs = decompose(np.roll(x, s), spec).features()
        shift_err = max(shift_err, float(np.max(np.abs(lhs - np.roll(decompose(x, spec).features(), s, axis=0)))))
    for i in range(100):
        spec = specs[i % len(specs)]
        x, y = rng.normal(size=(2, 256))
        a, b = rng.normal(size=2)
        lhs = decompose(a * x + b * y, spec).features()
        rhs = a * decompose(x, spec).features() + b * decompose(y, spec).features()
        lin_err = max(lin_err, float(np.max(np.abs(lhs - rhs))))
    report(capsys, 2, shift_err < 1e-9 and lin_err < 1e-9,
           f"shift error {shift_err:.2e}, linearity error {lin_err:.2e} on 100 cases each")


# ---------------------------------------------------------------- 3: gradients


def _projected(out, seed):
    # random projection so no gradient component cancels by symmetry
    weights = np.random.default_rng(seed).normal(size=out.shape)
    return ad.sum(out * weights)


def _layer_checks(seed):
    rng = np.random.default_rng(seed)
    x2 = rng.normal(size=(3, 4))
    x3 = rng.normal(size=(2, 5, 4))
    checks = {}

    w, b = rng.normal(size=(4, 3)), rng.normal(size=3)
    checks["dense"] = [
        lambda t: _projected(ad.affine(x2, t, b), seed),
        w,
        lambda t: _projected(ad.affine(t, w, b), seed),
        x2,
    ]

    k, kb = rng.normal(size=(3, 4, 2)), rng.normal(size=2)
    checks["conv1d"] = [
        lambda t: _projected(ad.conv1d(x3, t, kb, padding="same"), seed),
        k,
        lambda t: _projected(ad.conv1d(t, k, kb, padding="same"), seed),
        x3,
    ]

    p = LstmParams.init(4, 3, rng)
    for name in vars(p):
        getattr(p, name).data = rng.normal(scale=0.5, size=getattr(p, name).shape)
    h0, c0 = rng.normal(size=(3, 3)), rng.normal(size=(3, 3))

    def lstm_loss(field):
        def loss(t):
            original = getattr(p, field)
            setattr(p, field, t)
            try:
                h, c = lstm_step(x2, h0, c0, p)
                return _projected(h, seed) + _projected(c, seed + 1)
            finally:
                setattr(p, field, original)
        return loss

    checks["lstm_step"] = [lstm_loss("W_f"), p.W_f.data.copy(), lstm_loss("U_c"), p.U_c.data.copy(),
                           lambda t: _projected(lstm_step(t, h0, c0, p)[0], seed), x2]

    omega, phi = rng.normal(size=5), rng.normal(size=5)
    tau = rng.uniform(0, 20, size=6)
    checks["time2vec"] = [
        lambda t: _projected(time2vec(tau, Time2VecParams(t, Tensor(phi))), seed),
        omega,
        lambda t: _projected(time2vec(tau, Time2VecParams(Tensor(omega), t)), seed),
        phi,
    ]

    cfg = AttentionConfig(heads=2, model_dim=4)
    aw = AttentionWeights.init(cfg, rng)
    checks["attention"] = [
        lambda t: _projected(multi_head_attention(t, cfg, aw), seed),
        x3,
        lambda t: _projected(multi_head_attention(x3, cfg, AttentionWeights(**{**vars(aw), "W_q": t})), seed),
        aw.W_q.data.copy(),
    ]

    ew = EncoderWeights.init(cfg, 6, rng)
    ew.ln1_gamma = Tensor(rng.uniform(0.5, 1.5, size=4))
    checks["encoder_block"] = [
        lambda t: _projected(encoder_block(t, cfg, ew), seed),
        x3,
        lambda t: _projected(encoder_block(x3, cfg, EncoderWeights(**{**vars(ew), "ff1_W": t})), seed),
        ew.ff1_W.data.copy(),
    ]
    return checks


def test_criterion_3_gradient_checks(capsys):
    start = time.perf_counter()
    worst = {}
    for seed in range(10):
        for layer, pairs in _layer_checks(seed).items():
            for fn, point in zip(pairs[::2], pairs[1::2]):
                worst[layer] = max(worst.get(layer, 0.0), grad_check(fn, point))
    elapsed = time.perf_counter() - start
    ok = all(v < 1e-4 for v in worst.values()) and elapsed < 60.0
    detail = ", ".join(f"{k} {v:.1e}" for k, v in worst.items())
    report(capsys, 3, ok, f"max relative error per layer at 10 points: {detail}; {elapsed:.1f} s")


# ---------------------------------------------------------------- 4: metrics


def test_criterion_4_metric_unit_values(capsys):
    m = metrics([1, 2], [1.1, 1.8])
    ok = (
        abs(m["mae_kw"] - 0.15) < 1e-12
        and abs(m["mape_pct"] - 10.0) < 1e-9
        and abs(m["rmse_kw"] - 0.1581) < 1e-4
    )
    report(capsys, 4, ok, f"MAE {m['mae_kw']:.4f}, MAPE {m['mape_pct']:.4f}%, RMSE {m['rmse_kw']:.4f}")


# ---------------------------------------------------------------- 5 to 8: desk-scale reproduction


@pytest.fixture(scope="module")
def daily_runs(real_minutely):
    """Daily transformer and CNN-LSTM fits shared by criteria 6, 7 and 8."""
    if real_minutely is None:
        return None
    train, test = split(resample(real_minutely, "daily"))
    cfg = TrainConfig(horizon=60)
    start = time.perf_counter()
    transformer = fit(train, desk_model(), cfg).model
    cnn = fit(train, ModelConfig(**PRESETS["cnn_lstm"], lookback=30), cfg).model
    return {"train": train, "test": test, "transformer": transformer, "cnn": cnn,
            "seconds": time.perf_counter() - start}


def test_criterion_5_weekly(capsys, real_minutely):
    require_data(capsys, 5, real_minutely)
    start = time.perf_counter()
    train, test = split(resample(real_minutely, "weekly"))
    model = fit(train, desk_model(), TrainConfig(horizon=48)).model
    ours = evaluate_model(model, test, 48)
    naive = evaluate_baseline("naive", train, test, 48)
    elapsed = time.perf_counter() - start
    ok = ours.rmse_kw <= 0.30 and ours.rmse_kw < naive.rmse_kw and elapsed < 300
    report(capsys, 5, ok, f"weekly RMSE {ours.rmse_kw:.4f} kW (naive {naive.rmse_kw:.4f}) in {elapsed:.0f} s")


def test_criterion_6_daily(capsys, daily_runs):
    require_data(capsys, 6, daily_runs)
    train, test = daily_runs["train"], daily_runs["test"]
    ours = evaluate_model(daily_runs["transformer"], test, 60)
    cnn = evaluate_model(daily_runs["cnn"], test, 60)
    seasonal = evaluate_baseline("seasonal_naive", train, test, 60)
    ok = (
        ours.rmse_kw <= 0.40
        and cnn.rmse_kw <= 0.45
        and max(ours.rmse_kw, cnn.rmse_kw) < seasonal.rmse_kw
        and daily_runs["seconds"] < 900
    )
    report(capsys, 6, ok, f"daily RMSE transformer {ours.rmse_kw:.4f}, cnn-lstm {cnn.rmse_kw:.4f}, "
                          f"seasonal naive {seasonal.rmse_kw:.4f} kW; training {daily_runs['seconds']:.0f} s")


def test_criterion_7_ablation_ordering(capsys, daily_runs):
    require_data(capsys, 7, daily_runs)
    model, test = daily_runs["transformer"], daily_runs["test"]
    masks = [["A3"], ["D1"], ["D2"], ["D3"], WaveletSpec().feature_names]
    rmse = {m[0] if len(m) == 1 else "all": ablate_subbands(model, test, m, 60).rmse_kw for m in masks}
    ok = all(rmse["A3"] < 0.5 * rmse[d] for d in ("D1", "D2", "D3")) and rmse["all"] <= rmse["A3"]
    recon = {m[0]: ablate_subbands(model, test, m, 60, zero_reconstruction=True).rmse_kw for m in masks[:4]}
    detail = ", ".join(f"{k} {v:.4f}" for k, v in rmse.items())
    info = ", ".join(f"{k} {v:.4f}" for k, v in recon.items())
    report(capsys, 7, ok, f"RMSE by kept subbands: {detail} (with removed bands zeroed in synthesis: {info})")


def test_criterion_8_horizon_degradation(capsys, daily_runs):
    require_data(capsys, 8, daily_runs)
    curve = horizon_mae_curve(daily_runs["transformer"], daily_runs["test"], 60)
    ratio = curve[59] / curve[0]
    report(capsys, 8, ratio > 1.3, f"MAE step 60 / step 1 = {curve[59]:.4f} / {curve[0]:.4f} = {ratio:.3f}")


# ---------------------------------------------------------------- 9: determinism


def test_criterion_9_determinism(capsys, tmp_path):
    data = dataset_path()
    source = "household dataset"
    if not data.exists():
        # determinism is a property of the code path, so a UCI-format stand-in exercises it fully
        data = tmp_path / "household.txt"
        write_uci(household_load(seed=3), data)
        source = "synthetic UCI-format file (dataset not found)"
    common = ["--data", str(data), "--resolution", "weekly", "--architecture", DESK,
              "--epochs", "5", "--fine-tune-epochs", "1", "--seed", "7"]
    outputs = []
    for name in ("a", "b"):
        out = tmp_path / name
        for argv in (["train", *common, "--out", str(out)],
                     ["forecast", "--checkpoint", str(out / "model.ckpt"), "--data", str(data), "--out", str(out)]):
            proc = subprocess.run([sys.executable, "-m", "swtcast.cli", *argv], capture_output=True, text=True)
            assert proc.returncode == 0, proc.stderr
        outputs.append(out)
    same = {name: (outputs[0] / name).read_bytes() == (outputs[1] / name).read_bytes()
            for name in ("model.ckpt", "history.csv", "forecast.csv")}
    report(capsys, 9, all(same.values()), f"byte-identical across separate processes {same} on {source}")


# ---------------------------------------------------------------- 10: minutely smoke test


def test_criterion_10_minutely_smoke(capsys, real_minutely):
    require_data(capsys, 10, real_minutely)
    tail = slice(len(real_minutely) - 11_000, len(real_minutely))
    ts, values = real_minutely.timestamps[tail], real_minutely.values[tail]
    train = TimeSeries(ts[:10_000], values[:10_000], "minutely")
    test = TimeSeries(ts[10_000:], values[10_000:], "minutely")
    model = fit(train, desk_model(), TrainConfig(epochs=10, horizon=60, fine_tune_epochs=2)).model
    ours = evaluate_model(model, test, 60)
    naive = evaluate_baseline("naive", train, test, 60)
    report(capsys, 10, ours.rmse_kw < naive.rmse_kw,
           f"minutely RMSE {ours.rmse_kw:.4f} kW vs naive {naive.rmse_kw:.4f} kW on the final 1,000 steps")
