"""The twelve acceptance criteria, one test each, at their stated tolerances.

Each test records a one-line verdict in ``conftest.ACCEPTANCE``; the terminal
summary prints them after the run.
"""
import math
import os
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE
from oracles import cox_de_boor, model_mse_fd, reference_mlp_forward, rel_err

from decokan import numerics as nx
from decokan.ingestion import CsvSchema, load_csv
from decokan.interpret import default_sample_grid, fit_curve, prune
from decokan.kan import KanLayer, SplineGrid, bspline_basis_array
from decokan.model import (
    ABLATIONS, DecoKan, ModelConfig, build_ablation, load_checkpoint, mse, save_checkpoint,
    total_loss,
)
from decokan.normalization import mixer_norm, revin_denorm, revin_norm
from decokan.synthetic import crypto_like_frame, synthetic_series
from decokan.training import (
    TimeSeriesDataset, TrainOptions, make_windows, mean_abs_spline_coeff, persistence_baseline,
    persistence_forecast, predict, train,
)
from decokan.wavelet import dwt_multilevel, get_wavelet, idwt_multilevel

SYNTH = ModelConfig(lookback=48, horizon=12, channels=1, patch=8, stride=4, d_model=16, dropout=0.1)
SYNTH_OPTS = dict(lr=1e-3, batch_size=32, epochs=30)


def record(k, ok, detail):
    ACCEPTANCE[k] = (bool(ok), detail)
    print(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")


def synthetic_dataset(n=1200, seed=0):
    return TimeSeriesDataset(synthetic_series(n, seed=seed), ["y"])


def test_c01_wavelet_round_trip():
    t0 = time.perf_counter()
    worst = 0.0
    for name in ("db2", "db4"):
        bank = get_wavelet(name)
        for n in (17, 96, 512):
            for level in (1, 2, 3):
                x = np.stack([np.random.default_rng(s).normal(size=n) for s in range(100)])
                y = idwt_multilevel(dwt_multilevel(x, bank, level), bank, n).data
                worst = max(worst, float(np.max(np.abs(y - x))))
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-10 and elapsed < 5.0
    record(1, ok, f"max |idwt(dwt(x)) - x| = {worst:.2e}, {elapsed:.2f} s")
    assert ok


def test_c02_db4_vanishing_moments():
    bank = get_wavelet("db4")
    t = np.linspace(-1.0, 1.0, 512)
    worst = 0.0
    for degree in range(4):
        coeffs = np.random.default_rng(degree).normal(size=degree + 1)
        d = dwt_multilevel(np.polyval(coeffs, t)[None], bank, 1).details[0].data[0]
        worst = max(worst, float(np.max(np.abs(d[bank.filter_len:-bank.filter_len]))))
    record(2, worst <= 1e-8, f"max interior detail = {worst:.2e}")
    assert worst <= 1e-8


def test_c03_bspline_basis():
    grid = SplineGrid(grid_size=5, order=3)
    rng = np.random.default_rng(3)
    dense = np.linspace(-1.0, 1.0, 4001)
    pou = float(np.max(np.abs(bspline_basis_array(dense, grid)[0].sum(-1) - 1.0)))
    x = rng.uniform(-1.0, 1.0, 1000)
    b, _ = bspline_basis_array(x, grid)
    ref = np.array([[cox_de_boor(v, grid.knots, j, grid.order) for j in range(grid.n_basis)] for v in x])
    oracle = float(np.max(np.abs(b - ref)))
    ok = pou <= 1e-12 and oracle <= 1e-12
    record(3, ok, f"partition of unity {pou:.1e}, Cox-de Boor {oracle:.1e}")
    assert ok


def test_c04_full_model_gradient():
    t0 = time.perf_counter()
    cfg = ModelConfig(lookback=24, horizon=8, channels=2, level=1, patch=4, stride=2, d_model=8)
    model = DecoKan(cfg, seed=0).eval()
    rng = np.random.default_rng(0)
    x, y = rng.normal(size=(2, 24, 2)), rng.normal(size=(2, 8, 2))
    nx.backward(mse(model(x), y))
    analytic = {f"branch{k}.{n}": p.grad.copy()
                for k, b in enumerate(model.branches) for n, p in b.parameters()}
    numeric = model_mse_fd(model, x, y, h=1e-5)
    assert set(analytic) == set(numeric) and len(numeric) == len(list(model.parameters()))
    worst, where = max((float(rel_err(analytic[k], numeric[k]).max()), k) for k in numeric)
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-4 and elapsed < 120
    record(4, ok, f"{model.num_parameters()} parameters, worst relative error {worst:.1e} "
                  f"({where}), {elapsed:.0f} s")
    assert ok


def test_c05_normalization():
    rng = np.random.default_rng(5)
    x = rng.normal(size=(16, 96, 5)) * rng.uniform(0.01, 1e4, 5) + rng.uniform(-1e3, 1e3, 5)
    xn, state = revin_norm(x)
    back = float(np.max(np.abs(revin_denorm(xn, state).data - x) / np.abs(x).max(axis=(0, 1))))
    # eps = 1e-5 shrinks the variance by eps / var, so slices are drawn with var >= 100
    h = rng.normal(size=(8, 6, 64)) * 10.0 + 3.0
    y = mixer_norm(h).data
    mean_dev = float(np.max(np.abs(y.mean(-1))))
    var_dev = float(np.max(np.abs(y.var(-1) - 1.0)))
    ok = back <= 1e-9 and mean_dev <= 1e-6 and var_dev <= 1e-6
    record(5, ok, f"RevIN round trip {back:.1e}, mixer_norm mean {mean_dev:.1e} var {var_dev:.1e}")
    assert ok


def test_c06_regularizer_cases():
    grid = SplineGrid()
    one = np.zeros((1, 1, 8))
    one[0, 0, 3] = 2.5
    single = KanLayer(np.zeros((1, 1)), np.ones((1, 1)), one, grid)
    uniform = KanLayer(np.zeros((1, 1)), np.ones((1, 1)), np.full((1, 1, 8), 0.7), grid)
    h_single = single.regularization(0.0, 1.0).item()
    h_uniform = uniform.regularization(0.0, 1.0).item()

    class Fixed:
        def regularization(self):
            return nx.Tensor(100.0)

    pred = np.zeros((4, 3))
    truth = np.full((4, 3), 0.5)
    composed = total_loss(pred, truth, Fixed(), gamma=1e-5).item()
    model = DecoKan(ModelConfig(lookback=24, horizon=8, patch=8, stride=4, d_model=4), seed=1)
    xm, ym = np.random.default_rng(6).normal(size=(2, 24, 1)), np.zeros((2, 8, 1))
    out = model(xm)
    exact = mse(out, ym).item() + 1e-5 * model.regularization().item()
    ok = (h_single == 0.0 and abs(h_uniform - math.log(8)) <= 1e-12
          and composed == 0.25 + 1e-5 * 100.0 and abs(composed - 0.251) <= 1e-15
          and total_loss(out, ym, model, 1e-5).item() == exact)
    record(6, ok, f"H(single) = {h_single}, H(uniform) - ln 8 = {h_uniform - math.log(8):.1e}, "
                  f"0.25 + 1e-5 * 100 = {composed}")
    assert ok


def test_c07_synthetic_forecasting():
    t0 = time.perf_counter()
    ds = synthetic_dataset()
    base = persistence_baseline(ds, "test", 48, 12).mse
    ratios = []
    for seed in range(5):
        rep = train(DecoKan(SYNTH, seed), ds, TrainOptions(seed=seed, **SYNTH_OPTS))
        ratios.append(rep.test_mse / base)
    wins = sum(r <= 0.5 for r in ratios)
    elapsed = time.perf_counter() - t0
    ok = wins >= 4 and elapsed < 600
    record(7, ok, f"test MSE / persistence per seed {[round(r, 3) for r in ratios]}, "
                  f"{wins}/5 at or below 0.5, {elapsed:.0f} s")
    assert ok


def test_c08_sparsity_monotone_in_gamma():
    ds = synthetic_dataset(800)
    cfg = ModelConfig(**{**SYNTH.to_dict(), "d_model": 8})
    table = {}
    for seed in range(3):
        for gamma in (0.0, 1e-5, 1e-2):
            model = DecoKan(cfg, seed)
            # a fixed epoch budget keeps the comparison free of early-stopping effects
            train(model, ds, TrainOptions(seed=seed, gamma=gamma, patience=10 ** 6, **SYNTH_OPTS))
            table[seed, gamma] = mean_abs_spline_coeff(model)
    rows = [[table[s, g] for g in (0.0, 1e-5, 1e-2)] for s in range(3)]
    ok = all(a >= b >= c for a, b, c in rows)
    record(8, ok, "mean |c| per seed for gamma 0, 1e-5, 1e-2: "
                  + "; ".join(" ".join(f"{v:.5f}" for v in r) for r in rows))
    assert ok


def test_c09_symbolic_recovery_and_prune_monotone(tmp_path):
    xs = np.linspace(-1.0, 1.0, 512)
    published = {
        "tanh": -1.282 * np.tanh(1.431 * xs + 0.029),
        "sincos": 1.044 * np.sin(1.312 * xs + 0.462) + 0.678 * np.cos(2.631 * xs),
    }
    fits = {k: fit_curve(xs, v) for k, v in published.items()}
    recovered = all(f.family == k and f.r2 >= 0.999 for k, f in fits.items())

    cfg = ModelConfig(**{**SYNTH.to_dict(), "d_model": 8})
    model = DecoKan(cfg, 0)
    train(model, synthetic_dataset(600), TrainOptions(lr=1e-3, batch_size=32, epochs=3))
    save_checkpoint(model, tmp_path / "m.ckpt")
    trained = load_checkpoint(tmp_path / "m.ckpt").model
    taus = [0.0, 0.01, 0.02, 0.05, 0.1, 0.2, 0.5, 1.0]
    grid = default_sample_grid()
    kept = [prune(trained, tau, grid, apply=False).kept_edges() for tau in taus]
    nested = all(kept[i + 1] <= kept[i] for i in range(len(kept) - 1))
    ok = recovered and nested and len(kept[0]) > len(kept[-1])
    record(9, ok, ", ".join(f"{k} R2={f.r2:.6f}" for k, f in fits.items())
           + f"; kept edges over tau {[len(k) for k in kept]}")
    assert ok


def test_c10_ablation_parity():
    ds = synthetic_dataset(600)
    results = {}
    for mode in ABLATIONS:
        cfg = ModelConfig(**{**SYNTH.to_dict(), "d_model": 8, "ablation": mode})
        rep = train(build_ablation(cfg, seed=0), ds, TrainOptions(lr=1e-3, batch_size=32, epochs=2))
        results[mode] = (rep.test_mse, rep.test_mae)
    finite = all(math.isfinite(v) for pair in results.values() for v in pair)
    ref_cfg = ModelConfig(lookback=48, horizon=12, channels=3, level=1, patch=8, stride=4,
                          d_model=8, ablation="mlp_only")
    mlp = build_ablation(ref_cfg, seed=3)
    x = np.random.default_rng(10).normal(size=(48, 3)) * [1.0, 10.0, 0.1] + [0.0, 5.0, -1.0]
    gap = float(np.max(np.abs(mlp(x).data - reference_mlp_forward(mlp, x))))
    ok = finite and gap <= 1e-10
    record(10, ok, ", ".join(f"{k} mse={v[0]:.3f}" for k, v in results.items())
           + f"; mlp_only vs reference {gap:.1e}")
    assert ok


def test_c11_crypto_smoke(tmp_path):
    t0 = time.perf_counter()
    path = os.environ.get("DECOKAN_CRYPTO_CSV")
    if path is None:
        path = tmp_path / "crypto.csv"
        crypto_like_frame(2000, seed=0).to_csv(path, index=False)
    ds = load_csv(path, CsvSchema(timestamp=os.environ.get("DECOKAN_CRYPTO_TIME", "time")))
    assert ds.channels <= 5 and len(ds) <= 2000
    cfg = ModelConfig(lookback=96, horizon=24, channels=ds.channels, level=1, patch=16, stride=8,
                      d_model=64, dropout=0.1)
    assert cfg.range_warnings("crypto") == []
    model = DecoKan(cfg, 0)
    rep = train(model, ds, TrainOptions(lr=3e-4, batch_size=8, epochs=30, seed=0))
    w = make_windows(ds, "test", 96, 24)
    base = persistence_baseline(ds, "test", 96, 24).mse
    per_model = ((predict(model, w.x) - w.y) ** 2).mean((0, 1))
    per_base = ((persistence_forecast(w.x, 24) - w.y) ** 2).mean((0, 1))
    elapsed = time.perf_counter() - t0
    ok = rep.test_mse < base and elapsed < 1200
    record(11, ok, f"{len(ds)} rows x {ds.channels} channels, test MSE {rep.test_mse:.4f} vs "
                   f"persistence {base:.4f}, best epoch {rep.best_epoch}, {elapsed:.0f} s")
    print("per channel model", np.round(per_model, 4), "persistence", np.round(per_base, 4))
    assert ok


def test_c12_determinism(tmp_path):
    ds = synthetic_dataset(600)
    cfg = ModelConfig(**{**SYNTH.to_dict(), "d_model": 8})
    curves, blobs = [], []
    for k in range(2):
        model = DecoKan(cfg, 11)
        rep = train(model, ds, TrainOptions(lr=1e-3, batch_size=32, epochs=3, seed=11))
        save_checkpoint(model, tmp_path / f"{k}.ckpt", seed=11)
        curves.append(rep.loss_curve)
        blobs.append((tmp_path / f"{k}.ckpt").read_bytes())
    gap = float(np.max(np.abs(curves[0] - curves[1])))
    ok = gap <= 1e-12 and blobs[0] == blobs[1]
    record(12, ok, f"loss curve gap {gap:.1e}, checkpoints identical: {blobs[0] == blobs[1]}")
    assert ok
