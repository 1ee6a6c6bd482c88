"""Datasets, windows, metrics, the optimizer and the training loop."""
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from decokan import numerics as nx
from decokan.model import DecoKan, ModelConfig
from decokan.synthetic import synthetic_series
from decokan.training import (
    Adam, Metrics, Scaler, SplitError, TimeSeriesDataset, TrainingDivergedError, TrainOptions,
    TrainReport, WindowingError, evaluate, evaluate_windows, make_windows, mean_abs_spline_coeff,
    metrics_from_errors, persistence_baseline, persistence_forecast, predict, ratio_sizes, train,
    window_arrays,
)

TINY = ModelConfig(lookback=24, horizon=8, channels=1, patch=8, stride=4, d_model=8, dropout=0.1)


def tiny_dataset(n=400, seed=0):
    return TimeSeriesDataset(synthetic_series(n, seed=seed), ["y"])


def test_window_count_and_first_window():
    series = np.arange(100.0)[:, None]
    w = window_arrays(series, 24, 8)
    assert len(w) == 69
    assert np.array_equal(w[0].x[:, 0], np.arange(24)) and np.array_equal(w[0].y[:, 0], np.arange(24, 32))
    last = w[len(w) - 1]
    assert last.origin == 68 and last.y[-1, 0] == 99.0
    with pytest.raises(WindowingError, match="shorter"):
        window_arrays(series[:31], 24, 8)


@given(n=st.integers(40, 200), L=st.integers(1, 20), T=st.integers(1, 20))
def test_windows_are_contiguous(n, L, T):
    series = np.arange(float(n))[:, None]
    w = window_arrays(series, L, T, offset=5)
    assert len(w) == n - L - T + 1
    assert np.all(w.y[:, 0, 0] == w.x[:, -1, 0] + 1)
    assert np.array_equal(w.origins, 5 + np.arange(len(w)))


def test_scaler_fit_on_train_only():
    values = np.concatenate([np.random.default_rng(0).normal(size=(700, 2)), np.full((300, 2), 50.0)])
    ds = TimeSeriesDataset(values, ["a", "b"], (700, 100, 200))
    train = ds.scaled("train")
    assert np.allclose(train.mean(0), 0.0, atol=1e-12) and np.allclose(train.std(0), 1.0, atol=1e-12)
    assert np.allclose(ds.scaler.mean, values[:700].mean(0))
    w = make_windows(ds, "val", 24, 8)
    assert w.origins[0] == 700 and len(w) == 100 - 32 + 1
    assert np.allclose(ds.scaler.inverse(ds.scaled("test")), ds.raw("test"))


def test_split_validation():
    v = np.random.default_rng(0).normal(size=(100, 1))
    assert ratio_sizes(100) == (70, 10, 20)
    assert ratio_sizes(1001) == (700, 101, 200)
    with pytest.raises(SplitError):
        TimeSeriesDataset(v, sizes=(80, 10, 20))
    with pytest.raises(SplitError, match="train split is empty"):
        TimeSeriesDataset(v, sizes=(0, 50, 50))
    with pytest.warns(UserWarning, match="empty"):
        TimeSeriesDataset(v, sizes=(100, 0, 0))
    with pytest.raises(SplitError, match="constant"):
        TimeSeriesDataset(np.ones((100, 1)))
    with pytest.raises(SplitError):
        ratio_sizes(10, (0.8, 0.3, 0.2))
    with pytest.raises(SplitError):
        TimeSeriesDataset(v).bounds("holdout")
    with pytest.raises(ValueError):
        TimeSeriesDataset(v, names=["a", "b"])
    with pytest.raises(WindowingError, match="test split"):
        make_windows(TimeSeriesDataset(v), "test", 16, 8)


def test_metrics_examples():
    y = np.random.default_rng(0).normal(size=(5, 8, 2))
    assert metrics_from_errors(y - y) == Metrics(0.0, 0.0, 5)
    m = metrics_from_errors((y + 1) - y)
    assert m.mse == pytest.approx(1.0) and m.mae == pytest.approx(1.0)


def test_evaluate_order_invariant():
    ds = tiny_dataset()
    model = DecoKan(TINY)
    w = make_windows(ds, "test", 24, 8)
    perm = np.random.default_rng(0).permutation(len(w))
    shuffled = type(w)(w.x[perm], w.y[perm], w.origins[perm])
    a, b = evaluate_windows(model, w), evaluate_windows(model, shuffled)
    assert a.mse == pytest.approx(b.mse, rel=1e-12) and a.mae == pytest.approx(b.mae, rel=1e-12)
    assert evaluate(model, ds).count == len(w)


def test_predict_independent_of_batching_and_threads(monkeypatch):
    model = DecoKan(TINY, seed=2)
    x = np.random.default_rng(0).normal(size=(37, 24, 1))
    ref = predict(model, x, batch_size=64)
    assert np.array_equal(predict(model, x, batch_size=5), ref)
    monkeypatch.setenv("DECOKAN_THREADS", "4")
    assert np.array_equal(predict(model, x, batch_size=5), ref)
    assert not model.training


def test_persistence_examples():
    const = TimeSeriesDataset(np.concatenate([np.random.default_rng(0).normal(size=(70, 1)),
                                              np.full((130, 1), 3.0)]), sizes=(70, 30, 100))
    assert persistence_baseline(const, "test", 16, 8).mse == 0.0
    # sine with horizon of half a period
    t = np.arange(600)
    ds = TimeSeriesDataset(np.sin(2 * np.pi * t / 24)[:, None], sizes=(400, 0, 200))
    m = persistence_baseline(ds, "test", 24, 12)
    w = make_windows(ds, "test", 24, 12)
    theta = 2 * np.pi * (w.origins + 23) / 24
    hs = np.arange(1, 13)
    closed = np.mean((np.sin(theta[:, None] + 2 * np.pi * hs / 24) - np.sin(theta[:, None])) ** 2)
    assert m.mse * ds.scaler.std[0] ** 2 == pytest.approx(closed, rel=1e-10)
    assert persistence_forecast(w.x, 12).shape == w.y.shape


def test_persistence_random_walk_grows_with_horizon():
    rw = np.cumsum(np.random.default_rng(0).normal(size=20000))[:, None]
    ds = TimeSeriesDataset(rw, sizes=(10000, 0, 10000))
    mses = [persistence_baseline(ds, "test", 8, T).mse * ds.scaler.std[0] ** 2 for T in (1, 4, 16)]
    assert mses[0] < mses[1] < mses[2]
    # mean over h = 1..T of h * Var(increment) = (T + 1) / 2
    assert mses[2] == pytest.approx(8.5, rel=0.1)


def test_adam_first_step_is_lr_times_sign():
    p = nx.Tensor(np.array([1.0, -2.0, 0.5]), requires_grad=True)
    opt = Adam([p], lr=0.1)
    p.grad = np.array([3.0, -0.2, 0.0])
    opt.step()
    assert np.allclose(p.data, [0.9, -1.9, 0.5], atol=1e-8)
    opt.zero_grad()
    assert p.grad is None


def test_adam_minimizes_quadratic():
    p = nx.Tensor(np.array([5.0, -3.0]), requires_grad=True)
    opt = Adam([p], lr=0.05)
    for _ in range(2000):
        opt.zero_grad()
        nx.backward(nx.sum(nx.square(p - np.array([1.0, 2.0]))))
        opt.step()
    assert np.allclose(p.data, [1.0, 2.0], atol=1e-3)


def test_train_options_validation():
    with pytest.raises(ValueError):
        TrainOptions(lr=0.0)
    with pytest.raises(ValueError):
        TrainOptions(gamma=-1.0)


def test_training_is_deterministic_and_restores_best():
    ds = tiny_dataset()
    opts = TrainOptions(lr=1e-3, batch_size=16, epochs=3, seed=4)
    r1 = train(DecoKan(TINY, 4), ds, opts)
    m2 = DecoKan(TINY, 4)
    r2 = train(m2, ds, opts)
    assert np.array_equal(r1.loss_curve, r2.loss_curve)
    assert r1.test_mse == r2.test_mse
    best = r2.epochs[r2.best_epoch - 1].val_mse
    assert all(best <= e.val_mse for e in r2.epochs)
    assert evaluate(m2, ds, "val").mse == pytest.approx(best, rel=1e-12)
    assert np.isfinite(r2.test_mse) and np.isfinite(r2.test_mae)


def test_report_text_round_trip():
    ds = tiny_dataset()
    rep = train(DecoKan(TINY, 0), ds, TrainOptions(lr=1e-3, batch_size=16, epochs=2))
    back = TrainReport.from_text(rep.to_text())
    assert np.array_equal(back.loss_curve, rep.loss_curve)
    assert back.test_mse == rep.test_mse and back.best_epoch == rep.best_epoch
    assert back.seed == rep.seed


def test_early_stopping_and_no_validation():
    ds = tiny_dataset()
    rep = train(DecoKan(TINY, 0), ds, TrainOptions(lr=0.3, batch_size=16, epochs=30, patience=1))
    assert rep.stopped_early and len(rep.epochs) < 30
    with pytest.warns(UserWarning):
        no_val = ds.with_sizes((400, 0, 0))
    rep = train(DecoKan(TINY, 0), no_val, TrainOptions(lr=1e-3, batch_size=16, epochs=2))
    assert math.isnan(rep.best_val_mse) and math.isnan(rep.test_mse)


def test_training_errors():
    ds = tiny_dataset()
    with pytest.raises(ValueError, match="channels"):
        train(DecoKan(ModelConfig(**{**TINY.to_dict(), "channels": 2})), ds)
    with pytest.raises(WindowingError, match="batch"):
        train(DecoKan(TINY), ds, TrainOptions(batch_size=10000, epochs=1))
    with pytest.raises(TrainingDivergedError, match="epoch 1"):
        model = DecoKan(TINY)
        next(model.parameters())[1].data[:] = np.nan
        train(model, ds, TrainOptions(epochs=1, batch_size=16))


def test_loss_decreases_over_first_epochs():
    ds = TimeSeriesDataset(synthetic_series(1200, seed=0), ["y"])
    cfg = ModelConfig(lookback=48, horizon=12, channels=1, patch=8, stride=4, d_model=16, dropout=0.1)
    good = 0
    for seed in range(5):
        rep = train(DecoKan(cfg, seed), ds, TrainOptions(lr=1e-3, batch_size=32, epochs=5, seed=seed,
                                                         patience=10))
        losses = rep.loss_curve[:, 1]
        good += bool(losses[-1] < losses[0])
    assert good >= 4


def test_mean_abs_spline_coeff():
    m = DecoKan(TINY)
    manual = np.mean(np.abs(np.concatenate([l.spline_coeffs.data.ravel() for *_, l in m.kan_layers()])))
    assert mean_abs_spline_coeff(m) == manual
    assert mean_abs_spline_coeff(DecoKan(ModelConfig(**{**TINY.to_dict(), "ablation": "mlp_only"}))) == 0.0


def test_scaler_rejects_empty():
    with pytest.raises(SplitError):
        Scaler.fit(np.zeros((0, 2)))
