"""Datasets, sliding windows, the Adam training loop and forecast metrics.

All metrics are computed on train-split standard-scaled values, so MSE/MAE
numbers are comparable across channels with different units.
"""
from __future__ import annotations

import math
import os
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from . import numerics as nx
from .model import DecoKan, total_loss
from .numerics import Tensor

SPLITS = ("train", "val", "test")


class WindowingError(ValueError):
    pass


class SplitError(ValueError):
    pass


class TrainingDivergedError(FloatingPointError):
    pass


@dataclass(frozen=True)
class Scaler:
    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, values: np.ndarray) -> "Scaler":
        values = np.asarray(values, dtype=np.float64)
        if len(values) == 0:
            raise SplitError("cannot fit a scaler on an empty train split")
        mean = values.mean(axis=0)
        std = values.std(axis=0)
        if np.any(std <= 0):
            bad = np.flatnonzero(std <= 0).tolist()
            raise SplitError(f"channels {bad} are constant on the train split")
        return cls(mean, std)

    def transform(self, values):
        return (np.asarray(values, dtype=np.float64) - self.mean) / self.std

    def inverse(self, values):
        return np.asarray(values, dtype=np.float64) * self.std + self.mean


class TimeSeriesDataset:
    """A ``(T_total, C)`` series with chronological train/val/test sizes.

    The scaler is fit on the train rows only and is recomputed whenever the
    split sizes change.
    """

    def __init__(self, values, names: Sequence[str] | None = None,
                 sizes: tuple[int, int, int] | None = None, timestamps=None):
        values = np.asarray(values, dtype=np.float64)
        if values.ndim == 1:
            values = values[:, None]
        if values.ndim != 2 or values.shape[1] < 1:
            raise ValueError(f"values must be (T, C), got shape {values.shape}")
        self.values = values
        self.names = list(names) if names is not None else [f"ch{k}" for k in range(values.shape[1])]
        if len(self.names) != values.shape[1]:
            raise ValueError("one name per channel required")
        self.timestamps = None if timestamps is None else np.asarray(timestamps)
        if self.timestamps is not None and len(self.timestamps) != len(values):
            raise ValueError("timestamps and values differ in length")
        self.sizes = _check_sizes(sizes if sizes is not None else ratio_sizes(len(values)), len(values))
        self.scaler = Scaler.fit(self.values[:self.sizes[0]])
        self.notes: list[str] = []

    def __len__(self) -> int:
        return len(self.values)

    @property
    def channels(self) -> int:
        return self.values.shape[1]

    def bounds(self, split: str) -> tuple[int, int]:
        if split not in SPLITS:
            raise SplitError(f"unknown split {split!r}")
        k = SPLITS.index(split)
        start = sum(self.sizes[:k])
        return start, start + self.sizes[k]

    def raw(self, split: str) -> np.ndarray:
        a, b = self.bounds(split)
        return self.values[a:b]

    def scaled(self, split: str) -> np.ndarray:
        return self.scaler.transform(self.raw(split))

    def with_sizes(self, sizes: tuple[int, int, int]) -> "TimeSeriesDataset":
        ds = TimeSeriesDataset(self.values, self.names, sizes, self.timestamps)
        ds.notes = list(self.notes)
        return ds


def ratio_sizes(n: int, ratios: tuple[float, float, float] = (0.7, 0.1, 0.2)) -> tuple[int, int, int]:
    """Train and test take ``int(ratio * n)``; validation gets the remainder."""
    if any(r < 0 for r in ratios) or sum(ratios) > 1 + 1e-12:
        raise SplitError(f"invalid split ratios {ratios}")
    train, test = int(ratios[0] * n), int(ratios[2] * n)
    val = n - train - test if math.isclose(sum(ratios), 1.0) else int(ratios[1] * n)
    return train, val, test


def _check_sizes(sizes, n: int) -> tuple[int, int, int]:
    sizes = tuple(int(s) for s in sizes)
    if len(sizes) != 3 or any(s < 0 for s in sizes):
        raise SplitError(f"split sizes must be three non-negative ints, got {sizes}")
    if sum(sizes) > n:
        raise SplitError(f"split sizes {sizes} sum to {sum(sizes)} > {n} rows")
    if sizes[0] == 0:
        raise SplitError("train split is empty")
    if sizes[1] == 0 and sizes[2] == 0:
        warnings.warn("validation and test splits are empty; training only", stacklevel=3)
    return sizes


# ---------------------------------------------------------------------------
# windows

@dataclass(frozen=True)
class WindowSample:
    x: np.ndarray
    y: np.ndarray
    origin: int


@dataclass(frozen=True)
class Windows:
    """Stacked stride-1 windows: ``x`` (n, L, C), ``y`` (n, T, C), ``origins`` (n,).

    ``origins`` index rows of the full dataset where each look-back starts.
    """

    x: np.ndarray
    y: np.ndarray
    origins: np.ndarray

    def __len__(self) -> int:
        return len(self.origins)

    def __getitem__(self, k: int) -> WindowSample:
        return WindowSample(self.x[k], self.y[k], int(self.origins[k]))

    def __iter__(self) -> Iterator[WindowSample]:
        return (self[k] for k in range(len(self)))


def window_arrays(series: np.ndarray, lookback: int, horizon: int, offset: int = 0) -> Windows:
    series = np.asarray(series, dtype=np.float64)
    n = len(series) - lookback - horizon + 1
    if lookback < 1 or horizon < 1:
        raise WindowingError("lookback and horizon must be >= 1")
    if n < 1:
        raise WindowingError(
            f"segment of {len(series)} rows is shorter than L + T = {lookback + horizon}")
    # (n, C, L+T) view -> (n, L+T, C)
    view = np.lib.stride_tricks.sliding_window_view(series, lookback + horizon, axis=0)[:n]
    view = np.swapaxes(view, 1, 2)
    return Windows(np.ascontiguousarray(view[:, :lookback]),
                   np.ascontiguousarray(view[:, lookback:]),
                   offset + np.arange(n))


def make_windows(ds: TimeSeriesDataset, split: str, lookback: int, horizon: int) -> Windows:
    """All stride-1 windows lying entirely inside ``split``, scaled."""
    start, _ = ds.bounds(split)
    try:
        return window_arrays(ds.scaled(split), lookback, horizon, offset=start)
    except WindowingError as exc:
        raise WindowingError(f"{split} split: {exc}") from None


# ---------------------------------------------------------------------------
# metrics

@dataclass(frozen=True)
class Metrics:
    mse: float
    mae: float
    count: int = 0


def metrics_from_errors(err: np.ndarray) -> Metrics:
    err = np.asarray(err, dtype=np.float64)
    return Metrics(float(np.mean(err ** 2)), float(np.mean(np.abs(err))), err.shape[0] if err.ndim else 1)


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("DECOKAN_THREADS", "1")))
    except ValueError:
        return 1


def predict(model: DecoKan, x: np.ndarray, batch_size: int = 256) -> np.ndarray:
    """Eval-mode forecasts for stacked inputs ``(n, L, C)``.

    Batches may run on ``DECOKAN_THREADS`` worker threads; each batch result is
    independent of the others so the output does not depend on the thread count.
    """
    was_training = model.training
    model.eval()
    chunks = [x[k:k + batch_size] for k in range(0, len(x), batch_size)]

    def run(chunk):
        with nx.no_grad():
            return model.forward(chunk).data

    try:
        workers = min(_threads(), len(chunks))
        if workers > 1:
            with ThreadPoolExecutor(workers) as pool:
                outs = list(pool.map(run, chunks))
        else:
            outs = [run(c) for c in chunks]
    finally:
        model.train(was_training)
    if not outs:
        return np.zeros((0, model.config.horizon, model.config.channels))
    return np.concatenate(outs, axis=0)


def evaluate_windows(model: DecoKan, windows: Windows, batch_size: int = 256) -> Metrics:
    if len(windows) == 0:
        raise WindowingError("no windows to evaluate")
    return metrics_from_errors(predict(model, windows.x, batch_size) - windows.y)


def evaluate(model: DecoKan, ds: TimeSeriesDataset, split: str = "test",
             batch_size: int = 256) -> Metrics:
    cfg = model.config
    return evaluate_windows(model, make_windows(ds, split, cfg.lookback, cfg.horizon), batch_size)


def persistence_forecast(x: np.ndarray, horizon: int) -> np.ndarray:
    """Repeat the last observed row ``horizon`` times: (n, L, C) -> (n, T, C)."""
    return np.repeat(x[:, -1:, :], horizon, axis=1)


def persistence_baseline(ds: TimeSeriesDataset, split: str, lookback: int, horizon: int) -> Metrics:
    w = make_windows(ds, split, lookback, horizon)
    return metrics_from_errors(persistence_forecast(w.x, horizon) - w.y)


# ---------------------------------------------------------------------------
# optimization

class Adam:
    def __init__(self, params: Sequence[Tensor], lr: float, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = 0

    def step(self) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            if g is None:
                continue
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p.data = p.data - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None


@dataclass(frozen=True)
class TrainOptions:
    lr: float = 3e-4
    batch_size: int = 32
    epochs: int = 30
    gamma: float = 1e-5
    patience: int = 5
    seed: int = 0
    eval_batch_size: int = 256

    def __post_init__(self):
        if self.lr <= 0 or self.batch_size < 1 or self.epochs < 1 or self.patience < 1:
            raise ValueError(f"invalid training options {self}")
        if self.gamma < 0:
            raise ValueError("gamma must be >= 0")


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_mse: float


@dataclass
class TrainReport:
    seed: int
    epochs: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = 0
    best_val_mse: float = math.nan
    test_mse: float = math.nan
    test_mae: float = math.nan
    wall_clock: float = 0.0
    stopped_early: bool = False

    @property
    def loss_curve(self) -> np.ndarray:
        return np.array([[e.epoch, e.train_loss, e.val_mse] for e in self.epochs])

    def to_text(self) -> str:
        lines = [f"seed={self.seed}", f"best_epoch={self.best_epoch}",
                 f"best_val_mse={self.best_val_mse!r}", f"test_mse={self.test_mse!r}",
                 f"test_mae={self.test_mae!r}", f"stopped_early={int(self.stopped_early)}",
                 f"wall_clock={self.wall_clock:.3f}", f"num_epochs={len(self.epochs)}"]
        for e in self.epochs:
            lines.append(f"epoch.{e.epoch}.train_loss={e.train_loss!r}")
            lines.append(f"epoch.{e.epoch}.val_mse={e.val_mse!r}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "TrainReport":
        kv = dict(line.split("=", 1) for line in text.splitlines() if "=" in line)
        rep = cls(seed=int(kv["seed"]), best_epoch=int(kv["best_epoch"]),
                  best_val_mse=float(kv["best_val_mse"]), test_mse=float(kv["test_mse"]),
                  test_mae=float(kv["test_mae"]), wall_clock=float(kv["wall_clock"]),
                  stopped_early=bool(int(kv["stopped_early"])))
        for k in range(1, int(kv["num_epochs"]) + 1):
            rep.epochs.append(EpochRecord(k, float(kv[f"epoch.{k}.train_loss"]),
                                          float(kv[f"epoch.{k}.val_mse"])))
        return rep


def _diverged(model: DecoKan, loss: float, epoch: int, batch: int) -> TrainingDivergedError:
    bad = [name for name, p in model.parameters() if not np.all(np.isfinite(p.data))]
    return TrainingDivergedError(
        f"loss became {loss} at epoch {epoch}, batch {batch}; "
        f"non-finite parameters: {bad[:5] or 'none'}; try a lower learning rate")


def train(model: DecoKan, ds: TimeSeriesDataset, opts: TrainOptions = TrainOptions(),
          log=None) -> TrainReport:
    """Adam on MSE + gamma * regularizer with early stopping on validation MSE.

    Without a usable validation split the training loss drives early stopping.
    The parameters of the best epoch are restored before the test evaluation.
    """
    cfg = model.config
    if ds.channels != cfg.channels:
        raise ValueError(f"dataset has {ds.channels} channels, model expects {cfg.channels}")
    train_w = make_windows(ds, "train", cfg.lookback, cfg.horizon)
    n_batches = len(train_w) // opts.batch_size
    if n_batches == 0:
        raise WindowingError(
            f"{len(train_w)} training windows cannot fill one batch of {opts.batch_size}")
    val_w = _optional_windows(ds, "val", cfg)
    test_w = _optional_windows(ds, "test", cfg)

    params = [p for _, p in model.parameters()]
    opt = Adam(params, opts.lr)
    rng = np.random.default_rng(opts.seed)
    report = TrainReport(seed=opts.seed)
    best_score, best_state, stale = math.inf, model.state_arrays(), 0
    t0 = time.perf_counter()

    for epoch in range(1, opts.epochs + 1):
        model.train()
        order = rng.permutation(len(train_w))
        losses = []
        for b in range(n_batches):
            idx = order[b * opts.batch_size:(b + 1) * opts.batch_size]
            pred = model.forward(train_w.x[idx])
            loss = total_loss(pred, train_w.y[idx], model, opts.gamma)
            value = loss.item()
            if not math.isfinite(value):
                raise _diverged(model, value, epoch, b)
            opt.zero_grad()
            nx.backward(loss)
            opt.step()
            losses.append(value)
        model.eval()
        train_loss = float(np.mean(losses))
        val_mse = (evaluate_windows(model, val_w, opts.eval_batch_size).mse
                   if val_w is not None else math.nan)
        if not math.isfinite(train_loss) or (val_w is not None and not math.isfinite(val_mse)):
            raise _diverged(model, val_mse, epoch, n_batches)
        report.epochs.append(EpochRecord(epoch, train_loss, val_mse))
        if log:
            log(f"epoch {epoch:3d}  train {train_loss:.6f}  val {val_mse:.6f}")
        score = val_mse if val_w is not None else train_loss
        if score < best_score:
            best_score, best_state, stale = score, model.state_arrays(), 0
            report.best_epoch = epoch
        else:
            stale += 1
            if stale >= opts.patience:
                report.stopped_early = True
                break

    model.load_state_arrays(best_state)
    model.eval()
    report.best_val_mse = report.epochs[report.best_epoch - 1].val_mse
    if test_w is not None:
        m = evaluate_windows(model, test_w, opts.eval_batch_size)
        report.test_mse, report.test_mae = m.mse, m.mae
    report.wall_clock = time.perf_counter() - t0
    return report


def _optional_windows(ds: TimeSeriesDataset, split: str, cfg) -> Windows | None:
    a, b = ds.bounds(split)
    if b - a == 0:
        return None
    return make_windows(ds, split, cfg.lookback, cfg.horizon)


def mean_abs_spline_coeff(model: DecoKan) -> float:
    """Mean |c| over every spline coefficient in the model."""
    coeffs = [layer.spline_coeffs.data.ravel() for *_, layer in model.kan_layers()]
    return float(np.mean(np.abs(np.concatenate(coeffs)))) if coeffs else 0.0
