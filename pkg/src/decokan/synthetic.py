"""Synthetic series for tests, scripts and offline smoke runs.

``crypto_like_frame`` imitates the layout of a Coin Metrics community-data
daily CSV (a ``time`` column of ISO timestamps plus metric columns, with
leading nulls for a metric that starts late). Price follows a geometric
random walk and market cap tracks it. The network-activity columns carry weekly
seasonality on top of slow growth.
"""
from __future__ import annotations

import math

import numpy as np
import pandas as pd


def synthetic_series(n: int = 1200, period: float = 24.0, slope: float = 0.05,
                     noise_var: float = 0.01, seed: int = 0) -> np.ndarray:
    """``sin(2 pi t / period) + slope * t + N(0, noise_var)`` as an (n, 1) array."""
    rng = np.random.default_rng(seed)
    t = np.arange(n, dtype=np.float64)
    y = np.sin(2 * np.pi * t / period) + slope * t + rng.normal(0.0, math.sqrt(noise_var), n)
    return y[:, None]


def synthetic_frame(n: int = 1200, seed: int = 0, start: str = "2020-01-01",
                    freq: str = "h") -> pd.DataFrame:
    """``synthetic_series`` with a ``date`` column, ready for ``to_csv``."""
    return pd.DataFrame({
        "date": pd.date_range(start, periods=n, freq=freq).strftime("%Y-%m-%d %H:%M:%S"),
        "y": synthetic_series(n, seed=seed)[:, 0],
    })


CRYPTO_COLUMNS = ("PriceUSD", "CapMrktCurUSD", "AdrActCnt", "TxCnt", "HashRate")


def crypto_like_frame(n: int = 1500, seed: int = 0, start: str = "2016-01-01",
                      late_start: int = 30, missing: int = 3) -> pd.DataFrame:
    """Daily frame with ``time`` plus the five ``CRYPTO_COLUMNS``.

    ``HashRate`` is null for the first ``late_start`` days and ``missing``
    random cells elsewhere are blanked, so the cleaning path is exercised.
    """
    rng = np.random.default_rng(seed)
    t = np.arange(n, dtype=np.float64)
    week = 2 * np.pi * t / 7.0

    log_price = math.log(400.0) + np.cumsum(rng.normal(0.0015, 0.035, n))
    price = np.exp(log_price)
    supply = 15e6 + 1800.0 * t
    cap = price * supply

    growth = 1.0 + 0.6 * t / n
    adr = 6e5 * growth * (1.0 + 0.18 * np.sin(week) + 0.06 * np.cos(2 * week))
    adr *= np.exp(rng.normal(0.0, 0.03, n))
    tx = 2.4e5 * growth * (1.0 + 0.15 * np.sin(week + 0.3)) * np.exp(rng.normal(0.0, 0.03, n))
    hash_rate = 1e6 * np.exp(2.0 * t / n) * (1.0 + 0.05 * np.sin(2 * np.pi * t / 90.0))
    hash_rate *= np.exp(rng.normal(0.0, 0.04, n))

    frame = pd.DataFrame({
        "time": pd.date_range(start, periods=n, freq="D").strftime("%Y-%m-%dT%H:%M:%S.000000000Z"),
        "PriceUSD": price, "CapMrktCurUSD": cap, "AdrActCnt": np.round(adr),
        "TxCnt": np.round(tx), "HashRate": hash_rate,
    })
    frame.loc[:late_start - 1, "HashRate"] = np.nan
    if missing:
        rows = rng.choice(np.arange(late_start, n), size=missing, replace=False)
        cols = rng.choice(np.array(CRYPTO_COLUMNS), size=missing)
        for r, c in zip(rows, cols):
            frame.loc[r, c] = np.nan
    return frame
