"""CSV loading for ETT-style and Coin Metrics-style daily/hourly series.

Cleaning policy: unparseable value cells count as missing; rows with an
unparseable timestamp are dropped. Either kind of bad row is tolerated up to
1% of the file. Missing cells are forward-filled, then back-filled (leading
nulls of late-starting metrics), and columns that end up constant or empty
are dropped because the scaler cannot standardize them.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd

from .training import SplitError, TimeSeriesDataset, ratio_sizes

log = logging.getLogger(__name__)

BAD_ROW_TOLERANCE = 0.01

# (train, val, test) row counts for the benchmark datasets
BENCHMARK_SPLITS = {
    "ETTh1": (8545, 2881, 2881),
    "ETTh2": (8545, 2881, 2881),
    "ETTm1": (34465, 11521, 11521),
    "ETTm2": (34465, 11521, 11521),
    "BTC": (6099, 4269, 1219),
    "ETH": (3700, 2590, 740),
    "XMR": (4168, 2917, 833),
}


class IngestionError(ValueError):
    pass


@dataclass(frozen=True)
class CsvSchema:
    """How to read one file. ``columns=None`` takes every non-timestamp column."""

    timestamp: str = "date"
    columns: tuple[str, ...] | None = None
    delimiter: str = ","
    missing: str = "ffill_bfill"

    def __post_init__(self):
        if self.missing not in ("ffill_bfill", "error"):
            raise ValueError(f"unknown missing-value policy {self.missing!r}")
        if self.columns is not None and len(self.columns) == 0:
            raise ValueError("schema needs at least one value column")


def _parse_timestamps(raw: pd.Series) -> pd.Series:
    text = raw.astype("string").str.strip()
    numeric = pd.to_numeric(text, errors="coerce")
    if numeric.notna().sum() >= 0.5 * len(text) and len(text):
        # epoch seconds, or milliseconds for 13-digit values
        unit = "ms" if numeric.abs().max() > 1e11 else "s"
        return pd.to_datetime(numeric, unit=unit, errors="coerce", utc=True)
    parsed = pd.to_datetime(text, errors="coerce", utc=True, format="ISO8601")
    return parsed


@dataclass
class RawTable:
    timestamps: np.ndarray
    values: np.ndarray
    names: list[str]
    notes: list[str]


def load_csv(path, schema: CsvSchema = CsvSchema(), sizes: tuple[int, int, int] | str | None = None,
             ratios: tuple[float, float, float] = (0.7, 0.1, 0.2)) -> TimeSeriesDataset:
    """Read, validate and clean a CSV into a dataset.

    ``sizes`` may be an explicit (train, val, test) triple or a key of
    ``BENCHMARK_SPLITS``; otherwise ``ratios`` apply to the cleaned row count.
    The returned dataset carries the cleaning log in ``notes``.
    """
    table = read_table(path, schema)
    ds = TimeSeriesDataset(table.values, table.names,
                           resolve_sizes(sizes, len(table.values), ratios), table.timestamps)
    ds.notes = table.notes
    return ds


def read_table(path, schema: CsvSchema = CsvSchema(), drop_constant: bool = True) -> RawTable:
    """Parse and clean a CSV without building splits."""
    path = Path(path)
    try:
        df = pd.read_csv(path, sep=schema.delimiter, dtype=str, keep_default_na=False,
                         skip_blank_lines=True, encoding="utf-8")
    except FileNotFoundError:
        raise
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as exc:
        raise IngestionError(f"{path}: cannot parse CSV ({exc})") from None
    if schema.timestamp not in df.columns:
        raise IngestionError(f"{path}: timestamp column {schema.timestamp!r} not in header {list(df.columns)}")
    columns = list(schema.columns) if schema.columns is not None else \
        [c for c in df.columns if c != schema.timestamp]
    missing_cols = [c for c in columns if c not in df.columns]
    if missing_cols:
        raise IngestionError(f"{path}: value columns {missing_cols} not in header")
    if not columns:
        raise IngestionError(f"{path}: no value columns")
    notes: list[str] = []
    n_rows = len(df)
    if n_rows == 0:
        raise IngestionError(f"{path}: no data rows")
    line_no = np.arange(n_rows) + 2  # header is line 1

    stamps = _parse_timestamps(df[schema.timestamp]).dt.tz_localize(None)
    bad_stamp = stamps.isna().to_numpy()

    values = np.empty((n_rows, len(columns)))
    bad_cell = np.zeros((n_rows, len(columns)), dtype=bool)
    for k, c in enumerate(columns):
        text = df[c].astype("string").str.strip()
        is_blank = text.isna() | text.isin(["", "NA", "NaN", "nan", "null", "NULL", "None"])
        num = pd.to_numeric(text.where(~is_blank), errors="coerce").astype(np.float64)
        bad_cell[:, k] = (~is_blank & num.isna()).to_numpy() | np.isinf(num.to_numpy())
        values[:, k] = num.to_numpy()
    values[bad_cell] = np.nan

    bad_rows = bad_stamp | bad_cell.any(axis=1)
    if bad_rows.sum() > BAD_ROW_TOLERANCE * n_rows:
        lines = line_no[bad_rows].tolist()
        shown = ", ".join(map(str, lines[:20])) + (" ..." if len(lines) > 20 else "")
        raise IngestionError(
            f"{path}: {len(lines)} of {n_rows} rows unparseable (> {BAD_ROW_TOLERANCE:.0%}); lines {shown}")
    if bad_rows.any():
        notes.append(f"tolerated unparseable content on lines {line_no[bad_rows].tolist()}")
    if bad_stamp.any():
        notes.append(f"dropped {int(bad_stamp.sum())} rows with unparseable timestamps")
    keep = ~bad_stamp
    stamps = stamps[keep].reset_index(drop=True)
    values = values[keep]
    kept_lines = line_no[keep]

    diffs = np.diff(stamps.to_numpy().astype("datetime64[ns]").astype(np.int64))
    if np.any(diffs <= 0):
        k = int(np.flatnonzero(diffs <= 0)[0])
        raise IngestionError(
            f"{path}: timestamps not strictly increasing at lines {kept_lines[k]} and {kept_lines[k + 1]}")

    nan = np.isnan(values)
    if nan.any():
        if schema.missing == "error":
            r, c = np.argwhere(nan)[0]
            raise IngestionError(f"{path}: missing value in column {columns[c]!r} on line {kept_lines[r]}")
        frame = pd.DataFrame(values, columns=columns).ffill().bfill()
        for c, name in enumerate(columns):
            if nan[:, c].any() and not nan[:, c].all():
                lines = kept_lines[nan[:, c]].tolist()
                msg = f"filled {len(lines)} missing cells in {name!r} (lines {lines[:10]}{' ...' if len(lines) > 10 else ''})"
                notes.append(msg)
                log.info("%s: %s", path, msg)
        values = frame.to_numpy(dtype=np.float64)

    keep_cols = []
    for c, name in enumerate(columns):
        col = values[:, c]
        if np.all(np.isnan(col)):
            reason = "has no values"
        elif drop_constant and np.all(col == col[0]):
            reason = "is constant"
        else:
            keep_cols.append(c)
            continue
        msg = f"dropped column {name!r}: it {reason}"
        notes.append(msg)
        warnings.warn(f"{path}: {msg}", stacklevel=2)
    if not keep_cols:
        raise IngestionError(f"{path}: every value column is constant or empty")
    values = values[:, keep_cols]
    names = [columns[c] for c in keep_cols]

    return RawTable(stamps.to_numpy(), values, names, notes)


def resolve_sizes(sizes, n: int, ratios: tuple[float, float, float] = (0.7, 0.1, 0.2)) -> tuple[int, int, int]:
    if sizes is None:
        return ratio_sizes(n, ratios)
    if isinstance(sizes, str):
        if sizes not in BENCHMARK_SPLITS:
            raise SplitError(f"unknown split preset {sizes!r}; choose from {sorted(BENCHMARK_SPLITS)}")
        sizes = BENCHMARK_SPLITS[sizes]
    sizes = tuple(int(s) for s in sizes)
    if len(sizes) != 3:
        raise SplitError("split sizes need three entries")
    if sum(sizes) > n:
        raise SplitError(f"split sizes {sizes} need {sum(sizes)} rows, file has {n}")
    return sizes


@dataclass(frozen=True)
class SplitViews:
    train: np.ndarray
    val: np.ndarray
    test: np.ndarray


def split(ds: TimeSeriesDataset, sizes: Sequence[int]) -> SplitViews:
    """Contiguous chronological train/val/test views of the raw values."""
    ds2 = ds.with_sizes(tuple(sizes))
    return SplitViews(ds2.raw("train"), ds2.raw("val"), ds2.raw("test"))


def infer_frequency(timestamps) -> np.timedelta64:
    """Median spacing of the timestamps, used to extend forecasts."""
    ts = np.asarray(timestamps).astype("datetime64[ns]")
    if len(ts) < 2:
        raise IngestionError("need at least two timestamps to infer a frequency")
    return np.median(np.diff(ts).astype(np.int64)).astype("timedelta64[ns]")
