"""Daily price CSV ingestion and log-return preprocessing.

Real series have no hidden state, so the classification pipeline runs
with the oracle columns absent.  The naive baseline assigns the next
squared return to the bucket of the window's mean squared return.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from datetime import date

import numpy as np

from .data import BucketSpec, TimeSeries, bucket_of

__all__ = [
    "PriceSeries",
    "ReturnSeries",
    "load_prices",
    "log_returns",
    "squared_returns",
    "naive_classify",
    "write_returns",
]


@dataclass(frozen=True)
class PriceSeries:
    """Strictly positive closes on strictly increasing dates."""

    dates: tuple[date, ...]
    closes: np.ndarray

    def __post_init__(self):
        closes = np.asarray(self.closes, dtype=np.float64)
        object.__setattr__(self, "closes", closes)
        if len(self.dates) != closes.shape[0]:
            raise ValueError("dates and closes must have equal length")
        if closes.shape[0] < 2:
            raise ValueError("need at least two prices")
        if not np.all(closes > 0):
            raise ValueError("closes must be strictly positive")
        if any(b <= a for a, b in zip(self.dates, self.dates[1:])):
            raise ValueError("dates must be strictly increasing")

    def __len__(self) -> int:
        return self.closes.shape[0]


@dataclass(frozen=True)
class ReturnSeries:
    """Log returns (or their squares) with the dates they end on."""

    dates: tuple[date, ...]
    values: np.ndarray
    kind: str

    def __post_init__(self):
        if self.kind not in ("return", "squared-return"):
            raise ValueError(f"unknown return kind {self.kind!r}")
        if len(self.dates) != self.values.shape[0]:
            raise ValueError("dates and values must have equal length")

    def __len__(self) -> int:
        return self.values.shape[0]

    def to_time_series(self) -> TimeSeries:
        return TimeSeries(values=self.values, hidden=None)


def load_prices(path) -> PriceSeries:
    """Read a ``date,close`` CSV.

    Dates are ISO-8601 and may arrive in any order; rows are sorted by
    date.  Duplicate dates, non-positive closes, and malformed rows are
    rejected with the offending line number.
    """
    rows: list[tuple[date, float]] = []
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise FileNotFoundError(f"cannot read price file {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [c.strip().lower() for c in header] != ["date", "close"]:
            raise ValueError(f"{path}: expected header 'date,close', got {header}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 2:
                raise ValueError(f"{path}: line {lineno}: expected 2 fields, got {len(row)}")
            try:
                day = date.fromisoformat(row[0].strip())
                close = float(row[1])
            except ValueError as exc:
                raise ValueError(f"{path}: line {lineno}: {exc}") from exc
            if not np.isfinite(close) or close <= 0:
                raise ValueError(f"{path}: line {lineno}: close must be positive, got {row[1]}")
            rows.append((day, close))
    if len(rows) < 2:
        raise ValueError(f"{path}: need at least two price rows, got {len(rows)}")
    rows.sort(key=lambda r: r[0])
    for (a, _), (b, _) in zip(rows, rows[1:]):
        if a == b:
            raise ValueError(f"{path}: duplicate date {a.isoformat()}")
    return PriceSeries(
        dates=tuple(r[0] for r in rows),
        closes=np.array([r[1] for r in rows], dtype=np.float64),
    )


def log_returns(prices: PriceSeries) -> ReturnSeries:
    """y[i] = ln(close[i] / close[i-1]); one fewer entry than prices."""
    values = np.diff(np.log(prices.closes))
    return ReturnSeries(dates=prices.dates[1:], values=values, kind="return")


def squared_returns(prices: PriceSeries) -> ReturnSeries:
    r = log_returns(prices)
    return ReturnSeries(dates=r.dates, values=r.values * r.values, kind="squared-return")


def naive_classify(window: np.ndarray, spec: BucketSpec) -> int:
    """Bucket of the window mean: the no-model volatility persistence guess."""
    window = np.asarray(window, dtype=np.float64)
    if window.ndim != 1 or window.shape[0] < 1:
        raise ValueError(f"expected a non-empty 1-D window, got shape {window.shape}")
    return bucket_of(float(window.mean()), spec)


def write_returns(prices: PriceSeries, path) -> None:
    """Export ``date,log_return,squared_return`` rows, one per return."""
    r = log_returns(prices)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["date", "log_return", "squared_return"])
        for day, value in zip(r.dates, r.values):
            writer.writerow([day.isoformat(), repr(float(value)), repr(float(value * value))])
