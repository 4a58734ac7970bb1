"""OHLCV ingestion, aligned multi-asset panels and train/test splits."""

from __future__ import annotations

import csv
import datetime as dt
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .indicators import INDICATOR_NAMES, IndicatorParams, IndicatorSet, compute_all, max_warmup

logger = logging.getLogger(__name__)

COLUMNS = ("date", "open", "high", "low", "close", "volume")


class DataError(ValueError):
    """Malformed, misaligned or insufficient market data."""


@dataclass(frozen=True)
class OhlcvSeries:
    asset: str
    dates: np.ndarray  # datetime64[D]
    open: np.ndarray
    high: np.ndarray
    low: np.ndarray
    close: np.ndarray
    volume: np.ndarray

    def __post_init__(self):
        n = len(self.dates)
        for name in COLUMNS[1:]:
            if len(getattr(self, name)) != n:
                raise DataError(f"{self.asset}: column {name} has length {len(getattr(self, name))}, expected {n}")
        validate_rows(self)

    def __len__(self) -> int:
        return len(self.dates)


def validate_rows(s: OhlcvSeries) -> None:
    d = s.dates
    if len(d) > 1:
        bad = np.nonzero(np.diff(d).astype(int) <= 0)[0]
        if bad.size:
            i = bad[0] + 1
            kind = "duplicate" if d[i] == d[i - 1] else "non-increasing"
            raise DataError(f"{s.asset}: {kind} date {d[i]} after {d[i - 1]}")
    for i in range(len(d)):
        o, h, lo, c = s.open[i], s.high[i], s.low[i], s.close[i]
        if min(o, h, lo, c) <= 0:
            raise DataError(f"{s.asset} {d[i]}: prices must be positive")
        if h < max(o, c) or lo > min(o, c) or h < lo:
            raise DataError(f"{s.asset} {d[i]}: high/low inconsistent (o={o}, h={h}, l={lo}, c={c})")
        if s.volume[i] < 0:
            raise DataError(f"{s.asset} {d[i]}: negative volume")


def load_csv(path, asset: str | None = None) -> OhlcvSeries:
    path = Path(path)
    asset = asset or path.stem
    if not path.exists():
        raise DataError(f"{path}: no such file")
    dates, cols = [], [[] for _ in range(5)]
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip().lower() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        missing = [c for c in COLUMNS if c not in header]
        if missing:
            raise DataError(f"{path}: missing column(s) {', '.join(missing)}")
        idx = [header.index(c) for c in COLUMNS]
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not x.strip() for x in row):
                continue
            try:
                fields = [row[i].strip() for i in idx]
                dates.append(dt.date.fromisoformat(fields[0]))
                for j in range(5):
                    v = float(fields[j + 1])
                    if not np.isfinite(v):
                        raise ValueError(f"non-finite {COLUMNS[j + 1]}")
                    cols[j].append(v)
            except (ValueError, IndexError) as exc:
                raise DataError(f"{path}:{lineno}: malformed row ({exc})") from None
    return OhlcvSeries(asset, np.array(dates, dtype="datetime64[D]"), *(np.array(c) for c in cols))


def write_csv(series: OhlcvSeries, path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(COLUMNS)
        for i in range(len(series)):
            w.writerow([str(series.dates[i])] + [repr(float(getattr(series, c)[i])) for c in COLUMNS[1:]])


def load_dir(data_dir, assets: Sequence[str] | None = None) -> list[OhlcvSeries]:
    data_dir = Path(data_dir)
    if not data_dir.is_dir():
        raise DataError(f"{data_dir}: not a directory")
    if assets:
        paths = [data_dir / f"{a}.csv" for a in assets]
    else:
        paths = sorted(data_dir.glob("*.csv"))
    if not paths:
        raise DataError(f"{data_dir}: no CSV files")
    return [load_csv(p) for p in paths]


def compute_indicators(series: OhlcvSeries, params: IndicatorParams = IndicatorParams()) -> IndicatorSet:
    need = max_warmup(params) + 1
    if len(series) < need:
        raise DataError(f"{series.asset}: {len(series)} rows, indicators need at least {need}")
    values = compute_all(series.high, series.low, series.close, series.volume, params)
    return IndicatorSet(series.dates, values, params)


@dataclass(frozen=True)
class Panel:
    """Aligned (asset, day) arrays; every asset trades on every date."""

    assets: tuple[str, ...]
    dates: np.ndarray
    open: np.ndarray
    high: np.ndarray
    low: np.ndarray
    close: np.ndarray
    volume: np.ndarray

    @property
    def m(self) -> int:
        return len(self.assets)

    def __len__(self) -> int:
        return len(self.dates)

    def index_of(self, date) -> int:
        d = np.datetime64(date, "D")
        i = int(np.searchsorted(self.dates, d))
        if i >= len(self.dates) or self.dates[i] != d:
            raise DataError(f"date {d} not in panel")
        return i

    def index_on_or_after(self, date) -> int:
        i = int(np.searchsorted(self.dates, np.datetime64(date, "D")))
        if i >= len(self.dates):
            raise DataError(f"no trading day on or after {date}")
        return i

    def index_on_or_before(self, date) -> int:
        i = int(np.searchsorted(self.dates, np.datetime64(date, "D"), side="right")) - 1
        if i < 0:
            raise DataError(f"no trading day on or before {date}")
        return i

    def window(self, lo: int, hi: int) -> Panel:
        s = slice(lo, hi)
        return Panel(self.assets, self.dates[s], self.open[:, s], self.high[:, s],
                     self.low[:, s], self.close[:, s], self.volume[:, s])

    def series(self, i: int) -> OhlcvSeries:
        return OhlcvSeries(self.assets[i], self.dates, self.open[i], self.high[i],
                           self.low[i], self.close[i], self.volume[i])

    def indicators(self, params: IndicatorParams = IndicatorParams()) -> np.ndarray:
        """(m, T, 8) indicator cube in ``INDICATOR_NAMES`` order."""
        return np.stack([compute_indicators(self.series(i), params).matrix() for i in range(self.m)])


def build_panel(series: Sequence[OhlcvSeries], start=None, end=None) -> Panel:
    """Align series over [start, end]; any date missing for one asset is an error."""
    if not series:
        raise DataError("empty asset set")
    lo = np.datetime64(start, "D") if start is not None else max(s.dates[0] for s in series)
    hi = np.datetime64(end, "D") if end is not None else min(s.dates[-1] for s in series)
    if hi < lo:
        raise DataError(f"empty date range {lo} .. {hi}")
    cut = [(s, (s.dates >= lo) & (s.dates <= hi)) for s in series]
    union = np.unique(np.concatenate([s.dates[mask] for s, mask in cut]))
    if union.size == 0:
        raise DataError(f"no data between {lo} and {hi}")
    for s, mask in cut:
        if s.dates[0] > lo or s.dates[-1] < hi:
            raise DataError(f"{s.asset}: data covers {s.dates[0]}..{s.dates[-1]}, needed {lo}..{hi}")
        have = s.dates[mask]
        if len(have) != len(union):
            gap = np.setdiff1d(union, have)
            raise DataError(f"{s.asset}: missing date {gap[0]}")
    arrs = {c: np.stack([getattr(s, c)[m] for s, m in cut]) for c in COLUMNS[1:]}
    return Panel(tuple(s.asset for s in series), union, **arrs)


PRESET_SPLITS = {
    1: (("2002-01-02", "2009-04-16"), ("2010-03-15", "2010-07-21")),
    2: (("2002-01-02", "2012-12-06"), ("2013-11-04", "2014-03-14")),
    3: (("2002-01-02", "2016-08-01"), ("2017-06-28", "2017-11-02")),
    4: (("2002-01-02", "2018-10-19"), ("2019-06-09", "2019-10-16")),
    5: (("2002-01-02", "2019-06-23"), ("2019-11-12", "2020-03-24")),
}


@dataclass(frozen=True)
class DatasetSplit:
    train_start: np.datetime64
    train_end: np.datetime64
    test_start: np.datetime64
    test_end: np.datetime64

    def __post_init__(self):
        if self.train_end < self.train_start or self.test_end < self.test_start:
            raise DataError("split ranges must have start <= end")
        if not self.train_end < self.test_start:
            raise DataError(
                f"test start {self.test_start} must follow train end {self.train_end} (leakage)"
            )

    @classmethod
    def from_dates(cls, train_start, train_end, test_start, test_end) -> DatasetSplit:
        return cls(*(np.datetime64(d, "D") for d in (train_start, train_end, test_start, test_end)))

    @classmethod
    def preset(cls, test_id: int) -> DatasetSplit:
        if test_id not in PRESET_SPLITS:
            raise DataError(f"unknown split id {test_id}; expected one of {sorted(PRESET_SPLITS)}")
        (a, b), (c, d) = PRESET_SPLITS[test_id]
        return cls.from_dates(a, b, c, d)


def make_split(series: Sequence[OhlcvSeries], split) -> tuple[DatasetSplit, Panel, Panel]:
    """Resolve ``split`` (Table-3 id or DatasetSplit) and build aligned panels.

    Returns ``(split, train_panel, test_panel)``; both panels must be complete.
    """
    if not series:
        raise DataError("empty asset set")
    if not isinstance(split, DatasetSplit):
        split = DatasetSplit.preset(int(split))
    train = build_panel(series, split.train_start, split.train_end)
    test = build_panel(series, split.test_start, split.test_end)
    return split, train, test


def coverage_report(series: Sequence[OhlcvSeries], params: IndicatorParams = IndicatorParams()) -> list[dict]:
    w = max_warmup(params)
    return [
        {
            "asset": s.asset,
            "rows": len(s),
            "first": str(s.dates[0]) if len(s) else "",
            "last": str(s.dates[-1]) if len(s) else "",
            "warmup_rows": w,
            "usable_from": str(s.dates[w]) if len(s) > w else "",
        }
        for s in series
    ]


__all__ = [
    "COLUMNS", "DataError", "OhlcvSeries", "load_csv", "write_csv", "load_dir",
    "compute_indicators", "Panel", "build_panel", "DatasetSplit", "make_split", "PRESET_SPLITS",
    "INDICATOR_NAMES", "IndicatorParams", "IndicatorSet", "coverage_report",
]
