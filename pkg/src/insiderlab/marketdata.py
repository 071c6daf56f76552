"""Point-in-time store for daily bars, shares outstanding, and factor returns.

The trading calendar is the union of factor-return dates: factors define the
tradable grid, and ticker-specific missing bars are gaps rather than calendar
holes. Every query takes an explicit date so look-ahead discipline can be
audited from the call site (see the spy wrapper used by the test suite).
"""
from __future__ import annotations

import csv
import json
from bisect import bisect_right
from dataclasses import dataclass
from datetime import date, timedelta
from pathlib import Path

import numpy as np

from .errors import (
    CalendarRangeError,
    DataGapError,
    DuplicateKeyError,
    InsufficientHistoryError,
    ValidationError,
)

BARS_HEADER = ["ticker", "date", "close", "adj_close", "volume", "shares_outstanding"]
FACTORS_HEADER = ["date", "mkt_rf", "smb", "hml", "rf"]

FACTOR_SANITY_BOUND = 0.5  # |daily factor| above this is a data error


def parse_iso_date(text: str, context: str = "") -> date:
    try:
        return date.fromisoformat(text.strip())
    except ValueError as exc:
        raise ValidationError(f"unparseable date {text!r}{' in ' + context if context else ''}") from exc


class TradingCalendar:
    """Ordered trading dates with total offset arithmetic inside the range."""

    def __init__(self, dates):
        self.dates: list[date] = list(dates)
        if not self.dates:
            raise ValidationError("calendar must contain at least one date")
        for a, b in zip(self.dates, self.dates[1:]):
            if a >= b:
                raise ValidationError(f"calendar dates not strictly increasing at {a} -> {b}")
        self._index = {d: i for i, d in enumerate(self.dates)}

    def __len__(self) -> int:
        return len(self.dates)

    def __contains__(self, d: date) -> bool:
        return d in self._index

    def index(self, d: date) -> int:
        try:
            return self._index[d]
        except KeyError:
            raise CalendarRangeError(f"{d} is not a trading date") from None

    def shift(self, d: date, k: int) -> date:
        j = self.index(d) + k
        if j < 0 or j >= len(self.dates):
            raise CalendarRangeError(f"shift({d}, {k}) is outside the calendar range")
        return self.dates[j]

    def asof(self, d: date) -> date:
        """Latest trading date <= d."""
        i = bisect_right(self.dates, d)
        if i == 0:
            raise CalendarRangeError(f"no trading date at or before {d}")
        return self.dates[i - 1]

    def window_ending(self, end: date, n: int) -> list[date]:
        """The n trading dates ending at `end` inclusive."""
        j = self.index(end)
        if j - n + 1 < 0:
            raise CalendarRangeError(f"fewer than {n} trading dates end at {end}")
        return self.dates[j - n + 1 : j + 1]


class _TickerSeries:
    __slots__ = ("dates", "dates64", "close", "adj_close", "volume", "shares_outstanding", "_index")

    def __init__(self, dates, close, adj_close, volume, shares_outstanding):
        self.dates: list[date] = dates
        self.dates64 = np.array(dates, dtype="datetime64[D]")
        self.close = np.asarray(close, dtype=float)
        self.adj_close = np.asarray(adj_close, dtype=float)
        self.volume = np.asarray(volume, dtype=float)
        self.shares_outstanding = np.asarray(shares_outstanding, dtype=float)
        self._index = {d: i for i, d in enumerate(dates)}

    def loc(self, d: date) -> int | None:
        return self._index.get(d)


class BarTable:
    """Per-ticker daily bars, sorted by date, unique (ticker, date)."""

    def __init__(self, series: dict[str, _TickerSeries], row_count: int):
        self.series = series
        self.row_count = row_count

    @property
    def tickers(self) -> list[str]:
        return sorted(self.series)


def load_bars(path) -> BarTable:
    """Load a bars CSV (`ticker,date,close,adj_close,volume,shares_outstanding`)."""
    rows: dict[str, list[tuple]] = {}
    seen: set[tuple[str, date]] = set()
    count = 0
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != BARS_HEADER:
            raise ValidationError(f"bars header must be {','.join(BARS_HEADER)}, got {header}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 6:
                raise ValidationError(f"bars row {lineno}: expected 6 fields, got {len(row)}")
            ticker = row[0].strip()
            d = parse_iso_date(row[1], f"bars row {lineno}")
            try:
                close, adj, vol, shares = float(row[2]), float(row[3]), float(row[4]), float(row[5])
            except ValueError as exc:
                raise ValidationError(f"bars row {lineno}: non-numeric field") from exc
            if close <= 0 or adj <= 0:
                raise ValidationError(f"bars row {lineno}: non-positive price for {ticker} on {d}")
            if vol < 0:
                raise ValidationError(f"bars row {lineno}: negative volume for {ticker} on {d}")
            if shares <= 0:
                raise ValidationError(f"bars row {lineno}: non-positive shares outstanding for {ticker} on {d}")
            key = (ticker, d)
            if key in seen:
                raise DuplicateKeyError(f"bars row {lineno}: duplicate bar for {ticker} on {d}")
            seen.add(key)
            rows.setdefault(ticker, []).append((d, close, adj, vol, shares))
            count += 1
    series = {}
    for ticker, recs in rows.items():
        recs.sort(key=lambda r: r[0])
        dates = [r[0] for r in recs]
        series[ticker] = _TickerSeries(
            dates,
            [r[1] for r in recs],
            [r[2] for r in recs],
            [r[3] for r in recs],
            [r[4] for r in recs],
        )
    return BarTable(series, count)


@dataclass
class FactorTable:
    dates: list[date]
    mkt_rf: np.ndarray
    smb: np.ndarray
    hml: np.ndarray
    rf: np.ndarray

    @property
    def row_count(self) -> int:
        return len(self.dates)


def load_factors(path, percent: bool = False) -> FactorTable:
    """Load a factors CSV (`date,mkt_rf,smb,hml,rf`), daily fractions.

    Percent-formatted files must be declared with percent=True; values are
    never rescaled by guessing.
    """
    recs = []
    seen = set()
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != FACTORS_HEADER:
            raise ValidationError(f"factors header must be {','.join(FACTORS_HEADER)}, got {header}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 5:
                raise ValidationError(f"factors row {lineno}: expected 5 fields, got {len(row)}")
            d = parse_iso_date(row[0], f"factors row {lineno}")
            if d in seen:
                raise DuplicateKeyError(f"factors row {lineno}: duplicate date {d}")
            seen.add(d)
            try:
                vals = [float(v) for v in row[1:]]
            except ValueError as exc:
                raise ValidationError(f"factors row {lineno}: non-numeric field") from exc
            if percent:
                vals = [v / 100.0 for v in vals]
            if any(abs(v) >= FACTOR_SANITY_BOUND for v in vals[:3]):
                raise ValidationError(
                    f"factors row {lineno}: |factor| >= {FACTOR_SANITY_BOUND} on {d}; "
                    "pass percent=True for percent-formatted files"
                )
            recs.append((d, *vals))
    recs.sort(key=lambda r: r[0])
    return FactorTable(
        dates=[r[0] for r in recs],
        mkt_rf=np.array([r[1] for r in recs]),
        smb=np.array([r[2] for r in recs]),
        hml=np.array([r[3] for r in recs]),
        rf=np.array([r[4] for r in recs]),
    )


class MarketData:
    """Immutable joined view over bars and factors; factors define the calendar."""

    def __init__(self, bars: BarTable, factors: FactorTable):
        self.bars = bars
        self.factors = factors
        self.calendar = TradingCalendar(factors.dates)

    # -- bar queries -------------------------------------------------------

    def has_bar(self, ticker: str, d: date) -> bool:
        s = self.bars.series.get(ticker)
        return s is not None and s.loc(d) is not None

    def _series(self, ticker: str) -> _TickerSeries:
        s = self.bars.series.get(ticker)
        if s is None:
            raise DataGapError(f"no bars for ticker {ticker}", ticker=ticker)
        return s

    def close(self, ticker: str, d: date) -> float:
        s = self._series(ticker)
        i = s.loc(d)
        if i is None:
            raise DataGapError(f"no bar for {ticker} on {d}", ticker=ticker, dates=[d])
        return float(s.close[i])

    def adj_close(self, ticker: str, d: date) -> float:
        s = self._series(ticker)
        i = s.loc(d)
        if i is None:
            raise DataGapError(f"no bar for {ticker} on {d}", ticker=ticker, dates=[d])
        return float(s.adj_close[i])

    def simple_return(self, ticker: str, d: date) -> float:
        """adj_close(d) / adj_close(previous trading date) - 1."""
        try:
            prev = self.calendar.shift(d, -1)
        except CalendarRangeError:
            raise DataGapError(f"no trading date before {d} for a return", ticker=ticker, dates=[d]) from None
        s = self._series(ticker)
        i, j = s.loc(d), s.loc(prev)
        if i is None or j is None:
            missing = [dd for dd, k in ((d, i), (prev, j)) if k is None]
            raise DataGapError(f"missing bar for {ticker} on {missing}", ticker=ticker, dates=missing)
        return float(s.adj_close[i] / s.adj_close[j] - 1.0)

    def asof_market_cap(self, ticker: str, d: date) -> float:
        """close * shares_outstanding at the latest bar dated <= d."""
        s = self._series(ticker)
        i = int(np.searchsorted(s.dates64, np.datetime64(d, "D"), side="right")) - 1
        if i < 0:
            raise DataGapError(f"no bar at or before {d} for {ticker}", ticker=ticker, dates=[d])
        return float(s.close[i] * s.shares_outstanding[i])

    def asof_addv(self, ticker: str, d: date, window_days: int = 30, min_days: int = 10) -> float:
        """Mean close*volume over bars in (d - window_days, d], nonzero-volume days only."""
        s = self._series(ticker)
        lo = np.datetime64(d - timedelta(days=window_days), "D")
        hi = np.datetime64(d, "D")
        a = int(np.searchsorted(s.dates64, lo, side="right"))
        b = int(np.searchsorted(s.dates64, hi, side="right"))
        close = s.close[a:b]
        vol = s.volume[a:b]
        usable = vol > 0
        if int(usable.sum()) < min_days:
            raise InsufficientHistoryError(
                f"{ticker}: {int(usable.sum())} usable volume days in {window_days}d window ending {d}, need {min_days}",
                ticker=ticker,
                dates=[d],
            )
        return float(np.mean(close[usable] * vol[usable]))

    def adj_close_window(self, ticker: str, dates: list[date]) -> tuple[np.ndarray, np.ndarray]:
        """Adjusted closes for the given dates; returns (values, present_mask)."""
        s = self._series(ticker)
        want = np.array(dates, dtype="datetime64[D]")
        pos = np.searchsorted(s.dates64, want)
        pos_clipped = np.minimum(pos, len(s.dates64) - 1)
        present = s.dates64[pos_clipped] == want
        present &= pos < len(s.dates64)
        vals = np.where(present, s.adj_close[pos_clipped], np.nan)
        return vals, present

    def returns_window(self, ticker: str, dates: list[date]) -> tuple[np.ndarray, np.ndarray]:
        """Daily simple returns for the given consecutive trading dates.

        Returns (values, valid_mask); a day is valid when both its bar and the
        previous trading day's bar exist.
        """
        if not dates:
            return np.array([]), np.array([], dtype=bool)
        ext = [self.calendar.shift(dates[0], -1)] + list(dates)
        vals, present = self.adj_close_window(ticker, ext)
        valid = present[1:] & present[:-1]
        with np.errstate(invalid="ignore"):
            rets = vals[1:] / vals[:-1] - 1.0
        rets = np.where(valid, rets, np.nan)
        return rets, valid

    # -- factor queries ----------------------------------------------------

    def factor_rows(self, dates: list[date]) -> np.ndarray:
        """(n, 4) array of [mkt_rf, smb, hml, rf] rows for trading dates."""
        idx = np.array([self.calendar.index(d) for d in dates], dtype=int)
        return np.column_stack(
            [self.factors.mkt_rf[idx], self.factors.smb[idx], self.factors.hml[idx], self.factors.rf[idx]]
        )


# -- cache -----------------------------------------------------------------
# Directory layout: meta.json plus flat .npy arrays concatenated over tickers
# (deterministic on disk, unlike zip-based formats).

def save_cache(store: MarketData, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    tickers = store.bars.tickers
    offsets = [0]
    dates_all, close_all, adj_all, vol_all, shares_all = [], [], [], [], []
    for t in tickers:
        s = store.bars.series[t]
        dates_all.append(s.dates64)
        close_all.append(s.close)
        adj_all.append(s.adj_close)
        vol_all.append(s.volume)
        shares_all.append(s.shares_outstanding)
        offsets.append(offsets[-1] + len(s.dates))
    np.save(out / "bar_dates.npy", np.concatenate(dates_all) if dates_all else np.array([], dtype="datetime64[D]"))
    np.save(out / "bar_close.npy", np.concatenate(close_all) if close_all else np.array([]))
    np.save(out / "bar_adj_close.npy", np.concatenate(adj_all) if adj_all else np.array([]))
    np.save(out / "bar_volume.npy", np.concatenate(vol_all) if vol_all else np.array([]))
    np.save(out / "bar_shares.npy", np.concatenate(shares_all) if shares_all else np.array([]))
    np.save(out / "factor_dates.npy", np.array(store.factors.dates, dtype="datetime64[D]"))
    np.save(out / "factor_values.npy", np.column_stack(
        [store.factors.mkt_rf, store.factors.smb, store.factors.hml, store.factors.rf]
    ))
    meta = {"format": 1, "tickers": tickers, "offsets": offsets, "bar_rows": offsets[-1]}
    (out / "meta.json").write_text(json.dumps(meta, sort_keys=True, indent=1) + "\n")


def load_cache(cache_dir) -> MarketData:
    cache = Path(cache_dir)
    meta = json.loads((cache / "meta.json").read_text())
    if meta.get("format") != 1:
        raise ValidationError(f"unknown cache format in {cache}")
    dates64 = np.load(cache / "bar_dates.npy")
    close = np.load(cache / "bar_close.npy")
    adj = np.load(cache / "bar_adj_close.npy")
    vol = np.load(cache / "bar_volume.npy")
    shares = np.load(cache / "bar_shares.npy")
    series = {}
    offsets = meta["offsets"]
    for i, ticker in enumerate(meta["tickers"]):
        a, b = offsets[i], offsets[i + 1]
        dates = [d.astype("datetime64[D]").astype(object) for d in dates64[a:b]]
        series[ticker] = _TickerSeries(dates, close[a:b], adj[a:b], vol[a:b], shares[a:b])
    fdates = [d.astype("datetime64[D]").astype(object) for d in np.load(cache / "factor_dates.npy")]
    fvals = np.load(cache / "factor_values.npy")
    factors = FactorTable(fdates, fvals[:, 0].copy(), fvals[:, 1].copy(), fvals[:, 2].copy(), fvals[:, 3].copy())
    return MarketData(BarTable(series, meta["bar_rows"]), factors)


def load_market(bars_path=None, factors_path=None, cache_dir=None, percent: bool = False) -> MarketData:
    """Build a store from raw CSVs or an ingested cache directory."""
    if cache_dir is not None:
        return load_cache(cache_dir)
    if bars_path is None or factors_path is None:
        raise ValidationError("either cache_dir or both bars_path and factors_path are required")
    return MarketData(load_bars(bars_path), load_factors(factors_path, percent=percent))
