"""Shared fixtures: in-memory market stores and the look-ahead spy wrapper."""
from __future__ import annotations

from datetime import date, timedelta

import numpy as np
import pytest

from insiderlab.marketdata import BarTable, FactorTable, MarketData, _TickerSeries


def weekdays(start: date, n: int) -> list[date]:
    out = []
    d = start
    while len(out) < n:
        if d.weekday() < 5:
            out.append(d)
        d += timedelta(days=1)
    return out


def make_market(
    dates: list[date],
    tickers: dict[str, dict],
    mkt_rf=None,
    smb=None,
    hml=None,
    rf=None,
) -> MarketData:
    """Build a MarketData store from plain arrays.

    tickers maps name -> dict with optional keys close, adj_close, volume,
    shares_outstanding, dates (all defaulted to sensible constants).
    """
    n = len(dates)
    zeros = np.zeros(n)
    factors = FactorTable(
        dates=list(dates),
        mkt_rf=np.asarray(mkt_rf if mkt_rf is not None else zeros, dtype=float),
        smb=np.asarray(smb if smb is not None else zeros, dtype=float),
        hml=np.asarray(hml if hml is not None else zeros, dtype=float),
        rf=np.asarray(rf if rf is not None else zeros, dtype=float),
    )
    series = {}
    count = 0
    for name, spec in tickers.items():
        tdates = spec.get("dates", dates)
        m = len(tdates)
        close = np.asarray(spec.get("close", np.full(m, 10.0)), dtype=float)
        adj = np.asarray(spec.get("adj_close", close), dtype=float)
        volume = np.asarray(spec.get("volume", np.full(m, 20000.0)), dtype=float)
        shares = np.asarray(spec.get("shares_outstanding", np.full(m, 5e6)), dtype=float)
        series[name] = _TickerSeries(list(tdates), close, adj, volume, shares)
        count += m
    return MarketData(BarTable(series, count), factors)


class SpyStore:
    """Records the date range touched by every market query.

    Set `limit` to flag any read strictly after that date as a violation;
    reads land in `violations` with the offending method and date.
    """

    _METHODS = (
        "has_bar",
        "close",
        "adj_close",
        "simple_return",
        "asof_market_cap",
        "asof_addv",
        "adj_close_window",
        "returns_window",
        "factor_rows",
    )

    def __init__(self, inner: MarketData, limit: date | None = None):
        self._inner = inner
        self.calendar = inner.calendar
        self.bars = inner.bars
        self.factors = inner.factors
        self.limit = limit
        self.reads: list[tuple[str, date]] = []
        self.violations: list[tuple[str, date, date]] = []

    def _record(self, method: str, dates) -> None:
        mx = max(dates)
        self.reads.append((method, mx))
        if self.limit is not None and mx > self.limit:
            self.violations.append((method, mx, self.limit))

    def __getattr__(self, name):
        attr = getattr(self._inner, name)
        if name not in self._METHODS:
            return attr

        def wrapper(*args, **kwargs):
            dates = [a for a in args if isinstance(a, date)]
            dates += [a for arg in args if isinstance(arg, (list, tuple)) for a in arg if isinstance(a, date)]
            if dates:
                self._record(name, dates)
            return attr(*args, **kwargs)

        return wrapper


@pytest.fixture
def flat_market():
    """252+80 weekdays, constant price 10, zero factors; ticker ABC."""
    dates = weekdays(date(2023, 1, 2), 340)
    return make_market(dates, {"ABC": {}}), dates
