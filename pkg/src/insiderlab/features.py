"""Disclosure-time feature construction.

Every feature is computed from data dated at or before the disclosure anchor
(the last trading day at or before the disclosure date). The fixed column
order below is part of the file contract and matches the importance report.
"""
from __future__ import annotations

import csv
import logging
import math
import re
import statistics
from dataclasses import dataclass
from datetime import date, timedelta

import numpy as np

from .errors import (
    CalendarRangeError,
    DataGapError,
    InsufficientHistoryError,
    ValidationError,
)
from .eventstudy import EventOutcome, InsiderEvent
from .marketdata import MarketData

log = logging.getLogger(__name__)

FEATURE_COLUMNS = [
    "pct_from_52w_high",
    "return_mtd",
    "volatility_30d",
    "market_cap_at_filing",
    "pct_from_52w_low",
    "avg_daily_vol_at_filing",
    "is_biotech",
    "price_deviation",
    "transaction_value",
    "is_first_purchase_12m",
    "title_score",
    "value_vs_history_ratio",
]

META_COLUMNS = ["event_key", "disclosure_date", "label"]

RANGE_WINDOW = 252  # trading-day realization of the 52-week window
MIN_RANGE_DAYS = 60
VOL_WINDOW = 30
MIN_VOL_DAYS = 20
FIRST_PURCHASE_LOOKBACK_DAYS = 365

_TITLE_PATTERNS = [
    (5, re.compile(r"\bceo\b|chief\s+executive", re.IGNORECASE)),
    (4, re.compile(r"\bcfo\b|chief\s+financial", re.IGNORECASE)),
    (3, re.compile(r"\bcoo\b|chief\s+operating", re.IGNORECASE)),
    (2, re.compile(r"\bdirector\b", re.IGNORECASE)),
]


def title_score(insider_title_raw: str) -> int:
    """Ordinal title rank; multi-role titles take the highest-precedence match."""
    for score, pattern in _TITLE_PATTERNS:
        if pattern.search(insider_title_raw or ""):
            return score
    return 1


def price_deviation(market: MarketData, event: InsiderEvent) -> float:
    """Unadjusted disclosure-anchor close over transaction price, minus one."""
    anchor = market.calendar.asof(event.disclosure_date)
    if event.price_per_share <= 0:
        raise ValidationError(f"event {event.key}: non-positive transaction price")
    return market.close(event.ticker, anchor) / event.price_per_share - 1.0


def range_position(market: MarketData, ticker: str, d: date) -> tuple[float, float]:
    """(pct_from_52w_high, pct_from_52w_low) over trailing 252 trading days ending at d."""
    cal = market.calendar
    j = cal.index(d)
    dates = cal.dates[max(0, j - RANGE_WINDOW + 1) : j + 1]
    vals, present = market.adj_close_window(ticker, dates)
    n = int(present.sum())
    if n < MIN_RANGE_DAYS:
        raise InsufficientHistoryError(
            f"{ticker}: {n} bars in 52-week window ending {d}, need {MIN_RANGE_DAYS}", ticker=ticker
        )
    if not present[-1]:
        raise DataGapError(f"{ticker}: no bar on {d}", ticker=ticker, dates=[d])
    window = vals[present]
    cur = window[-1]
    return float(cur / window.max() - 1.0), float(cur / window.min() - 1.0)


def trailing_stats(market: MarketData, ticker: str, d: date) -> tuple[float, float]:
    """(month-to-date return, annualized 30-day log-return volatility) at d."""
    cal = market.calendar
    prior_month_last = cal.asof(d.replace(day=1) - timedelta(days=1))
    mtd = market.adj_close(ticker, d) / market.adj_close(ticker, prior_month_last) - 1.0

    j = cal.index(d)
    dates = cal.dates[max(1, j - VOL_WINDOW + 1) : j + 1]  # index 0 has no prior day
    rets, valid = market.returns_window(ticker, dates) if j > 0 else (np.array([]), np.array([], dtype=bool))
    logrets = np.log1p(rets[valid])
    if logrets.size < MIN_VOL_DAYS:
        raise InsufficientHistoryError(
            f"{ticker}: {logrets.size} return days in {VOL_WINDOW}d window ending {d}, need {MIN_VOL_DAYS}",
            ticker=ticker,
        )
    vol = float(np.std(logrets, ddof=1) * math.sqrt(252.0))
    return float(mtd), vol


def insider_history(
    event: InsiderEvent, prior: list[tuple[date, float]]
) -> tuple[int, float]:
    """(is_first_purchase_12m, value_vs_history_ratio) from the insider's prior purchases.

    `prior` holds (transaction_date, transaction_value) for every earlier kept
    purchase by the same insider in the same issuer. The ratio uses the full
    prior history; the first-purchase flag looks back 365 calendar days.
    """
    before = [(td, v) for td, v in prior if td < event.transaction_date]
    cutoff = event.transaction_date - timedelta(days=FIRST_PURCHASE_LOOKBACK_DAYS)
    is_first = int(not any(td >= cutoff for td, _ in before))
    if not before:
        return 1, 1.0
    mean_value = statistics.fmean(v for _, v in before)
    ratio = event.transaction_value / mean_value if mean_value > 0 else 1.0
    return is_first, ratio


class SectorMap:
    """issuer_id -> biotech flag; unknown issuers default to 0."""

    def __init__(self, flags: dict[str, int]):
        self.flags = flags

    @classmethod
    def from_csv(cls, path) -> "SectorMap":
        flags = {}
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames != ["issuer_id", "is_biotech"]:
                raise ValidationError(f"sector map header must be issuer_id,is_biotech, got {reader.fieldnames}")
            for row in reader:
                flags[row["issuer_id"].strip()] = int(row["is_biotech"])
        return cls(flags)

    def is_biotech(self, issuer_id: str) -> int:
        return int(self.flags.get(issuer_id, 0))


@dataclass
class FeatureMatrix:
    X: np.ndarray  # (n, 12), columns in FEATURE_COLUMNS order
    y: np.ndarray  # (n,)
    event_keys: list[str]
    disclosure_dates: list[date]

    @property
    def n(self) -> int:
        return len(self.event_keys)

    def column(self, name: str) -> np.ndarray:
        return self.X[:, FEATURE_COLUMNS.index(name)]


def event_key_str(event: InsiderEvent) -> str:
    return "|".join(event.key)


def compute_features(
    market: MarketData,
    event: InsiderEvent,
    sector_map: SectorMap,
    prior: list[tuple[date, float]],
) -> dict[str, float]:
    """All twelve features for one event, reading nothing after the anchor."""
    anchor = market.calendar.asof(event.disclosure_date)
    pct_high, pct_low = range_position(market, event.ticker, anchor)
    mtd, vol = trailing_stats(market, event.ticker, anchor)
    cap = market.asof_market_cap(event.ticker, anchor)
    addv = market.asof_addv(event.ticker, anchor)
    is_first, ratio = insider_history(event, prior)
    return {
        "pct_from_52w_high": pct_high,
        "return_mtd": mtd,
        "volatility_30d": vol,
        "market_cap_at_filing": cap,
        "pct_from_52w_low": pct_low,
        "avg_daily_vol_at_filing": addv,
        "is_biotech": float(sector_map.is_biotech(event.issuer_id)),
        "price_deviation": price_deviation(market, event),
        "transaction_value": event.transaction_value,
        "is_first_purchase_12m": float(is_first),
        "title_score": float(title_score(event.insider_title_raw)),
        "value_vs_history_ratio": ratio,
    }


def build_matrix(
    outcomes: list[EventOutcome],
    market: MarketData,
    sector_map: SectorMap,
    strict: bool = False,
) -> tuple[FeatureMatrix, list[tuple[str, str]]]:
    """Assemble the feature matrix and label vector, rows ordered by (disclosure_date, key).

    Returns (matrix, skipped) where skipped holds (event_key, reason) for
    events whose features were not computable in lenient mode.
    """
    ordered = sorted(outcomes, key=lambda o: (o.event.disclosure_date, o.event.key))
    history: dict[tuple[str, str], list[tuple[date, float]]] = {}
    for o in sorted(outcomes, key=lambda o: (o.event.transaction_date, o.event.key)):
        history.setdefault((o.event.issuer_id, o.event.insider_id), []).append(
            (o.event.transaction_date, o.event.transaction_value)
        )

    rows, labels, keys, dates = [], [], [], []
    skipped: list[tuple[str, str]] = []
    for o in ordered:
        e = o.event
        prior = history.get((e.issuer_id, e.insider_id), [])
        try:
            feats = compute_features(market, e, sector_map, prior)
        except (DataGapError, CalendarRangeError, ValidationError) as exc:
            if strict:
                raise
            skipped.append((event_key_str(e), str(exc)))
            continue
        rows.append([feats[c] for c in FEATURE_COLUMNS])
        labels.append(o.label)
        keys.append(event_key_str(e))
        dates.append(e.disclosure_date)
    X = np.array(rows, dtype=float) if rows else np.empty((0, len(FEATURE_COLUMNS)))
    matrix = FeatureMatrix(X=X, y=np.array(labels, dtype=float), event_keys=keys, disclosure_dates=dates)
    if skipped:
        log.info("build_matrix: %d rows, %d skipped", matrix.n, len(skipped))
    return matrix, skipped


# -- CSV I/O -------------------------------------------------------------------


def write_features_csv(path, matrix: FeatureMatrix) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(META_COLUMNS + FEATURE_COLUMNS)
        for i in range(matrix.n):
            row = [matrix.event_keys[i], matrix.disclosure_dates[i].isoformat(), int(matrix.y[i])]
            row += [repr(float(v)) for v in matrix.X[i]]
            writer.writerow(row)


def read_features_csv(path) -> FeatureMatrix:
    keys, dates, labels, rows = [], [], [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != META_COLUMNS + FEATURE_COLUMNS:
            raise ValidationError(f"unexpected features header in {path}")
        for row in reader:
            if not row:
                continue
            keys.append(row[0])
            dates.append(date.fromisoformat(row[1]))
            labels.append(float(row[2]))
            rows.append([float(v) for v in row[3:]])
    X = np.array(rows, dtype=float) if rows else np.empty((0, len(FEATURE_COLUMNS)))
    return FeatureMatrix(X=X, y=np.array(labels, dtype=float), event_keys=keys, disclosure_dates=dates)
