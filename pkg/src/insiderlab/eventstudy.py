"""Factor-model event study: per-event loadings, abnormal returns, labels.

Estimation and outcome windows never overlap: loadings are fitted on the
trading days ending at the disclosure anchor (the last trading day at or
before the disclosure date), and abnormal returns start on the next trading
day. Cumulative abnormal return is the arithmetic sum of daily abnormal
returns; a compound alternative is available for sensitivity runs.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from datetime import date

import numpy as np

from .errors import (
    CalendarRangeError,
    DataGapError,
    InsufficientHistoryError,
    SingularDesignError,
    ValidationError,
)
from .filings import InsiderTransaction
from .marketdata import MarketData

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class LabelConfig:
    horizon: int = 30
    car_threshold: float = 0.10
    estimation_window: int = 252
    min_obs: int = 126
    compound: bool = False

    def __post_init__(self):
        if self.horizon < 1:
            raise ValidationError("horizon must be >= 1")
        if self.car_threshold <= 0:
            raise ValidationError("car_threshold must be positive")
        if self.min_obs > self.estimation_window:
            raise ValidationError("min_obs cannot exceed estimation_window")


@dataclass(frozen=True)
class FactorLoadings:
    alpha: float
    beta_mkt: float
    beta_smb: float
    beta_hml: float
    n_obs: int
    estimation_end: date


@dataclass(frozen=True)
class InsiderEvent:
    """One disclosure event: same-day purchases by one insider in one issuer."""

    issuer_id: str
    insider_id: str
    disclosure_date: date
    ticker: str
    cusip: str
    accession_id: str
    insider_title_raw: str
    transaction_date: date
    shares: float
    price_per_share: float
    transaction_value: float

    @property
    def key(self) -> tuple[str, str, str]:
        return (self.issuer_id, self.insider_id, self.disclosure_date.isoformat())


@dataclass
class EventOutcome:
    event: InsiderEvent
    loadings: FactorLoadings
    ar_series: np.ndarray
    car: float
    label: int
    horizon: int
    car_compound: float = field(default=float("nan"))


def aggregate_events(txs: list[InsiderTransaction]) -> list[InsiderEvent]:
    """Collapse purchase records to one event per (issuer, insider, disclosure date).

    Transaction value is summed and the per-share price is value-weighted
    (total value over total shares). The event's transaction date is the
    earliest constituent date so trailing-history features stay strictly
    point-in-time.
    """
    groups: dict[tuple, list[InsiderTransaction]] = {}
    for tx in txs:
        groups.setdefault((tx.issuer_id, tx.insider_id, tx.disclosure_date), []).append(tx)
    events = []
    for (issuer_id, insider_id, disclosure), members in groups.items():
        members = sorted(members, key=lambda t: (t.transaction_date, t.accession_id))
        total_shares = sum(t.shares for t in members)
        total_value = sum(t.transaction_value for t in members)
        if total_shares > 0:
            vwap = total_value / total_shares
        else:
            vwap = sum(t.price_per_share for t in members) / len(members)
        first = members[0]
        events.append(
            InsiderEvent(
                issuer_id=issuer_id,
                insider_id=insider_id,
                disclosure_date=disclosure,
                ticker=first.ticker,
                cusip=first.cusip,
                accession_id=first.accession_id,
                insider_title_raw=first.insider_title_raw,
                transaction_date=first.transaction_date,
                shares=total_shares,
                price_per_share=vwap,
                transaction_value=total_value,
            )
        )
    events.sort(key=lambda e: e.key)
    return events


def fit_ff3(
    market: MarketData,
    ticker: str,
    estimation_end: date,
    window: int = 252,
    min_obs: int = 126,
) -> FactorLoadings:
    """OLS of excess stock returns on [1, MKT-RF, SMB, HML] over the trailing window."""
    cal = market.calendar
    end_idx = cal.index(estimation_end)
    n_take = min(window, end_idx)  # day 0 of the calendar has no prior day for a return
    if n_take < min_obs:
        raise InsufficientHistoryError(
            f"{ticker}: only {n_take} trading days end at {estimation_end}, need {min_obs}",
            ticker=ticker,
        )
    dates = cal.dates[end_idx - n_take + 1 : end_idx + 1]
    rets, valid = market.returns_window(ticker, dates)
    n_obs = int(valid.sum())
    if n_obs < min_obs:
        raise InsufficientHistoryError(
            f"{ticker}: {n_obs} usable return days in estimation window ending {estimation_end}, need {min_obs}",
            ticker=ticker,
        )
    fac = market.factor_rows(dates)
    y = rets[valid] - fac[valid, 3]
    cols = [fac[valid, 0], fac[valid, 1], fac[valid, 2]]
    # an identically-zero factor contributes nothing: its loading is pinned to 0
    # instead of poisoning the rank check (intercept-only designs stay solvable)
    active = [c for c in cols if np.any(c != 0.0)]
    X = np.column_stack([np.ones(n_obs)] + active)
    coef, _, rank, _ = np.linalg.lstsq(X, y, rcond=None)
    if rank < X.shape[1] or not np.all(np.isfinite(coef)):
        raise SingularDesignError(f"rank-deficient factor design for {ticker} ending {estimation_end}")
    betas = []
    j = 1
    for c in cols:
        if np.any(c != 0.0):
            betas.append(float(coef[j]))
            j += 1
        else:
            betas.append(0.0)
    return FactorLoadings(
        alpha=float(coef[0]),
        beta_mkt=betas[0],
        beta_smb=betas[1],
        beta_hml=betas[2],
        n_obs=n_obs,
        estimation_end=estimation_end,
    )


def abnormal_returns(
    market: MarketData,
    ticker: str,
    loadings: FactorLoadings,
    window_start: date,
    horizon: int,
) -> np.ndarray:
    """Out-of-sample daily abnormal returns over `horizon` trading days."""
    cal = market.calendar
    dates = [cal.shift(window_start, i) for i in range(horizon)]
    rets, valid = market.returns_window(ticker, dates)
    if not valid.all():
        missing = [d for d, ok in zip(dates, valid) if not ok]
        raise DataGapError(
            f"{ticker}: missing bars in outcome window: {', '.join(str(d) for d in missing)}",
            ticker=ticker,
            dates=missing,
        )
    fac = market.factor_rows(dates)
    return (
        rets
        - loadings.alpha
        - loadings.beta_mkt * fac[:, 0]
        - loadings.beta_smb * fac[:, 1]
        - loadings.beta_hml * fac[:, 2]
    )


def label_event(market: MarketData, event: InsiderEvent, cfg: LabelConfig) -> EventOutcome:
    """Estimate loadings, compute the post-disclosure AR window, and label."""
    try:
        anchor = market.calendar.asof(event.disclosure_date)
        loadings = fit_ff3(
            market, event.ticker, anchor, window=cfg.estimation_window, min_obs=cfg.min_obs
        )
        window_start = market.calendar.shift(anchor, 1)
        ar = abnormal_returns(market, event.ticker, loadings, window_start, cfg.horizon)
    except (DataGapError, CalendarRangeError, SingularDesignError) as exc:
        exc.args = (f"event {event.key}: {exc.args[0]}",) + exc.args[1:]
        raise
    car_sum = float(np.sum(ar))
    car_compound = float(np.prod(1.0 + ar) - 1.0)
    car = car_compound if cfg.compound else car_sum
    return EventOutcome(
        event=event,
        loadings=loadings,
        ar_series=ar,
        car=car,
        label=int(car > cfg.car_threshold),
        horizon=cfg.horizon,
        car_compound=car_compound,
    )


def label_events(
    market: MarketData,
    events: list[InsiderEvent],
    cfg: LabelConfig,
    strict: bool = False,
) -> tuple[list[EventOutcome], list[tuple[InsiderEvent, str]]]:
    """Label every event; in lenient mode unlabelable events become skips."""
    outcomes, skipped = [], []
    for event in events:
        try:
            outcomes.append(label_event(market, event, cfg))
        except (DataGapError, CalendarRangeError, SingularDesignError) as exc:
            if strict:
                raise
            skipped.append((event, str(exc)))
    if skipped:
        log.info("label_events: %d labeled, %d skipped", len(outcomes), len(skipped))
    return outcomes, skipped


# -- JSONL I/O ---------------------------------------------------------------


def outcome_to_dict(o: EventOutcome, include_ar: bool = False) -> dict:
    e = o.event
    rec = {
        "issuer_id": e.issuer_id,
        "insider_id": e.insider_id,
        "disclosure_date": e.disclosure_date.isoformat(),
        "ticker": e.ticker,
        "cusip": e.cusip,
        "accession_id": e.accession_id,
        "insider_title_raw": e.insider_title_raw,
        "transaction_date": e.transaction_date.isoformat(),
        "shares": e.shares,
        "price_per_share": e.price_per_share,
        "transaction_value": e.transaction_value,
        "loadings": {
            "alpha": o.loadings.alpha,
            "beta_mkt": o.loadings.beta_mkt,
            "beta_smb": o.loadings.beta_smb,
            "beta_hml": o.loadings.beta_hml,
            "n_obs": o.loadings.n_obs,
            "estimation_end": o.loadings.estimation_end.isoformat(),
        },
        "car": o.car,
        "label": o.label,
        "horizon": o.horizon,
    }
    if include_ar:
        rec["ar_series"] = [float(x) for x in o.ar_series]
    return rec


def outcome_from_dict(rec: dict) -> EventOutcome:
    event = InsiderEvent(
        issuer_id=rec["issuer_id"],
        insider_id=rec["insider_id"],
        disclosure_date=date.fromisoformat(rec["disclosure_date"]),
        ticker=rec["ticker"],
        cusip=rec["cusip"],
        accession_id=rec["accession_id"],
        insider_title_raw=rec["insider_title_raw"],
        transaction_date=date.fromisoformat(rec["transaction_date"]),
        shares=float(rec["shares"]),
        price_per_share=float(rec["price_per_share"]),
        transaction_value=float(rec["transaction_value"]),
    )
    ld = rec["loadings"]
    loadings = FactorLoadings(
        alpha=ld["alpha"],
        beta_mkt=ld["beta_mkt"],
        beta_smb=ld["beta_smb"],
        beta_hml=ld["beta_hml"],
        n_obs=ld["n_obs"],
        estimation_end=date.fromisoformat(ld["estimation_end"]),
    )
    ar = np.array(rec.get("ar_series", []), dtype=float)
    return EventOutcome(
        event=event,
        loadings=loadings,
        ar_series=ar,
        car=float(rec["car"]),
        label=int(rec["label"]),
        horizon=int(rec["horizon"]),
    )


def write_outcomes_jsonl(path, outcomes: list[EventOutcome], include_ar: bool = False) -> None:
    with open(path, "w") as fh:
        for o in outcomes:
            fh.write(json.dumps(outcome_to_dict(o, include_ar=include_ar), sort_keys=True) + "\n")


def read_outcomes_jsonl(path) -> list[EventOutcome]:
    out = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(outcome_from_dict(json.loads(line)))
    return out
