"""Stratified diagnostics: price-deviation buckets, Welch tests, winsorization.

Bucket membership is left-open/right-closed except the first bucket, which is
closed above at the first edge (the "no appreciation" bucket). Confidence
intervals are +/-1.96 standard errors. The Student t CDF is evaluated through
the regularized incomplete beta function.
"""
from __future__ import annotations

import csv
import logging
from bisect import bisect_right
from dataclasses import dataclass
from datetime import date

import numpy as np
from scipy.special import betainc

from .errors import StatTestError, ValidationError
from .eventstudy import EventOutcome, LabelConfig, label_events
from .features import price_deviation
from .marketdata import MarketData, parse_iso_date

log = logging.getLogger(__name__)

DEFAULT_BUCKET_EDGES = [0.0, 0.03, 0.05, 0.10]
CI_Z = 1.96
WINSOR_LO = 0.01
WINSOR_HI = 0.99


@dataclass(frozen=True)
class BucketSpec:
    edges: tuple[float, ...] = tuple(DEFAULT_BUCKET_EDGES)

    def __post_init__(self):
        if len(self.edges) < 1:
            raise ValidationError("bucket spec needs at least one edge")
        if any(a >= b for a, b in zip(self.edges, self.edges[1:])):
            raise ValidationError("bucket edges must be strictly increasing")

    @property
    def labels(self) -> list[str]:
        def pct(x: float) -> str:
            return f"{x * 100:g}%"

        out = [f"<= {pct(self.edges[0])}"]
        for a, b in zip(self.edges, self.edges[1:]):
            out.append(f"{pct(a)} - {pct(b)}")
        out.append(f"> {pct(self.edges[-1])}")
        return out

    def assign(self, value: float) -> int:
        """Bucket index: i such that edges[i-1] < value <= edges[i] (ends open)."""
        return int(np.searchsorted(self.edges, value, side="left"))


@dataclass
class BucketStats:
    bucket: str
    n: int
    n_tickers: int
    mean_car: float | None
    ci95_half_width: float | None
    prob_outperform: float | None
    median_car: float | None
    winsorized_mean_car: float | None


def winsorize(values, lower_q: float = WINSOR_LO, upper_q: float = WINSOR_HI) -> np.ndarray:
    """Clip values at interpolated empirical quantiles."""
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        raise ValidationError("cannot winsorize an empty sample")
    if not (0.0 <= lower_q < upper_q <= 1.0):
        raise ValidationError("winsorize needs 0 <= lower_q < upper_q <= 1")
    lo = np.quantile(values, lower_q)
    hi = np.quantile(values, upper_q)
    return np.clip(values, lo, hi)


def student_t_cdf(t: float, dof: float) -> float:
    """P(T <= t) for Student t via the regularized incomplete beta function."""
    if dof <= 0:
        raise ValidationError("degrees of freedom must be positive")
    if not np.isfinite(t):
        return 0.0 if t < 0 else 1.0
    x = dof / (dof + t * t)
    tail = 0.5 * float(betainc(dof / 2.0, 0.5, x))
    return 1.0 - tail if t >= 0 else tail


def welch_t(sample_a, sample_b) -> tuple[float, float, float]:
    """Welch unequal-variance t test: (t_stat, two-sided p, Satterthwaite dof)."""
    a = np.asarray(sample_a, dtype=float)
    b = np.asarray(sample_b, dtype=float)
    if a.size < 2 or b.size < 2:
        raise StatTestError("Welch t needs at least two observations per sample")
    va = float(np.var(a, ddof=1))
    vb = float(np.var(b, ddof=1))
    if va == 0.0 and vb == 0.0:
        raise StatTestError("Welch t undefined: both samples have zero variance")
    sa, sb = va / a.size, vb / b.size
    t_stat = (float(a.mean()) - float(b.mean())) / np.sqrt(sa + sb)
    dof = (sa + sb) ** 2 / (sa**2 / (a.size - 1) + sb**2 / (b.size - 1))
    p = 2.0 * student_t_cdf(-abs(t_stat), dof)
    return float(t_stat), float(p), float(dof)


def bucketize(
    price_devs,
    cars,
    labels,
    issuer_ids: list[str],
    spec: BucketSpec = BucketSpec(),
) -> list[BucketStats]:
    """Per-bucket outcome statistics over events with finite deviation and CAR."""
    price_devs = np.asarray(price_devs, dtype=float)
    cars = np.asarray(cars, dtype=float)
    labels = np.asarray(labels, dtype=float)
    if not (np.isfinite(price_devs).all() and np.isfinite(cars).all()):
        raise ValidationError("bucketize requires finite price deviations and CARs")
    which = np.searchsorted(spec.edges, price_devs, side="left")
    out = []
    for b, name in enumerate(spec.labels):
        mask = which == b
        n = int(mask.sum())
        if n == 0:
            out.append(BucketStats(name, 0, 0, None, None, None, None, None))
            continue
        sub = cars[mask]
        ci = float(CI_Z * np.std(sub, ddof=1) / np.sqrt(n)) if n >= 2 else None
        out.append(
            BucketStats(
                bucket=name,
                n=n,
                n_tickers=len({issuer_ids[i] for i in np.flatnonzero(mask)}),
                mean_car=float(sub.mean()),
                ci95_half_width=ci,
                prob_outperform=float(labels[mask].mean()),
                median_car=float(np.median(sub)),
                winsorized_mean_car=float(winsorize(sub).mean()),
            )
        )
    return out


def bucketize_outcomes(
    outcomes: list[EventOutcome],
    market: MarketData,
    spec: BucketSpec = BucketSpec(),
) -> list[BucketStats]:
    devs = [price_deviation(market, o.event) for o in outcomes]
    return bucketize(
        devs,
        [o.car for o in outcomes],
        [o.label for o in outcomes],
        [o.event.issuer_id for o in outcomes],
        spec,
    )


class RegimeSeries:
    """Dated level series (e.g. a volatility index); lookups are as-of."""

    def __init__(self, dates: list[date], values: list[float]):
        order = sorted(range(len(dates)), key=lambda i: dates[i])
        self.dates = [dates[i] for i in order]
        self.values = [values[i] for i in order]

    @classmethod
    def from_csv(cls, path) -> "RegimeSeries":
        dates, values = [], []
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames != ["date", "value"]:
                raise ValidationError(f"regime series header must be date,value, got {reader.fieldnames}")
            for lineno, row in enumerate(reader, start=2):
                dates.append(parse_iso_date(row["date"], f"regime row {lineno}"))
                values.append(float(row["value"]))
        return cls(dates, values)

    def asof(self, d: date) -> float | None:
        i = bisect_right(self.dates, d)
        return self.values[i - 1] if i else None


@dataclass
class SweepReport:
    by_horizon: dict[int, list[BucketStats]]
    extreme_welch: dict[int, tuple[float, float, float] | None]
    regime_split: dict[str, list[BucketStats]] | None
    skipped: dict[int, int]


def robustness_sweep(
    outcomes: list[EventOutcome],
    market: MarketData,
    base_cfg: LabelConfig = LabelConfig(),
    horizons: list[int] = (20, 30, 60),
    regime: RegimeSeries | None = None,
    regime_cutoff: float = 20.0,
    spec: BucketSpec = BucketSpec(),
) -> SweepReport:
    """Re-label at each horizon and re-bucketize; optional regime split at the base horizon.

    The extreme-bucket Welch test compares CARs in the first and last buckets.
    """
    events = [o.event for o in outcomes]
    by_horizon: dict[int, list[BucketStats]] = {}
    welch_by_horizon: dict[int, tuple[float, float, float] | None] = {}
    skipped: dict[int, int] = {}
    regime_split = None

    for h in horizons:
        cfg = LabelConfig(
            horizon=h,
            car_threshold=base_cfg.car_threshold,
            estimation_window=base_cfg.estimation_window,
            min_obs=base_cfg.min_obs,
            compound=base_cfg.compound,
        )
        labeled, skips = label_events(market, events, cfg, strict=False)
        skipped[h] = len(skips)
        devs = np.array([price_deviation(market, o.event) for o in labeled])
        cars = np.array([o.car for o in labeled])
        labs = np.array([o.label for o in labeled], dtype=float)
        issuers = [o.event.issuer_id for o in labeled]
        by_horizon[h] = bucketize(devs, cars, labs, issuers, spec)
        which = np.searchsorted(spec.edges, devs, side="left")
        lo_cars = cars[which == 0]
        hi_cars = cars[which == len(spec.edges)]
        try:
            welch_by_horizon[h] = welch_t(lo_cars, hi_cars)
        except StatTestError:
            welch_by_horizon[h] = None

        if regime is not None and h == base_cfg.horizon:
            levels = np.array(
                [np.nan if (v := regime.asof(o.event.disclosure_date)) is None else v for o in labeled]
            )
            low = ~np.isnan(levels) & (levels <= regime_cutoff)
            high = ~np.isnan(levels) & (levels > regime_cutoff)
            regime_split = {}
            for name, mask in (("low", low), ("high", high)):
                regime_split[name] = bucketize(
                    devs[mask], cars[mask], labs[mask], [issuers[i] for i in np.flatnonzero(mask)], spec
                )
    return SweepReport(
        by_horizon=by_horizon,
        extreme_welch=welch_by_horizon,
        regime_split=regime_split,
        skipped=skipped,
    )


# -- CSV output ------------------------------------------------------------------

TABLE4_HEADER = [
    "price_deviation_bucket",
    "n",
    "n_tickers",
    "mean_car",
    "ci95_half_width",
    "prob_outperform",
    "median_car",
    "winsorized_mean_car",
]


def write_bucket_csv(path, stats: list[BucketStats]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TABLE4_HEADER)
        for s in stats:
            writer.writerow(
                [
                    s.bucket,
                    s.n,
                    s.n_tickers,
                    *("" if v is None else repr(float(v))
                      for v in (s.mean_car, s.ci95_half_width, s.prob_outperform, s.median_car, s.winsorized_mean_car)),
                ]
            )
