"""Synthetic corpus generator with planted, bookkept effects.

Emits the full input layout the pipeline consumes (Form 4 XML fixtures, bars
and factor CSVs, identifier and sector maps) plus a ground-truth JSON so
downstream estimates can be checked against what was planted.

Planting works through actual price paths, never by stamping labels:

* Price deviation between trade and disclosure is controlled exactly by
  setting the reported transaction price relative to the disclosure close;
  deviations are drawn from a bucket mixture.
* Each event injects drift into the stock's post-disclosure log increments.
  The 30-day drift total realizes the bucket's target mean CAR plus a
  52-week-high channel: the logistic-scale signal
  w_52w_high * z(pct_from_52w_high) + noise is mapped through the normal
  quantile into a drift adjustment that is centered across events, so
  per-bucket expected CAR stays exactly on target while the label probability
  follows the logistic model. Without bucket targets the drift is set so that
  P(CAR > threshold) equals the logistic-model probability exactly (Gaussian
  CAR approximation with an estimation-noise correction), so a null
  configuration realizes the base rate by construction.
* Drift fully reverses over days 31-60, so later estimation windows see
  net-zero contamination and market caps stay inside the universe band.

Generation is two-phase: paths and event variables are drawn first (one PCG64
root seed, per-issuer spawned streams), channel z-scores are standardized
empirically over the drawn events, then drift is injected and files are
written. Identical seeds give identical corpora across platforms.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from datetime import date, timedelta
from pathlib import Path

import numpy as np
from scipy.special import ndtr, ndtri

from .errors import ConfigurationError
from .filings import InsiderTransaction, write_form4

log = logging.getLogger(__name__)

LABEL_THRESHOLD = 0.10
HORIZON = 30
ESTIMATION_WINDOW = 252
REVERSAL_SPAN = 60  # drift is fully unwound by this many trading days

RF_DAILY = 1e-5
MKT_SD = 0.010
SMB_SD = 0.006
HML_SD = 0.006
FACTOR_REVERSION = 0.01  # factor levels are OU so the market never trends away
IDIO_REVERSION = 0.004  # idio log-price is OU too: caps stay in the universe band

_TITLE_POOL = [
    "Chief Executive Officer",
    "Chief Financial Officer",
    "Chief Operating Officer and President",
    "Director",
    "Director",
    "VP of Sales",
    "Controller",
    "10% Owner",
]

# Daily drift weights: the first block realizes the 30-day target, the tail
# unwinds it. "decaying" front-loads the effect so bucket spreads shrink
# monotonically from the 20-day to the 60-day table.
_DRIFT_PROFILES = {
    "flat": np.concatenate([np.full(30, 1.0 / 30.0), np.full(30, -1.0 / 30.0)]),
    "decaying": np.concatenate([np.full(20, 1.3 / 20.0), np.full(10, -0.3 / 10.0), np.full(30, -1.0 / 30.0)]),
}


@dataclass(frozen=True)
class PlantedEffects:
    w_52w_high: float = 1.15
    w_price_dev: float = 0.4
    base_rate: float = 0.27
    noise_sd: float = 0.30

    def to_dict(self) -> dict:
        return {
            "w_52w_high": self.w_52w_high,
            "w_price_dev": self.w_price_dev,
            "base_rate": self.base_rate,
            "noise_sd": self.noise_sd,
        }


# Bucket mixture shares follow the reported deviation distribution.
DEFAULT_BUCKET_SHARES = (0.632, 0.107, 0.039, 0.046, 0.176)
DEFAULT_BUCKET_EFFECT = (0.023, 0.047, 0.044, 0.048, 0.063)
DEV_RANGES = ((-0.22, 0.0), (0.0005, 0.0295), (0.0305, 0.0495), (0.0505, 0.0995), (0.1005, 0.22))

# With bucket targets active, the 52-week-high channel's gain varies with the
# event's price deviation (momentum confirms the market-state signal) and the
# issuer's volatility (calm names carry the cleaner signal), flipping sign in
# the weak-momentum/high-vol corner. The planted surface therefore carries
# the feature interactions the classifier comparison probes; a model linear
# in the raw features cannot represent them.
CHANNEL_GAIN_BASE = 1.3
CHANNEL_GAIN_DEV_SLOPE = 2.4
CHANNEL_GAIN_VOL_SLOPE = 2.2
CHANNEL_GAIN_CLIP = (-1.2, 3.8)
CHANNEL_GAIN_DEV_SPAN = (-0.22, 0.12)


def _channel_gain(dev: float, sigma: float, vol_lo: float, vol_hi: float) -> float:
    a, b = CHANNEL_GAIN_DEV_SPAN
    t_dev = min(1.0, max(0.0, (dev - a) / (b - a))) - 0.5
    t_vol = 0.5 - min(1.0, max(0.0, (sigma - vol_lo) / (vol_hi - vol_lo)))
    gain = CHANNEL_GAIN_BASE + CHANNEL_GAIN_DEV_SLOPE * t_dev + CHANNEL_GAIN_VOL_SLOPE * t_vol
    return min(CHANNEL_GAIN_CLIP[1], max(CHANNEL_GAIN_CLIP[0], gain))


@dataclass(frozen=True)
class SynthConfig:
    n_issuers: int = 550
    n_events: int = 10000
    seed: int = 42
    start: date = date(2018, 1, 1)
    end: date = date(2024, 12, 31)
    planted: PlantedEffects = PlantedEffects()
    bucket_effect: tuple[float, ...] | None = DEFAULT_BUCKET_EFFECT
    bucket_shares: tuple[float, ...] = DEFAULT_BUCKET_SHARES
    drift_profile: str = "flat"
    daily_vol_lo: float = 0.0085
    daily_vol_hi: float = 0.020
    biotech_share: float = 0.25
    insiders_per_issuer: int = 8
    min_event_spacing: int = 66  # trading days; covers lag + reversal span

    def __post_init__(self):
        if not (0.0 < self.planted.base_rate < 1.0):
            raise ConfigurationError("base_rate must be in (0, 1)")
        if self.n_events < 1:
            raise ConfigurationError("n_events must be >= 1")
        if self.drift_profile not in _DRIFT_PROFILES:
            raise ConfigurationError(f"unknown drift_profile {self.drift_profile!r}")
        if self.bucket_effect is not None and len(self.bucket_effect) != len(self.bucket_shares):
            raise ConfigurationError("bucket_effect and bucket_shares must have equal length")

    def to_dict(self) -> dict:
        return {
            "n_issuers": self.n_issuers,
            "n_events": self.n_events,
            "seed": self.seed,
            "start": self.start.isoformat(),
            "end": self.end.isoformat(),
            "planted": self.planted.to_dict(),
            "bucket_effect": list(self.bucket_effect) if self.bucket_effect is not None else None,
            "bucket_shares": list(self.bucket_shares),
            "drift_profile": self.drift_profile,
            "daily_vol_lo": self.daily_vol_lo,
            "daily_vol_hi": self.daily_vol_hi,
            "biotech_share": self.biotech_share,
            "insiders_per_issuer": self.insiders_per_issuer,
            "min_event_spacing": self.min_event_spacing,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        d = dict(d)
        if "planted" in d:
            d["planted"] = PlantedEffects(**d["planted"])
        for key in ("start", "end"):
            if isinstance(d.get(key), str):
                d[key] = date.fromisoformat(d[key])
        if d.get("bucket_effect") is not None:
            d["bucket_effect"] = tuple(d["bucket_effect"])
        if d.get("bucket_shares") is not None:
            d["bucket_shares"] = tuple(d["bucket_shares"])
        return cls(**d)


def weekday_calendar(start: date, end: date) -> list[date]:
    out = []
    d = start
    while d <= end:
        if d.weekday() < 5:
            out.append(d)
        d += timedelta(days=1)
    return out


def _ou_level(rng: np.random.Generator, n: int, sd: float, reversion: float) -> np.ndarray:
    """Mean-reverting level series started at zero."""
    eps = rng.normal(0.0, sd, size=n)
    eps[0] = 0.0
    level = np.empty(n)
    prev = 0.0
    for t in range(n):
        prev = (1.0 - reversion) * prev + eps[t]
        level[t] = prev
    return level


def _ou_increments(rng: np.random.Generator, n: int, sd: float, reversion: float = FACTOR_REVERSION) -> np.ndarray:
    """Daily increments of a mean-reverting level; keeps cumulative sums bounded."""
    out = np.diff(_ou_level(rng, n, sd, reversion), prepend=0.0)
    out[0] = 0.0
    return out


def _spaced_positions(rng: np.random.Generator, lo: int, hi: int, k: int, gap: int) -> np.ndarray:
    """k sorted positions in [lo, hi] with pairwise spacing >= gap."""
    slack = (hi - lo) - (k - 1) * gap
    if slack < 0:
        raise ConfigurationError("event schedule infeasible: too many events for the date range")
    picks = np.sort(rng.integers(0, slack + 1, size=k))
    return lo + picks + gap * np.arange(k)


def _drift_sd_factor(horizon: int) -> float:
    """Measured-CAR dispersion in units of daily sigma.

    Estimation-window fit errors are compensated per event (see generate), so
    only the outcome window's idiosyncratic noise remains.
    """
    return math.sqrt(float(horizon))


def _sigmoid(x: float) -> float:
    return 1.0 / (1.0 + math.exp(-x))


@dataclass
class GroundTruth:
    config: SynthConfig
    events: list[dict] = field(default_factory=list)
    z_stats: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"config": self.config.to_dict(), "z_stats": self.z_stats, "events": self.events}

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "GroundTruth":
        d = json.loads(Path(path).read_text())
        return cls(config=SynthConfig.from_dict(d["config"]), events=d["events"], z_stats=d.get("z_stats", {}))


@dataclass
class _Issuer:
    index: int
    ticker: str
    perm_id: str
    cik: str
    cusip: str
    is_biotech: int
    sigma: float
    betas: np.ndarray  # [mkt, smb, hml]
    logp0: float
    shares_out: float
    dollar_vol: float
    undrifted: np.ndarray  # log-price path before event drift
    vol_noise: np.ndarray
    events: list[dict]


def _draw_issuer(
    i: int,
    seq: np.random.SeedSequence,
    k: int,
    cfg: SynthConfig,
    factor_part_unit: dict[str, np.ndarray],
    n_days: int,
    first_eligible: int,
    last_eligible: int,
) -> _Issuer:
    rng = np.random.default_rng(seq)
    beta_mkt = rng.uniform(0.4, 1.6)
    beta_smb = rng.uniform(-0.2, 1.0)
    beta_hml = rng.uniform(-0.5, 0.5)
    sigma = rng.uniform(cfg.daily_vol_lo, cfg.daily_vol_hi)
    logp0 = math.log(rng.uniform(4.0, 40.0))
    anchor_cap = rng.uniform(90e6, 150e6)
    is_biotech = int(rng.random() < cfg.biotech_share)
    dollar_vol = rng.uniform(0.5e6, 3.0e6)

    base_path = _ou_level(rng, n_days, sigma, IDIO_REVERSION)
    factor_part = (
        beta_mkt * factor_part_unit["mkt"]
        + beta_smb * factor_part_unit["smb"]
        + beta_hml * factor_part_unit["hml"]
    )
    undrifted = logp0 + base_path + factor_part

    event_idx = _spaced_positions(rng, first_eligible, last_eligible, k, cfg.min_event_spacing)
    lags = rng.integers(1, 6, size=k)
    insiders = rng.integers(0, cfg.insiders_per_issuer, size=k)
    shares_cum = np.cumsum(cfg.bucket_shares) / sum(cfg.bucket_shares)
    u_bucket = rng.random(size=k)
    u_dev = rng.random(size=k)
    noises = rng.normal(0.0, cfg.planted.noise_sd, size=k)
    values = np.clip(np.exp(rng.normal(math.log(27000.0), 0.9, size=k)), 6000.0, 2.0e6)
    vol_noise = np.exp(rng.normal(0.0, 0.3, size=n_days))

    events = []
    for e in range(k):
        ti = int(event_idx[e])
        di = ti + int(lags[e])
        window = undrifted[di - ESTIMATION_WINDOW + 1 : di + 1]
        pct_high = math.exp(undrifted[di] - window.max()) - 1.0
        b = min(int(np.searchsorted(shares_cum, u_bucket[e], side="left")), len(DEV_RANGES) - 1)
        lo, hi = DEV_RANGES[b]
        events.append(
            {
                "ti": ti,
                "di": di,
                "insider": int(insiders[e]),
                "pct_high": pct_high,
                "bucket": b,
                "dev": lo + u_dev[e] * (hi - lo),
                "noise": float(noises[e]),
                "value": float(values[e]),
            }
        )
    return _Issuer(
        index=i,
        ticker=f"SYN{i:04d}",
        perm_id=f"P{i:05d}",
        cik=f"{1000000 + i:010d}",
        cusip=f"{100000000 + i:09d}",
        is_biotech=is_biotech,
        sigma=sigma,
        betas=np.array([beta_mkt, beta_smb, beta_hml]),
        logp0=logp0,
        shares_out=anchor_cap / math.exp(logp0),
        dollar_vol=dollar_vol,
        undrifted=undrifted,
        vol_noise=vol_noise,
        events=events,
    )


def generate(cfg: SynthConfig, out_dir) -> GroundTruth:
    """Write the synthetic corpus into out_dir and return the ground truth."""
    out = Path(out_dir)
    (out / "filings").mkdir(parents=True, exist_ok=True)

    calendar = weekday_calendar(cfg.start, cfg.end)
    n_days = len(calendar)
    first_eligible = ESTIMATION_WINDOW + 15
    last_eligible = n_days - (REVERSAL_SPAN + 8)
    per_issuer = int(np.ceil(cfg.n_events / cfg.n_issuers))
    if first_eligible + (per_issuer - 1) * cfg.min_event_spacing > last_eligible:
        raise ConfigurationError(
            f"infeasible config: {cfg.n_events} events over {cfg.n_issuers} issuers "
            f"need more trading days than {n_days}"
        )

    root_seq = np.random.SeedSequence(cfg.seed)
    factor_rng = np.random.default_rng(root_seq.spawn(1)[0])
    issuer_seqs = root_seq.spawn(cfg.n_issuers)

    mkt = _ou_increments(factor_rng, n_days, MKT_SD)
    smb = _ou_increments(factor_rng, n_days, SMB_SD)
    hml = _ou_increments(factor_rng, n_days, HML_SD)
    rf = np.full(n_days, RF_DAILY)
    factor_part_unit = {"mkt": np.cumsum(mkt), "smb": np.cumsum(smb), "hml": np.cumsum(hml)}

    # Phase 1: draw paths and event variables (no drift yet).
    issuers: list[_Issuer] = []
    remaining = cfg.n_events
    for i in range(cfg.n_issuers):
        if remaining <= 0:
            break
        k = min(per_issuer, remaining)
        remaining -= k
        issuers.append(
            _draw_issuer(i, issuer_seqs[i], k, cfg, factor_part_unit, n_days, first_eligible, last_eligible)
        )

    all_events = [(iss, ev) for iss in issuers for ev in iss.events]
    pct = np.array([ev["pct_high"] for _, ev in all_events])
    z_mean = float(pct.mean())
    z_std = float(pct.std()) or 1.0
    eff = cfg.planted
    logit_base = math.log(eff.base_rate / (1.0 - eff.base_rate))
    sd_factor = _drift_sd_factor(HORIZON)

    mids = np.array([(a + b) / 2.0 for a, b in DEV_RANGES])
    widths = np.array([b - a for a, b in DEV_RANGES])
    w = np.array(cfg.bucket_shares) / sum(cfg.bucket_shares)
    dev_mean = float(np.sum(w * mids))
    dev_sd = float(np.sqrt(np.sum(w * (widths**2 / 12.0 + mids**2)) - dev_mean**2))

    # Phase 2: planted drift per event.
    if cfg.bucket_effect is not None:
        c_scale = sd_factor * float(np.mean([iss.sigma for iss in issuers for _ in iss.events]))
        shifts = np.empty(len(all_events))
        buckets = np.array([ev["bucket"] for _, ev in all_events])
        for j, (iss, ev) in enumerate(all_events):
            z = (ev["pct_high"] - z_mean) / z_std
            gain = _channel_gain(ev["dev"], iss.sigma, cfg.daily_vol_lo, cfg.daily_vol_hi)
            shifts[j] = ndtri(_sigmoid(logit_base + eff.w_52w_high * gain * z + ev["noise"]))
        for b in range(len(cfg.bucket_shares)):
            mask = buckets == b
            if mask.any():
                shifts[mask] -= shifts[mask].mean()  # per-bucket targets stay exact
        for j, (iss, ev) in enumerate(all_events):
            ev["mu"] = cfg.bucket_effect[ev["bucket"]] + c_scale * float(shifts[j])
            ev["intended_p"] = float(ndtr((ev["mu"] - LABEL_THRESHOLD) / (iss.sigma * sd_factor)))
    else:
        for iss, ev in all_events:
            z = (ev["pct_high"] - z_mean) / z_std
            z_dev = (ev["dev"] - dev_mean) / dev_sd
            arg = logit_base + eff.w_52w_high * z + eff.w_price_dev * z_dev + ev["noise"]
            s_car = iss.sigma * sd_factor
            ev["mu"] = LABEL_THRESHOLD + s_car * float(ndtri(_sigmoid(arg)))
            ev["intended_p"] = _sigmoid(arg)

    # Phase 3: inject drift, write fixtures, bars, maps, truth.
    truth = GroundTruth(
        config=cfg,
        z_stats={"pct_from_52w_high_mean": z_mean, "pct_from_52w_high_std": z_std,
                 "price_deviation_mean": dev_mean, "price_deviation_std": dev_sd},
    )
    profile = _DRIFT_PROFILES[cfg.drift_profile]
    bars_rows: list[str] = []
    sector_rows: list[str] = []
    map_rows: list[str] = []

    fac = np.column_stack([mkt, smb, hml])
    levels = np.column_stack([factor_part_unit["mkt"], factor_part_unit["smb"], factor_part_unit["hml"]])
    ou_decay = 1.0 - (1.0 - IDIO_REVERSION) ** HORIZON
    for iss in issuers:
        drift_level = np.zeros(n_days)
        for ev in iss.events:
            di = ev["di"]
            # Replicate the factor fit the pipeline will run at disclosure and
            # pre-compensate the drift for its expected measurement error
            # (fitted intercept, beta error times realized window factors,
            # return convexity, and the idio level's expected reversion), so
            # E[measured CAR] equals the planted drift and no path feature
            # can leak into the labels as a mechanical signal.
            logp_now = iss.undrifted + drift_level
            w0 = di - ESTIMATION_WINDOW + 1
            seg = np.exp(logp_now[w0 - 1 : di + 1])
            r = seg[1:] / seg[:-1] - 1.0
            X = np.column_stack([np.ones(ESTIMATION_WINDOW), fac[w0 : di + 1]])
            coef, _, _, _ = np.linalg.lstsq(X, r - rf[w0 : di + 1], rcond=None)
            f_sum = fac[di + 1 : di + 1 + HORIZON].sum(axis=0)
            idio_level = iss.undrifted[di] - iss.logp0 - float(iss.betas @ levels[di])
            fit_comp = (
                HORIZON * float(coef[0])
                - HORIZON * iss.sigma**2 / 2.0
                - float((iss.betas - coef[1:]) @ f_sum)
                + ou_decay * idio_level
            )
            drift_level[di + 1 : di + 1 + len(profile)] += (ev["mu"] + fit_comp) * np.cumsum(profile)
        logp = iss.undrifted + drift_level
        closes = np.exp(logp)
        volumes = np.maximum(1, (iss.dollar_vol * iss.vol_noise / closes).astype(int))

        for ev in iss.events:
            ti, di = ev["ti"], ev["di"]
            price = float(closes[di]) / (1.0 + ev["dev"])
            n_shares = max(1, round(ev["value"] / price))
            insider_id = f"{iss.cik[4:]}{ev['insider']:02d}"
            accession = f"{iss.cik}-{calendar[di].year % 100:02d}-{ti:06d}"
            tx = InsiderTransaction(
                accession_id=accession,
                issuer_id=iss.cik,
                cusip=iss.cusip,
                ticker=iss.ticker,
                insider_id=insider_id,
                insider_title_raw=_TITLE_POOL[ev["insider"] % len(_TITLE_POOL)],
                transaction_date=calendar[ti],
                disclosure_date=calendar[di],
                transaction_code="P",
                shares=float(n_shares),
                price_per_share=price,
                transaction_value=round(n_shares * price, 2),
            )
            (out / "filings" / f"{accession}.xml").write_bytes(write_form4([tx]))
            truth.events.append(
                {
                    "accession_id": accession,
                    "issuer_id": iss.perm_id,
                    "insider_id": insider_id,
                    "ticker": iss.ticker,
                    "transaction_date": calendar[ti].isoformat(),
                    "disclosure_date": calendar[di].isoformat(),
                    "price_deviation": ev["dev"],
                    "bucket": ev["bucket"],
                    "pct_from_52w_high": ev["pct_high"],
                    "drift": ev["mu"],
                    "sigma_daily": iss.sigma,
                    "intended_probability": ev["intended_p"],
                    "transaction_value": tx.transaction_value,
                }
            )

        for t in range(n_days):
            c = repr(float(closes[t]))
            bars_rows.append(
                f"{iss.ticker},{calendar[t].isoformat()},{c},{c},{int(volumes[t])},{iss.shares_out!r}"
            )
        sector_rows.append(f"{iss.perm_id},{iss.is_biotech}")
        map_rows.append(f"{iss.cusip},{iss.perm_id},{iss.ticker},{cfg.start.isoformat()},")

    with open(out / "bars.csv", "w") as fh:
        fh.write("ticker,date,close,adj_close,volume,shares_outstanding\n")
        fh.write("\n".join(bars_rows) + "\n")
    with open(out / "factors.csv", "w") as fh:
        fh.write("date,mkt_rf,smb,hml,rf\n")
        for t in range(n_days):
            fh.write(
                f"{calendar[t].isoformat()},{float(mkt[t])!r},{float(smb[t])!r},"
                f"{float(hml[t])!r},{float(rf[t])!r}\n"
            )
    with open(out / "sectors.csv", "w") as fh:
        fh.write("issuer_id,is_biotech\n")
        fh.write("\n".join(sector_rows) + "\n")
    with open(out / "cusip_map.csv", "w") as fh:
        fh.write("cusip,permanent_id,ticker,effective_from,effective_to\n")
        fh.write("\n".join(map_rows) + "\n")
    truth.save(out / "truth.json")
    log.info("synth: wrote %d events across %d issuers to %s", len(truth.events), len(issuers), out)
    return truth


def describe(truth: GroundTruth) -> dict:
    """Planted parameters plus realized generation-side moments."""
    cfg = truth.config
    events = truth.events
    n_buckets = len(cfg.bucket_shares)
    by_bucket: dict[int, list[dict]] = {b: [] for b in range(n_buckets)}
    for rec in events:
        by_bucket[rec["bucket"]].append(rec)
    bucket_summary = []
    max_abs_diff = 0.0
    for b in range(n_buckets):
        recs = by_bucket[b]
        mean_drift = float(np.mean([r["drift"] for r in recs])) if recs else None
        target = cfg.bucket_effect[b] if cfg.bucket_effect is not None else None
        if mean_drift is not None and target is not None:
            max_abs_diff = max(max_abs_diff, abs(mean_drift - target))
        bucket_summary.append(
            {
                "bucket": b,
                "n": len(recs),
                "target_mean_car": target,
                "realized_mean_drift": mean_drift,
                "mean_intended_probability": float(np.mean([r["intended_probability"] for r in recs])) if recs else None,
            }
        )
    return {
        "planted": cfg.planted.to_dict(),
        "bucket_effect": list(cfg.bucket_effect) if cfg.bucket_effect is not None else None,
        "drift_profile": cfg.drift_profile,
        "n_events": len(events),
        "mean_intended_probability": float(np.mean([r["intended_probability"] for r in events])) if events else None,
        "buckets": bucket_summary,
        "max_abs_bucket_drift_diff": max_abs_diff if cfg.bucket_effect is not None else None,
    }
