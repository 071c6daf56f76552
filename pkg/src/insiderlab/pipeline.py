"""End-to-end orchestration: config file, staged runs, manifests, report.

The run configuration is a flat INI file (sections of key=value pairs); any
key can be overridden with an environment variable named
INSIDERLAB_<SECTION>__<KEY>. Every stage records its inputs and outputs with
content hashes in manifest.json, and no artifact embeds a timestamp, so a
rerun on identical inputs is byte-identical.
"""
from __future__ import annotations

import configparser
import hashlib
import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path

import numpy as np

from . import eventstudy, evaluate, features, filings, learn, marketdata, plots, strata
from .errors import ConfigurationError
from .eventstudy import LabelConfig
from .filings import FilterConfig
from .gbm import GbmConfig
from .learn import SplitSpec

log = logging.getLogger(__name__)

ENV_PREFIX = "INSIDERLAB_"


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def sha256_tree(path) -> str:
    """Hash a directory by hashing its files in sorted relative order."""
    p = Path(path)
    if p.is_file():
        return sha256_file(p)
    h = hashlib.sha256()
    for f in sorted(p.rglob("*")):
        if f.is_file():
            h.update(str(f.relative_to(p)).encode())
            h.update(bytes.fromhex(sha256_file(f)))
    return h.hexdigest()


@dataclass
class PipelineConfig:
    filings_dir: Path
    cusip_map: Path
    bars: Path
    factors: Path
    sectors: Path
    regime: Path | None
    filter_cfg: FilterConfig
    label_cfg: LabelConfig
    split: SplitSpec
    gbm: GbmConfig
    grid: list[GbmConfig]
    tuning_enabled: bool
    tscv_k: int
    output_dir: Path
    strict: bool
    jobs: int
    horizons: list[int]
    percent_factors: bool
    logistic_l2: float
    raw: dict = field(default_factory=dict)


def _parse_grid(text: str, base: GbmConfig) -> list[GbmConfig]:
    """Semicolon-separated variants of `key=value` overrides on the base config."""
    grid = []
    for variant in text.split(";"):
        variant = variant.strip()
        if not variant:
            continue
        overrides = {}
        for pair in variant.split():
            key, _, value = pair.partition("=")
            if key not in base.to_dict():
                raise ConfigurationError(f"unknown grid key {key!r}")
            template = base.to_dict()[key]
            overrides[key] = type(template)(float(value)) if isinstance(template, (int, float)) else value
        grid.append(GbmConfig.from_dict({**base.to_dict(), **overrides}))
    return grid or [base]


def read_ini(path, env: dict | None = None) -> configparser.ConfigParser:
    """Read an INI file and apply INSIDERLAB_<SECTION>__<KEY> environment overrides."""
    env = dict(os.environ if env is None else env)
    parser = configparser.ConfigParser()
    read = parser.read(path)
    if not read:
        raise ConfigurationError(f"config file {path} not found")
    for key, value in env.items():
        if not key.startswith(ENV_PREFIX):
            continue
        section, _, option = key[len(ENV_PREFIX):].partition("__")
        if not option:
            continue
        section = section.lower()
        if not parser.has_section(section):
            parser.add_section(section)
        parser.set(section, option.lower(), value)
    return parser


def filter_cfg_from_ini(g: configparser.ConfigParser) -> FilterConfig:
    return FilterConfig(
        max_lag_days=g.getint("filters", "max_lag_days", fallback=90),
        min_value=g.getfloat("filters", "min_value", fallback=5000.0),
        min_cap=g.getfloat("filters", "min_cap", fallback=30e6),
        max_cap=g.getfloat("filters", "max_cap", fallback=500e6),
        min_addv=g.getfloat("filters", "min_addv", fallback=200000.0),
        addv_window_days=g.getint("filters", "addv_window_days", fallback=30),
        min_addv_days=g.getint("filters", "min_addv_days", fallback=10),
    )


def label_cfg_from_ini(g: configparser.ConfigParser) -> LabelConfig:
    return LabelConfig(
        horizon=g.getint("label", "horizon", fallback=30),
        car_threshold=g.getfloat("label", "car_threshold", fallback=0.10),
        estimation_window=g.getint("label", "estimation_window", fallback=252),
        min_obs=g.getint("label", "min_obs", fallback=126),
        compound=g.getboolean("label", "compound", fallback=False),
    )


def gbm_cfg_from_ini(g: configparser.ConfigParser) -> GbmConfig:
    return GbmConfig(
        n_trees=g.getint("gbm", "n_trees", fallback=200),
        max_depth=g.getint("gbm", "max_depth", fallback=4),
        learning_rate=g.getfloat("gbm", "learning_rate", fallback=0.1),
        min_child_weight=g.getfloat("gbm", "min_child_weight", fallback=5.0),
        l2_reg=g.getfloat("gbm", "l2_reg", fallback=1.0),
        subsample=g.getfloat("gbm", "subsample", fallback=1.0),
        n_bins=g.getint("gbm", "n_bins", fallback=64),
        seed=g.getint("gbm", "seed", fallback=7),
    )


def load_pipeline_config(path, env: dict | None = None, output_dir=None) -> PipelineConfig:
    """Read the INI config, apply environment overrides, validate paths."""
    parser = read_ini(path, env=env)
    base_dir = Path(path).resolve().parent

    def path_of(section: str, option: str, required: bool = True) -> Path | None:
        if not parser.has_option(section, option):
            if required:
                raise ConfigurationError(f"config is missing [{section}] {option}")
            return None
        p = Path(parser.get(section, option))
        return p if p.is_absolute() else base_dir / p

    g = parser
    filter_cfg = filter_cfg_from_ini(g)
    label_cfg = label_cfg_from_ini(g)
    split = SplitSpec(
        train_end=date.fromisoformat(g.get("split", "train_end", fallback="2022-12-31")),
        valid_end=date.fromisoformat(g.get("split", "valid_end", fallback="2023-12-31")),
        test_end=date.fromisoformat(g.get("split", "test_end", fallback="2024-12-31")),
    )
    gbm_cfg = gbm_cfg_from_ini(g)
    out_dir = Path(output_dir) if output_dir else path_of("run", "output_dir")
    horizons_text = g.get("run", "horizons", fallback="20,30,60")
    cfg = PipelineConfig(
        filings_dir=path_of("paths", "filings"),
        cusip_map=path_of("paths", "cusip_map"),
        bars=path_of("paths", "bars"),
        factors=path_of("paths", "factors"),
        sectors=path_of("paths", "sectors"),
        regime=path_of("paths", "regime", required=False),
        filter_cfg=filter_cfg,
        label_cfg=label_cfg,
        split=split,
        gbm=gbm_cfg,
        grid=_parse_grid(g.get("tuning", "grid", fallback=""), gbm_cfg),
        tuning_enabled=g.getboolean("tuning", "enabled", fallback=False),
        tscv_k=g.getint("tuning", "k", fallback=3),
        output_dir=out_dir,
        strict=g.getboolean("run", "strict", fallback=False),
        jobs=g.getint("run", "jobs", fallback=1),
        horizons=[int(h) for h in horizons_text.split(",") if h.strip()],
        percent_factors=g.getboolean("run", "percent_factors", fallback=False),
        logistic_l2=g.getfloat("run", "logistic_l2", fallback=1.0),
        raw={s: dict(parser.items(s)) for s in parser.sections()},
    )
    for name, p in (
        ("filings", cfg.filings_dir),
        ("cusip_map", cfg.cusip_map),
        ("bars", cfg.bars),
        ("factors", cfg.factors),
        ("sectors", cfg.sectors),
    ):
        if not Path(p).exists():
            raise ConfigurationError(f"configured {name} path does not exist: {p}")
    if cfg.regime is not None and not cfg.regime.exists():
        raise ConfigurationError(f"configured regime path does not exist: {cfg.regime}")
    return cfg


# -- stages ---------------------------------------------------------------------


def stage_ingest(bars_path, factors_path, cache_dir, percent: bool = False) -> dict:
    bars = marketdata.load_bars(bars_path)
    factors = marketdata.load_factors(factors_path, percent=percent)
    store = marketdata.MarketData(bars, factors)
    marketdata.save_cache(store, cache_dir)
    return {"bar_rows": bars.row_count, "factor_rows": factors.row_count, "tickers": len(bars.tickers)}


def parse_documents(paths: list[str], jobs: int = 1) -> list[filings.InsiderTransaction]:
    """Parse many documents; results merge in input order regardless of scheduling."""
    def one(p: str):
        return filings.parse_form4(Path(p).read_bytes(), accession_hint=Path(p).stem)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            per_doc = list(pool.map(one, paths))
    else:
        per_doc = [one(p) for p in paths]
    return [tx for txs in per_doc for tx in txs]


def stage_parse(
    filings_source,
    cusip_map_path,
    filter_cfg: FilterConfig,
    market: marketdata.MarketData,
    out_kept,
    out_rejected,
    strict: bool = False,
    jobs: int = 1,
) -> dict:
    paths = filings.fetch_filing_index(filings_source)
    txs = parse_documents(paths, jobs=jobs)
    cusip_map = filings.CusipMap.from_csv(cusip_map_path)
    mapped = [filings.map_cusip(tx, cusip_map) for tx in txs]
    kept, rejected = filings.apply_filters(mapped, filter_cfg, market, strict=strict)
    filings.write_transactions_jsonl(out_kept, kept)
    filings.write_transactions_jsonl(out_rejected, [tx for tx, _ in rejected], [r for _, r in rejected])
    return {"documents": len(paths), "transactions": len(txs), "kept": len(kept), "rejected": len(rejected)}


def stage_label(kept_path, market, label_cfg: LabelConfig, out_events, strict: bool = False) -> dict:
    txs = filings.read_transactions_jsonl(kept_path)
    events = eventstudy.aggregate_events(txs)
    outcomes, skipped = eventstudy.label_events(market, events, label_cfg, strict=strict)
    eventstudy.write_outcomes_jsonl(out_events, outcomes)
    return {"events": len(events), "labeled": len(outcomes), "skipped": len(skipped)}


def stage_features(events_path, market, sectors_path, out_csv, strict: bool = False) -> dict:
    outcomes = eventstudy.read_outcomes_jsonl(events_path)
    sector_map = features.SectorMap.from_csv(sectors_path)
    matrix, skipped = features.build_matrix(outcomes, market, sector_map, strict=strict)
    features.write_features_csv(out_csv, matrix)
    return {"rows": matrix.n, "skipped": len(skipped)}


def stage_train(
    features_path,
    split: SplitSpec,
    grid: list[GbmConfig],
    out_model,
    out_logistic,
    tuning_enabled: bool = False,
    tscv_k: int = 3,
    logistic_l2: float = 1.0,
) -> dict:
    matrix = features.read_features_csv(features_path)
    train, _, _ = learn.temporal_split(matrix, split)
    cfg = grid[0]
    if tuning_enabled and len(grid) > 1:
        cfg = learn.tscv_tune(train, grid, k=tscv_k)
    artifact = learn.train_gbm(train, cfg, split=split)
    learn.save_model(artifact, out_model)
    logi = learn.train_logistic(train.X, train.y, l2=logistic_l2)
    Path(out_logistic).write_text(
        json.dumps(
            {
                "model_type": "logistic",
                "coef": [float(v) for v in logi.coef],
                "intercept": logi.intercept,
                "mean": [float(v) for v in logi.mean],
                "std": [float(v) for v in logi.std],
                "kept": [bool(v) for v in logi.kept],
                "l2": logi.l2,
                "n_iter": logi.n_iter,
                "columns": list(features.FEATURE_COLUMNS),
            },
            sort_keys=True,
        )
        + "\n"
    )
    return {"train_rows": train.n, "config": cfg.to_dict(), "tuned": tuning_enabled and len(grid) > 1}


def load_logistic(path) -> learn.LogisticModel:
    d = json.loads(Path(path).read_text())
    return learn.LogisticModel(
        coef=np.array(d["coef"]),
        intercept=float(d["intercept"]),
        mean=np.array(d["mean"]),
        std=np.array(d["std"]),
        kept=np.array(d["kept"], dtype=bool),
        l2=float(d["l2"]),
        n_iter=int(d["n_iter"]),
    )


def stage_tune_threshold(model_path, features_path, out_model=None) -> dict:
    artifact = learn.load_model(model_path)
    matrix = features.read_features_csv(features_path)
    tuned = learn.tune_threshold(artifact, matrix)
    learn.save_model(tuned, out_model or model_path)
    return {"threshold": tuned.threshold}


def _partition(matrix, split: SplitSpec, which: str):
    train, valid, test = learn.temporal_split(matrix, split)
    if which == "all":
        return matrix
    return {"train": train, "valid": valid, "test": test}[which]


def stage_evaluate(
    model_path,
    features_path,
    out_report,
    plots_dir=None,
    out_table2=None,
    out_table3=None,
    logistic_path=None,
    partition: str = "test",
) -> dict:
    artifact = learn.load_model(model_path)
    matrix = features.read_features_csv(features_path)
    part = _partition(matrix, artifact.split, partition)
    scores = artifact.predict(part.X)
    report = evaluate.evaluate_scores(
        scores, part.y, artifact.threshold, feature_gain=artifact.feature_gain, columns=artifact.columns
    )
    Path(out_report).write_text(json.dumps(report.to_dict(), sort_keys=True) + "\n")

    if out_table2 is not None:
        rows = []
        if logistic_path is not None:
            logi = load_logistic(logistic_path)
            lscores = logi.predict(part.X)
            lconf = evaluate.classify_and_count(lscores, part.y, 0.5)
            rows.append(("logistic_regression", evaluate.auc(lscores, part.y), 0.5, lconf))
        default_conf = evaluate.classify_and_count(scores, part.y, 0.5)
        rows.append(("gbm_default", report.auc, 0.5, default_conf))
        rows.append(("gbm_optimized", report.auc, artifact.threshold, report.confusion))
        with open(out_table2, "w") as fh:
            fh.write("model,auc,threshold,precision,recall,f1,n\n")
            for name, auc_v, tau, conf in rows:
                f1 = 2 * conf.tp / (2 * conf.tp + conf.fp + conf.fn) if (2 * conf.tp + conf.fp + conf.fn) else 0.0
                fh.write(
                    f"{name},{auc_v!r},{tau!r},{conf.precision!r},{conf.recall!r},{f1!r},{conf.n}\n"
                )
    if out_table3 is not None:
        with open(out_table3, "w") as fh:
            fh.write("rank,feature,importance\n")
            for rank, (name, gain) in enumerate(report.importance, start=1):
                fh.write(f"{rank},{name},{gain!r}\n")
    if plots_dir is not None:
        plots.render_report_figures(report, plots_dir)
    return {"auc": report.auc, "threshold": artifact.threshold, "n": report.n, "partition": partition}


def stage_stratify(
    events_path,
    market,
    out_table4,
    label_cfg: LabelConfig = LabelConfig(),
    horizons: list[int] = (20, 30, 60),
    regime_path=None,
    out_summary=None,
) -> dict:
    outcomes = eventstudy.read_outcomes_jsonl(events_path)
    regime = strata.RegimeSeries.from_csv(regime_path) if regime_path else None
    sweep = strata.robustness_sweep(
        outcomes, market, base_cfg=label_cfg, horizons=list(horizons), regime=regime
    )
    base_h = label_cfg.horizon if label_cfg.horizon in sweep.by_horizon else list(sweep.by_horizon)[0]
    out_table4 = Path(out_table4)
    strata.write_bucket_csv(out_table4, sweep.by_horizon[base_h])
    for h, stats in sweep.by_horizon.items():
        if h != base_h:
            strata.write_bucket_csv(out_table4.with_name(f"{out_table4.stem}_h{h}{out_table4.suffix}"), stats)
    if sweep.regime_split is not None:
        for name, stats in sweep.regime_split.items():
            strata.write_bucket_csv(
                out_table4.with_name(f"{out_table4.stem}_regime_{name}{out_table4.suffix}"), stats
            )
    summary = {
        "horizons": list(sweep.by_horizon),
        "base_horizon": base_h,
        "extreme_welch": {
            str(h): None if w is None else {"t_stat": w[0], "p_value": w[1], "dof": w[2]}
            for h, w in sweep.extreme_welch.items()
        },
        "skipped": {str(h): n for h, n in sweep.skipped.items()},
        "regime_split": sweep.regime_split is not None,
    }
    if out_summary is not None:
        Path(out_summary).write_text(json.dumps(summary, sort_keys=True) + "\n")
    return summary


# -- run-all ---------------------------------------------------------------------

STAGE_ORDER = [
    "ingest",
    "parse",
    "label",
    "features",
    "train",
    "tune-threshold",
    "evaluate",
    "stratify",
    "report",
]


def run_all(cfg: PipelineConfig) -> Path:
    """Execute every stage into cfg.output_dir; returns the bundle directory."""
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest: dict = {"stages": {}, "config": cfg.raw}

    def record(stage: str, inputs: dict, outputs: dict, info: dict) -> None:
        def describe(v, relative: bool) -> dict:
            path = Path(v)
            shown = path.relative_to(out) if relative and path.is_relative_to(out) else path
            return {"path": str(shown), "sha256": sha256_tree(v)}

        manifest["stages"][stage] = {
            "inputs": {k: describe(v, relative=True) for k, v in inputs.items()},
            "outputs": {k: describe(v, relative=True) for k, v in outputs.items()},
            "info": info,
        }
        log.info("stage %s: %s", stage, info)

    current = "ingest"
    try:
        cache = out / "market_cache"
        info = stage_ingest(cfg.bars, cfg.factors, cache, percent=cfg.percent_factors)
        record("ingest", {"bars": cfg.bars, "factors": cfg.factors}, {"cache": cache}, info)
        market = marketdata.load_cache(cache)

        current = "parse"
        kept, rejected = out / "kept.jsonl", out / "rejected.jsonl"
        info = stage_parse(
            cfg.filings_dir, cfg.cusip_map, cfg.filter_cfg, market, kept, rejected,
            strict=cfg.strict, jobs=cfg.jobs,
        )
        record(
            "parse",
            {"filings": cfg.filings_dir, "cusip_map": cfg.cusip_map, "cache": cache},
            {"kept": kept, "rejected": rejected},
            info,
        )

        current = "label"
        events = out / "events.jsonl"
        info = stage_label(kept, market, cfg.label_cfg, events, strict=cfg.strict)
        record("label", {"kept": kept, "cache": cache}, {"events": events}, info)

        current = "features"
        feats = out / "features.csv"
        info = stage_features(events, market, cfg.sectors, feats, strict=cfg.strict)
        record("features", {"events": events, "cache": cache, "sectors": cfg.sectors}, {"features": feats}, info)

        current = "train"
        model, logistic = out / "model.json", out / "logistic.json"
        info = stage_train(
            feats, cfg.split, cfg.grid, model, logistic,
            tuning_enabled=cfg.tuning_enabled, tscv_k=cfg.tscv_k, logistic_l2=cfg.logistic_l2,
        )
        record("train", {"features": feats}, {"model": model, "logistic": logistic}, info)

        current = "tune-threshold"
        info = stage_tune_threshold(model, feats)
        record("tune-threshold", {"features": feats, "model_in": model}, {"model": model}, info)

        current = "evaluate"
        report_json = out / "report.json"
        table2, table3 = out / "table2.csv", out / "table3.csv"
        plots_dir = out / "plots"
        info = stage_evaluate(
            model, feats, report_json, plots_dir=plots_dir,
            out_table2=table2, out_table3=table3, logistic_path=logistic,
        )
        record(
            "evaluate",
            {"model": model, "logistic": logistic, "features": feats},
            {"report": report_json, "table2": table2, "table3": table3, "plots": plots_dir},
            info,
        )

        current = "stratify"
        table4 = out / "table4.csv"
        summary = out / "stratify_summary.json"
        info = stage_stratify(
            events, market, table4,
            label_cfg=cfg.label_cfg, horizons=cfg.horizons,
            regime_path=cfg.regime, out_summary=summary,
        )
        record("stratify", {"events": events, "cache": cache}, {"table4": table4, "summary": summary}, info)
    except Exception as exc:
        raise type(exc)(f"stage {current} failed: {exc}").with_traceback(exc.__traceback__) from exc

    manifest_path = out / "manifest.json"
    manifest_path.write_text(json.dumps(manifest, sort_keys=True, indent=1) + "\n")

    build_report(out, out / "report.md")
    return out


# -- report ------------------------------------------------------------------------

REPORT_ARTIFACTS = {
    "metrics": "table2.csv",
    "importance": "table3.csv",
    "stratification": "table4.csv",
    "manifest": "manifest.json",
}


def _csv_to_markdown(path) -> str:
    lines = Path(path).read_text().strip().splitlines()
    cells = [line.split(",") for line in lines]
    width = len(cells[0])
    md = ["| " + " | ".join(cells[0]) + " |", "|" + "---|" * width]
    for row in cells[1:]:
        md.append("| " + " | ".join(row) + " |")
    return "\n".join(md)


def build_report(bundle_dir, out_md) -> Path:
    """Render the consolidated markdown report from a run bundle."""
    bundle = Path(bundle_dir)
    missing = [name for name, fname in REPORT_ARTIFACTS.items() if not (bundle / fname).exists()]
    if len(missing) == len(REPORT_ARTIFACTS):
        raise ConfigurationError(
            "empty bundle: missing " + ", ".join(REPORT_ARTIFACTS[m] for m in sorted(missing))
        )
    parts = ["# Insider purchase signal report", ""]
    sections = [
        ("metrics", "## Test-set performance"),
        ("importance", "## Feature importance (normalized gain)"),
        ("stratification", "## Abnormal returns by price deviation at disclosure"),
    ]
    for name, heading in sections:
        parts.append(heading)
        fname = bundle / REPORT_ARTIFACTS[name]
        if name in missing:
            parts.append(f"*Missing artifact: `{REPORT_ARTIFACTS[name]}` was not produced by this run.*")
        else:
            parts.append(_csv_to_markdown(fname))
        parts.append("")

    summary_path = bundle / "stratify_summary.json"
    if summary_path.exists():
        summary = json.loads(summary_path.read_text())
        welch = summary.get("extreme_welch", {}).get(str(summary.get("base_horizon")))
        if welch:
            parts.append(
                f"Extreme-bucket Welch test (lowest vs highest deviation bucket): "
                f"t = {welch['t_stat']:.3f}, p = {welch['p_value']:.3g}, dof = {welch['dof']:.1f}."
            )
            parts.append("")

    plots_dir = bundle / "plots"
    if plots_dir.is_dir():
        parts.append("## Figures")
        for svg in sorted(plots_dir.glob("*.svg")):
            parts.append(f"- `plots/{svg.name}` (data: `plots/{svg.stem}.csv`)")
        parts.append("")

    if "manifest" not in missing:
        manifest = json.loads((bundle / "manifest.json").read_text())
        parts.append("## Provenance")
        for stage in STAGE_ORDER:
            entry = manifest.get("stages", {}).get(stage)
            if entry is None:
                continue
            ins = ", ".join(f"{k}={v['sha256'][:12]}" for k, v in sorted(entry["inputs"].items()))
            parts.append(f"- **{stage}**: inputs [{ins}]")
        parts.append("")

    text = "\n".join(parts)
    Path(out_md).write_text(text)
    return Path(out_md)
