"""Command-line entry point.

Exit codes: 0 success, 1 validation/config problems, 2 data gaps in strict
mode, 3 internal errors.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from datetime import date
from pathlib import Path

from . import pipeline, synth
from .errors import PipelineError
from .eventstudy import LabelConfig
from .filings import FilterConfig
from .learn import SplitSpec
from .marketdata import load_cache

log = logging.getLogger("insiderlab")


def _add_parse(sub):
    p = sub.add_parser("parse", help="parse Form 4 XML, map identifiers, apply the purchase filters")
    p.add_argument("--in", dest="source", required=True, help="filings directory or descriptor JSON")
    p.add_argument("--map", dest="cusip_map", required=True, help="CUSIP map CSV")
    p.add_argument("--filters", help="INI file with a [filters] section (defaults used when omitted)")
    p.add_argument("--market", required=True, help="ingested market cache directory")
    p.add_argument("--out", required=True, help="kept transactions JSONL")
    p.add_argument("--rejected", help="rejected transactions JSONL (default: <out>.rejected.jsonl)")
    p.add_argument("--strict", action="store_true")
    p.add_argument("--jobs", type=int, default=1)


def _add_ingest(sub):
    p = sub.add_parser("ingest", help="validate and cache bars and factor CSVs")
    p.add_argument("--bars", required=True)
    p.add_argument("--factors", required=True)
    p.add_argument("--out", required=True, help="cache directory")
    p.add_argument("--percent", action="store_true", help="factor file is in percent units")


def _add_label(sub):
    p = sub.add_parser("label", help="aggregate purchases into events and label post-disclosure CARs")
    p.add_argument("--events", required=True, help="kept transactions JSONL from `parse`")
    p.add_argument("--market", required=True)
    p.add_argument("--out", required=True, help="labeled events JSONL")
    p.add_argument("--horizon", type=int, default=30)
    p.add_argument("--car-threshold", type=float, default=0.10)
    p.add_argument("--estimation-window", type=int, default=252)
    p.add_argument("--min-obs", type=int, default=126)
    p.add_argument("--compound", action="store_true", help="compound daily abnormal returns instead of summing")
    p.add_argument("--strict", action="store_true")


def _add_features(sub):
    p = sub.add_parser("features", help="build the disclosure-time feature matrix")
    p.add_argument("--events", required=True)
    p.add_argument("--market", required=True)
    p.add_argument("--sectors", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--strict", action="store_true")


def _add_train(sub):
    p = sub.add_parser("train", help="train the boosted ensemble and logistic baseline")
    p.add_argument("--features", required=True)
    p.add_argument("--split", default="2022-12-31,2023-12-31,2024-12-31",
                   help="train_end,valid_end[,test_end] ISO dates")
    p.add_argument("--grid", help="INI file with [gbm] base and optional [tuning] grid")
    p.add_argument("--out", required=True, help="model JSON")
    p.add_argument("--baseline-out", help="logistic baseline JSON (default: <out dir>/logistic.json)")
    p.add_argument("--tscv-k", type=int, default=3)
    p.add_argument("--logistic-l2", type=float, default=1.0)


def _add_tune_threshold(sub):
    p = sub.add_parser("tune-threshold", help="optimize the decision threshold on the validation partition")
    p.add_argument("--model", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--out", help="output model JSON (default: overwrite --model)")


def _add_evaluate(sub):
    p = sub.add_parser("evaluate", help="compute the metric bundle and render figures")
    p.add_argument("--model", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--out", required=True, help="report JSON")
    p.add_argument("--plots", help="figure output directory (SVG/CSV pairs)")
    p.add_argument("--table2")
    p.add_argument("--table3")
    p.add_argument("--logistic", help="logistic baseline JSON for the comparison table")
    p.add_argument("--partition", choices=["train", "valid", "test", "all"], default="test")


def _add_stratify(sub):
    p = sub.add_parser("stratify", help="price-deviation bucket tables and robustness sweeps")
    p.add_argument("--events", required=True)
    p.add_argument("--features", help="features CSV (accepted for interface compatibility; deviations "
                                      "are recomputed from the market cache)")
    p.add_argument("--market", required=True)
    p.add_argument("--horizons", default="20,30,60")
    p.add_argument("--regime", help="CSV date,value regime series (e.g. a volatility index)")
    p.add_argument("--out", required=True, help="bucket table CSV")
    p.add_argument("--summary", help="summary JSON (Welch tests, skips)")
    p.add_argument("--car-threshold", type=float, default=0.10)
    p.add_argument("--horizon", type=int, default=30, help="base horizon for the main table")


def _add_synth(sub):
    p = sub.add_parser("synth", help="generate a synthetic corpus with planted effects")
    p.add_argument("--config", help="JSON config (defaults when omitted)")
    p.add_argument("--out", required=True, help="corpus directory")


def _add_run_all(sub):
    p = sub.add_parser("run-all", help="run every stage from one config file")
    p.add_argument("--config", required=True, help="pipeline INI config")
    p.add_argument("--out", help="output directory (overrides [run] output_dir)")
    p.add_argument("--jobs", type=int, help="worker cap (does not affect results)")


def _add_report(sub):
    p = sub.add_parser("report", help="render the consolidated markdown report from a run bundle")
    p.add_argument("--bundle", required=True)
    p.add_argument("--out", help="markdown path (default: <bundle>/report.md)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="insiderlab", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for add in (
        _add_parse, _add_ingest, _add_label, _add_features, _add_train,
        _add_tune_threshold, _add_evaluate, _add_stratify, _add_synth,
        _add_run_all, _add_report,
    ):
        add(sub)
    return parser


def _cmd_parse(args) -> dict:
    if args.filters:
        filter_cfg = pipeline.filter_cfg_from_ini(pipeline.read_ini(args.filters))
    else:
        filter_cfg = FilterConfig()
    market = load_cache(args.market)
    rejected = args.rejected or f"{args.out}.rejected.jsonl"
    return pipeline.stage_parse(
        args.source, args.cusip_map, filter_cfg, market, args.out, rejected,
        strict=args.strict, jobs=args.jobs,
    )


def _cmd_ingest(args) -> dict:
    return pipeline.stage_ingest(args.bars, args.factors, args.out, percent=args.percent)


def _cmd_label(args) -> dict:
    market = load_cache(args.market)
    cfg = LabelConfig(
        horizon=args.horizon,
        car_threshold=args.car_threshold,
        estimation_window=args.estimation_window,
        min_obs=args.min_obs,
        compound=args.compound,
    )
    return pipeline.stage_label(args.events, market, cfg, args.out, strict=args.strict)


def _cmd_features(args) -> dict:
    market = load_cache(args.market)
    return pipeline.stage_features(args.events, market, args.sectors, args.out, strict=args.strict)


def _parse_split(text: str) -> SplitSpec:
    parts = [p.strip() for p in text.split(",") if p.strip()]
    if len(parts) == 2:
        parts.append("9999-12-30")
    if len(parts) != 3:
        raise PipelineError(f"--split expects 2 or 3 dates, got {text!r}")
    return SplitSpec(*(date.fromisoformat(p) for p in parts))


def _cmd_train(args) -> dict:
    split = _parse_split(args.split)
    if args.grid:
        ini = pipeline.read_ini(args.grid)
        base = pipeline.gbm_cfg_from_ini(ini)
        grid = pipeline._parse_grid(ini.get("tuning", "grid", fallback=""), base)
        tuning = ini.getboolean("tuning", "enabled", fallback=len(grid) > 1)
        k = ini.getint("tuning", "k", fallback=args.tscv_k)
    else:
        from .gbm import GbmConfig

        grid, tuning, k = [GbmConfig()], False, args.tscv_k
    baseline = args.baseline_out or str(Path(args.out).with_name("logistic.json"))
    return pipeline.stage_train(
        args.features, split, grid, args.out, baseline,
        tuning_enabled=tuning, tscv_k=k, logistic_l2=args.logistic_l2,
    )


def _cmd_tune_threshold(args) -> dict:
    return pipeline.stage_tune_threshold(args.model, args.features, out_model=args.out)


def _cmd_evaluate(args) -> dict:
    return pipeline.stage_evaluate(
        args.model, args.features, args.out,
        plots_dir=args.plots, out_table2=args.table2, out_table3=args.table3,
        logistic_path=args.logistic, partition=args.partition,
    )


def _cmd_stratify(args) -> dict:
    market = load_cache(args.market)
    cfg = LabelConfig(horizon=args.horizon, car_threshold=args.car_threshold)
    horizons = [int(h) for h in args.horizons.split(",") if h.strip()]
    return pipeline.stage_stratify(
        args.events, market, args.out,
        label_cfg=cfg, horizons=horizons, regime_path=args.regime, out_summary=args.summary,
    )


def _cmd_synth(args) -> dict:
    if args.config:
        cfg = synth.SynthConfig.from_dict(json.loads(Path(args.config).read_text()))
    else:
        cfg = synth.SynthConfig()
    truth = synth.generate(cfg, args.out)
    return synth.describe(truth)


def _cmd_run_all(args) -> dict:
    cfg = pipeline.load_pipeline_config(args.config, output_dir=args.out)
    if args.jobs is not None:
        cfg.jobs = args.jobs
    bundle = pipeline.run_all(cfg)
    return {"bundle": str(bundle)}


def _cmd_report(args) -> dict:
    out = args.out or str(Path(args.bundle) / "report.md")
    path = pipeline.build_report(args.bundle, out)
    return {"report": str(path)}


_COMMANDS = {
    "parse": _cmd_parse,
    "ingest": _cmd_ingest,
    "label": _cmd_label,
    "features": _cmd_features,
    "train": _cmd_train,
    "tune-threshold": _cmd_tune_threshold,
    "evaluate": _cmd_evaluate,
    "stratify": _cmd_stratify,
    "synth": _cmd_synth,
    "run-all": _cmd_run_all,
    "report": _cmd_report,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        info = _COMMANDS[args.command](args)
    except PipelineError as exc:
        log.error("%s", exc)
        return exc.exit_code
    except OSError as exc:
        log.error("%s", exc)
        return 3
    print(json.dumps(info, sort_keys=True, default=str))
    return 0


if __name__ == "__main__":
    sys.exit(main())
