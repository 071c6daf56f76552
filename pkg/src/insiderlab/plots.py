"""Figure rendering for the evaluation report.

Every figure is written as an SVG/CSV pair: the CSV carries the plotted data
so results stay inspectable without a plotting stack, and the SVG is rendered
deterministically (fixed hash salt, no embedded timestamps) so reruns are
byte-identical.
"""
from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
matplotlib.rcParams["svg.hashsalt"] = "insiderlab"

import matplotlib.pyplot as plt  # noqa: E402

from .evaluate import ConfusionResult, EvaluationReport  # noqa: E402

_SAVE_KW = {"format": "svg", "metadata": {"Date": None}, "bbox_inches": "tight"}


def _write_csv(path, header: list[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def plot_roc(points: list[tuple[float, float]], auc_value: float, out_base) -> None:
    base = Path(out_base)
    _write_csv(base.with_suffix(".csv"), ["fpr", "tpr"], [[repr(x), repr(y)] for x, y in points])
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.plot([x for x, _ in points], [y for _, y in points], lw=1.5, label=f"model (AUC = {auc_value:.3f})")
    ax.plot([0, 1], [0, 1], ls="--", lw=0.8, color="grey", label="chance")
    ax.set_xlabel("False positive rate")
    ax.set_ylabel("True positive rate")
    ax.set_title("ROC, test partition")
    ax.legend(loc="lower right")
    fig.savefig(base.with_suffix(".svg"), **_SAVE_KW)
    plt.close(fig)


def plot_calibration(bins: list[dict], out_base) -> None:
    base = Path(out_base)
    _write_csv(
        base.with_suffix(".csv"),
        ["bin_lo", "bin_hi", "mean_predicted", "actual_rate", "count"],
        [
            [repr(b["bin_lo"]), repr(b["bin_hi"]),
             "" if b["mean_predicted"] is None else repr(b["mean_predicted"]),
             "" if b["actual_rate"] is None else repr(b["actual_rate"]),
             b["count"]]
            for b in bins
        ],
    )
    filled = [b for b in bins if b["count"] > 0]
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.plot([0, 1], [0, 1], ls="--", lw=0.8, color="grey")
    ax.plot(
        [b["mean_predicted"] for b in filled],
        [b["actual_rate"] for b in filled],
        marker="o",
        lw=1.2,
    )
    ax.set_xlabel("Mean predicted probability")
    ax.set_ylabel("Observed positive rate")
    ax.set_title("Calibration")
    fig.savefig(base.with_suffix(".svg"), **_SAVE_KW)
    plt.close(fig)


def plot_score_histogram(hist: list[dict], out_base) -> None:
    base = Path(out_base)
    _write_csv(
        base.with_suffix(".csv"),
        ["bin_lo", "bin_hi", "count"],
        [[repr(b["bin_lo"]), repr(b["bin_hi"]), b["count"]] for b in hist],
    )
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.bar(
        [b["bin_lo"] for b in hist],
        [b["count"] for b in hist],
        width=[b["bin_hi"] - b["bin_lo"] for b in hist],
        align="edge",
        edgecolor="white",
    )
    ax.set_xlabel("Predicted probability")
    ax.set_ylabel("Count")
    ax.set_title("Score distribution")
    fig.savefig(base.with_suffix(".svg"), **_SAVE_KW)
    plt.close(fig)


def plot_importance(ranking: list[tuple[str, float]], out_base) -> None:
    base = Path(out_base)
    _write_csv(base.with_suffix(".csv"), ["feature", "gain"], [[name, repr(g)] for name, g in ranking])
    fig, ax = plt.subplots(figsize=(6, 4))
    names = [name for name, _ in reversed(ranking)]
    gains = [g for _, g in reversed(ranking)]
    ax.barh(names, gains)
    ax.set_xlabel("Normalized gain")
    ax.set_title("Feature importance")
    fig.savefig(base.with_suffix(".svg"), **_SAVE_KW)
    plt.close(fig)


def plot_confusion(confusion: ConfusionResult, threshold: float, out_base) -> None:
    base = Path(out_base)
    _write_csv(
        base.with_suffix(".csv"),
        ["tp", "fp", "tn", "fn", "threshold"],
        [[confusion.tp, confusion.fp, confusion.tn, confusion.fn, repr(threshold)]],
    )
    grid = [[confusion.tp, confusion.fn], [confusion.fp, confusion.tn]]
    fig, ax = plt.subplots(figsize=(4, 4))
    ax.imshow(grid, cmap="Blues")
    for r in range(2):
        for c in range(2):
            ax.text(c, r, str(grid[r][c]), ha="center", va="center")
    ax.set_xticks([0, 1], ["pred +", "pred -"])
    ax.set_yticks([0, 1], ["actual +", "actual -"])
    ax.set_title(f"Confusion at threshold {threshold:.2f}")
    fig.savefig(base.with_suffix(".svg"), **_SAVE_KW)
    plt.close(fig)


def render_report_figures(report: EvaluationReport, out_dir) -> list[str]:
    """Render the full figure set; returns the written file names."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    plot_roc(report.roc, report.auc, out / "roc")
    plot_calibration(report.calibration_bins, out / "calibration")
    plot_score_histogram(report.score_hist, out / "score_histogram")
    if report.importance:
        plot_importance(report.importance, out / "importance")
    plot_confusion(report.confusion, report.threshold, out / "confusion")
    return sorted(p.name for p in out.iterdir())
