"""Classification metrics: rank AUC, ROC, confusion counts, calibration.

AUC is the Mann-Whitney rank statistic with ties counted one half, which
equals the trapezoidal area under the ROC built from distinct-score
thresholds.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import MetricError, ValidationError

log = logging.getLogger(__name__)


def _check_two_classes(labels: np.ndarray) -> tuple[int, int]:
    n_pos = int((labels > 0.5).sum())
    n_neg = int((labels <= 0.5).sum())
    if n_pos == 0 or n_neg == 0:
        raise MetricError("metric undefined with a single label class")
    return n_pos, n_neg


def auc(scores, labels) -> float:
    """Rank-based AUC; tied scores contribute one half."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels, dtype=float)
    n_pos, n_neg = _check_two_classes(labels)
    order = np.argsort(scores, kind="mergesort")
    s = scores[order]
    ranks = np.empty(len(s))
    i = 0
    while i < len(s):
        j = i
        while j + 1 < len(s) and s[j + 1] == s[i]:
            j += 1
        ranks[i : j + 1] = 0.5 * (i + j) + 1.0  # average of 1-based ranks i+1..j+1
        i = j + 1
    pos_rank_sum = float(ranks[labels[order] > 0.5].sum())
    return (pos_rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def roc_points(scores, labels) -> list[tuple[float, float]]:
    """(fpr, tpr) at every distinct-score threshold, descending, from (0,0) to (1,1)."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels, dtype=float)
    n_pos, n_neg = _check_two_classes(labels)
    order = np.argsort(-scores, kind="mergesort")
    s = scores[order]
    pos = labels[order] > 0.5
    tps = np.cumsum(pos)
    fps = np.cumsum(~pos)
    group_ends = np.flatnonzero(np.diff(s) != 0)
    idx = np.r_[group_ends, len(s) - 1]
    return [(0.0, 0.0)] + [(float(fps[i]) / n_neg, float(tps[i]) / n_pos) for i in idx]


def trapezoid_area(points: list[tuple[float, float]]) -> float:
    area = 0.0
    for (x0, y0), (x1, y1) in zip(points, points[1:]):
        area += (x1 - x0) * (y0 + y1) / 2.0
    return area


@dataclass
class ConfusionResult:
    tp: int
    fp: int
    tn: int
    fn: int
    precision: float
    recall: float
    f1: float
    precision_defined: bool

    @property
    def n(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


def classify_and_count(scores, labels, tau: float) -> ConfusionResult:
    """Confusion counts and P/R/F1 with predicted positive iff score >= tau."""
    if not (0.0 < tau < 1.0):
        raise ValidationError(f"threshold must be in (0, 1), got {tau}")
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels, dtype=float)
    pred = scores >= tau
    actual = labels > 0.5
    tp = int(np.sum(pred & actual))
    fp = int(np.sum(pred & ~actual))
    tn = int(np.sum(~pred & ~actual))
    fn = int(np.sum(~pred & actual))
    precision_defined = (tp + fp) > 0
    precision = tp / (tp + fp) if precision_defined else 0.0
    recall = tp / (tp + fn) if (tp + fn) > 0 else 0.0
    f1 = 2 * tp / (2 * tp + fp + fn) if (2 * tp + fp + fn) > 0 else 0.0
    if not precision_defined:
        log.warning("classify_and_count: no predicted positives at tau=%s; precision reported as 0", tau)
    return ConfusionResult(tp, fp, tn, fn, precision, recall, f1, precision_defined)


def calibration(scores, labels, n_bins: int = 10) -> list[dict]:
    """Equal-width probability bins; empty bins are kept with null rates."""
    if n_bins < 2:
        raise ValidationError("calibration needs n_bins >= 2")
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels, dtype=float)
    bins = []
    if len(scores):
        which = np.minimum((scores * n_bins).astype(int), n_bins - 1)
    else:
        which = np.array([], dtype=int)
    for b in range(n_bins):
        lo, hi = b / n_bins, (b + 1) / n_bins
        mask = which == b
        count = int(mask.sum())
        bins.append(
            {
                "bin_lo": lo,
                "bin_hi": hi,
                "mean_predicted": float(scores[mask].mean()) if count else None,
                "actual_rate": float(labels[mask].mean()) if count else None,
                "count": count,
            }
        )
    return bins


def score_histogram(scores, n_bins: int = 20) -> list[dict]:
    scores = np.asarray(scores, dtype=float)
    if len(scores):
        which = np.minimum((scores * n_bins).astype(int), n_bins - 1)
        counts = np.bincount(which, minlength=n_bins)
    else:
        counts = np.zeros(n_bins, dtype=int)
    return [
        {"bin_lo": b / n_bins, "bin_hi": (b + 1) / n_bins, "count": int(counts[b])}
        for b in range(n_bins)
    ]


def importance_report(feature_gain, columns: list[str]) -> list[tuple[str, float]]:
    """Features by descending normalized gain; ties keep column order."""
    gain = np.asarray(feature_gain, dtype=float)
    if gain.sum() <= 0:
        log.warning("importance_report: model has no splits; empty ranking")
        return []
    order = sorted(range(len(columns)), key=lambda i: (-gain[i], i))
    return [(columns[i], float(gain[i])) for i in order]


@dataclass
class EvaluationReport:
    auc: float
    threshold: float
    precision: float
    recall: float
    f1: float
    confusion: ConfusionResult
    roc: list[tuple[float, float]]
    calibration_bins: list[dict]
    score_hist: list[dict]
    importance: list[tuple[str, float]]
    n: int

    def to_dict(self) -> dict:
        return {
            "auc": self.auc,
            "threshold": self.threshold,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "confusion": {
                "tp": self.confusion.tp,
                "fp": self.confusion.fp,
                "tn": self.confusion.tn,
                "fn": self.confusion.fn,
                "precision_defined": self.confusion.precision_defined,
            },
            "roc_points": [[x, y] for x, y in self.roc],
            "calibration_bins": self.calibration_bins,
            "score_histogram": self.score_hist,
            "importance": [[name, g] for name, g in self.importance],
            "n": self.n,
        }


def evaluate_scores(
    scores,
    labels,
    threshold: float,
    feature_gain=None,
    columns: list[str] | None = None,
) -> EvaluationReport:
    """Full metric bundle for one scored sample at one decision threshold."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels, dtype=float)
    confusion = classify_and_count(scores, labels, threshold)
    importance = importance_report(feature_gain, columns) if feature_gain is not None else []
    return EvaluationReport(
        auc=auc(scores, labels),
        threshold=threshold,
        precision=confusion.precision,
        recall=confusion.recall,
        f1=confusion.f1,
        confusion=confusion,
        roc=roc_points(scores, labels),
        calibration_bins=calibration(scores, labels),
        score_hist=score_histogram(scores),
        importance=importance,
        n=confusion.n,
    )
