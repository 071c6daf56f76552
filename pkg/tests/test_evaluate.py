import numpy as np
import pytest

from insiderlab.errors import MetricError, ValidationError
from insiderlab.evaluate import (
    auc,
    calibration,
    classify_and_count,
    evaluate_scores,
    importance_report,
    roc_points,
    score_histogram,
    trapezoid_area,
)


def brute_force_auc(scores, labels):
    scores = np.asarray(scores, dtype=float)
    pos = scores[np.asarray(labels) > 0.5]
    neg = scores[np.asarray(labels) <= 0.5]
    total = 0.0
    for p in pos:
        for q in neg:
            total += 1.0 if p > q else (0.5 if p == q else 0.0)
    return total / (len(pos) * len(neg))


class TestAuc:
    def test_perfect_ranking(self):
        assert auc([0.9, 0.1], [1, 0]) == 1.0

    def test_all_ties_is_half(self):
        assert auc([0.4] * 6, [1, 0, 1, 0, 0, 1]) == 0.5

    def test_matches_brute_force_with_ties(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            n = int(rng.integers(4, 50))
            scores = np.round(rng.random(n), 1)  # coarse grid forces ties
            labels = (rng.random(n) < 0.5).astype(float)
            if labels.min() == labels.max():
                continue
            assert auc(scores, labels) == pytest.approx(brute_force_auc(scores, labels), abs=1e-12)

    def test_single_class_raises(self):
        with pytest.raises(MetricError):
            auc([0.5, 0.6], [1, 1])

    def test_complement_identity(self):
        rng = np.random.default_rng(1)
        scores = rng.random(80)
        labels = (rng.random(80) < 0.3).astype(float)
        assert auc(scores, labels) + auc(scores, 1 - labels) == pytest.approx(1.0, abs=1e-12)

    def test_invariant_under_monotone_transform(self):
        rng = np.random.default_rng(2)
        scores = rng.random(60)
        labels = (rng.random(60) < 0.4).astype(float)
        assert auc(scores, labels) == pytest.approx(auc(np.exp(3 * scores), labels), abs=1e-12)

    def test_trapezoid_equals_rank_auc(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            n = int(rng.integers(4, 500))
            scores = np.round(rng.random(n), 2)
            labels = (rng.random(n) < 0.4).astype(float)
            if labels.min() == labels.max():
                continue
            points = roc_points(scores, labels)
            assert trapezoid_area(points) == pytest.approx(auc(scores, labels), abs=1e-12)

    def test_roc_monotone(self):
        rng = np.random.default_rng(4)
        scores = rng.random(100)
        labels = (rng.random(100) < 0.5).astype(float)
        pts = roc_points(scores, labels)
        assert pts[0] == (0.0, 0.0) and pts[-1] == (1.0, 1.0)
        xs = [x for x, _ in pts]
        ys = [y for _, y in pts]
        assert xs == sorted(xs) and ys == sorted(ys)


class TestConfusion:
    def test_hand_enumerated_case(self):
        res = classify_and_count([0.9, 0.8, 0.1, 0.2], [1, 0, 0, 1], 0.5)
        assert (res.tp, res.fp, res.tn, res.fn) == (1, 1, 1, 1)
        assert res.precision == 0.5 and res.recall == 0.5 and res.f1 == 0.5

    def test_threshold_above_all_scores(self):
        res = classify_and_count([0.1, 0.2], [1, 0], 0.9)
        assert res.tp == 0 and res.fp == 0
        assert res.precision == 0.0 and not res.precision_defined
        assert res.recall == 0.0

    def test_threshold_below_all_scores(self):
        res = classify_and_count([0.5, 0.6, 0.7, 0.8], [0, 1, 0, 1], 0.01)
        assert res.recall == 1.0
        assert res.precision == 0.5  # base rate

    def test_counts_partition_n(self):
        rng = np.random.default_rng(5)
        scores = rng.random(200)
        labels = (rng.random(200) < 0.3).astype(float)
        res = classify_and_count(scores, labels, 0.4)
        assert res.n == 200

    def test_invalid_tau(self):
        with pytest.raises(ValidationError):
            classify_and_count([0.5], [1], 1.5)

    def test_metrics_step_only_at_observed_scores(self):
        scores = np.array([0.2, 0.4, 0.6, 0.8])
        labels = np.array([0.0, 1.0, 0.0, 1.0])
        # two thresholds strictly between the same adjacent scores
        a = classify_and_count(scores, labels, 0.45)
        b = classify_and_count(scores, labels, 0.55)
        assert (a.tp, a.fp, a.tn, a.fn) == (b.tp, b.fp, b.tn, b.fn)


class TestCalibration:
    def test_single_bin_identity(self):
        scores = np.full(100, 0.25)
        labels = np.array([1.0] * 25 + [0.0] * 75)
        bins = calibration(scores, labels)
        b = bins[2]  # [0.2, 0.3)
        assert b["mean_predicted"] == pytest.approx(0.25)
        assert b["actual_rate"] == pytest.approx(0.25)
        assert b["count"] == 100
        assert sum(x["count"] for x in bins) == 100

    def test_statistically_calibrated_scores(self):
        rng = np.random.default_rng(6)
        scores = rng.random(100_000)
        labels = (rng.random(100_000) < scores).astype(float)
        for b in calibration(scores, labels):
            if b["count"]:
                assert abs(b["actual_rate"] - b["mean_predicted"]) <= 0.02

    def test_empty_input_keeps_bins(self):
        bins = calibration(np.array([]), np.array([]))
        assert len(bins) == 10
        assert all(b["count"] == 0 and b["mean_predicted"] is None for b in bins)

    def test_score_histogram_counts(self):
        hist = score_histogram(np.array([0.01, 0.99, 0.5, 0.51]), n_bins=20)
        assert sum(b["count"] for b in hist) == 4


class TestImportance:
    def test_single_feature_dominates(self):
        ranking = importance_report([0.0, 1.0, 0.0], ["a", "b", "c"])
        assert ranking[0] == ("b", 1.0)

    def test_base_only_model_empty(self, caplog):
        with caplog.at_level("WARNING"):
            assert importance_report([0.0, 0.0], ["a", "b"]) == []

    def test_ties_keep_column_order(self):
        ranking = importance_report([0.25, 0.5, 0.25], ["a", "b", "c"])
        assert [name for name, _ in ranking] == ["b", "a", "c"]


def test_evaluate_scores_bundle():
    rng = np.random.default_rng(7)
    scores = rng.random(300)
    labels = (rng.random(300) < scores).astype(float)
    report = evaluate_scores(scores, labels, 0.4, feature_gain=[0.7, 0.3], columns=["x", "y"])
    d = report.to_dict()
    assert d["n"] == 300
    assert d["confusion"]["tp"] + d["confusion"]["fp"] + d["confusion"]["tn"] + d["confusion"]["fn"] == 300
    assert d["importance"][0][0] == "x"
    assert 0.0 <= d["auc"] <= 1.0
    assert len(d["calibration_bins"]) == 10
