from datetime import date, timedelta

import numpy as np
import pytest

from insiderlab.errors import (
    ConfigurationError,
    DegenerateLabelError,
    ShapeError,
    ThresholdError,
    TuningError,
)
from insiderlab.evaluate import auc
from insiderlab.features import FEATURE_COLUMNS, FeatureMatrix
from insiderlab.gbm import GbmConfig, bin_matrix, fit_gbm, quantile_bin_edges, sigmoid
from insiderlab.learn import (
    THRESHOLD_GRID,
    ModelArtifact,
    SplitSpec,
    f1_at_threshold,
    load_model,
    optimize_threshold,
    save_model,
    temporal_split,
    train_gbm,
    train_logistic,
    tscv_folds,
    tscv_tune,
    tune_threshold,
)


def matrix_from(X, y, start=date(2020, 1, 1)):
    n = len(y)
    dates = [start + timedelta(days=i) for i in range(n)]
    return FeatureMatrix(
        X=np.asarray(X, dtype=float),
        y=np.asarray(y, dtype=float),
        event_keys=[f"k{i}" for i in range(n)],
        disclosure_dates=dates,
    )


def xor_dataset(n, seed, noise=0.0):
    rng = np.random.default_rng(seed)
    X = rng.normal(0, 1, size=(n, 12))
    y = ((X[:, 0] > 0) ^ (X[:, 1] > 0)).astype(float)
    if noise:
        flip = rng.random(n) < noise
        y[flip] = 1 - y[flip]
    return X, y


class TestTemporalSplit:
    def spec(self):
        return SplitSpec(date(2022, 12, 31), date(2023, 12, 31), date(2024, 12, 31))

    def test_one_row_per_partition(self):
        m = FeatureMatrix(
            X=np.zeros((3, 12)),
            y=np.array([0.0, 1.0, 0.0]),
            event_keys=["a", "b", "c"],
            disclosure_dates=[date(2020, 5, 1), date(2023, 5, 1), date(2024, 5, 1)],
        )
        train, valid, test = temporal_split(m, self.spec())
        assert (train.n, valid.n, test.n) == (1, 1, 1)

    def test_empty_partition_is_config_error(self):
        m = FeatureMatrix(
            X=np.zeros((2, 12)),
            y=np.array([0.0, 1.0]),
            event_keys=["a", "b"],
            disclosure_dates=[date(2024, 5, 1), date(2024, 6, 1)],
        )
        with pytest.raises(ConfigurationError, match="train"):
            temporal_split(m, self.spec())

    def test_boundary_row_goes_to_train(self):
        m = FeatureMatrix(
            X=np.zeros((3, 12)),
            y=np.array([0.0, 1.0, 0.0]),
            event_keys=["a", "b", "c"],
            disclosure_dates=[date(2022, 12, 31), date(2023, 5, 1), date(2024, 5, 1)],
        )
        train, _, _ = temporal_split(m, self.spec())
        assert train.event_keys == ["a"]

    def test_invalid_spec(self):
        from insiderlab.errors import ValidationError

        with pytest.raises(ValidationError):
            SplitSpec(date(2024, 1, 1), date(2023, 1, 1), date(2025, 1, 1))


class TestLogistic:
    def test_separable_ordering(self):
        X = np.linspace(-2, 2, 40).reshape(-1, 1)
        y = (X[:, 0] > 0).astype(float)
        model = train_logistic(X, y)
        scores = model.predict(X)
        assert scores[y == 1].min() > scores[y == 0].max()

    def test_zero_variance_column_dropped(self, caplog):
        rng = np.random.default_rng(0)
        X = np.column_stack([rng.normal(0, 1, 100), np.full(100, 3.0)])
        y = (X[:, 0] > 0).astype(float)
        with caplog.at_level("WARNING"):
            model = train_logistic(X, y)
        assert model.coef[1] == 0.0
        assert "zero-variance" in caplog.text

    def test_single_class_raises(self):
        X = np.zeros((10, 2))
        with pytest.raises(DegenerateLabelError):
            train_logistic(X, np.ones(10))

    def test_converges_quickly(self):
        rng = np.random.default_rng(1)
        X = rng.normal(0, 1, (500, 4))
        logits = X @ np.array([0.5, -1.0, 0.2, 0.0])
        y = (rng.random(500) < sigmoid(logits)).astype(float)
        model = train_logistic(X, y)
        assert model.n_iter < 50


class TestGbm:
    def test_zero_trees_predicts_base_rate(self):
        rng = np.random.default_rng(2)
        X = rng.normal(0, 1, (200, 12))
        y = (rng.random(200) < 0.3).astype(float)
        model = fit_gbm(X, y, GbmConfig(n_trees=0))
        assert np.allclose(model.predict(X), y.mean(), atol=1e-12)

    def test_xor_advantage(self):
        X, y = xor_dataset(2000, seed=3)
        Xt, yt = xor_dataset(1000, seed=4)
        # the planted rule itself separates both samples perfectly
        assert (((X[:, 0] > 0) ^ (X[:, 1] > 0)).astype(float) == y).all()
        assert (((Xt[:, 0] > 0) ^ (Xt[:, 1] > 0)).astype(float) == yt).all()
        gbm = fit_gbm(X, y, GbmConfig(seed=0))
        gbm_auc = auc(gbm.predict(Xt), yt)
        logi = train_logistic(X, y)
        logi_auc = auc(logi.predict(Xt), yt)
        assert gbm_auc >= 0.95
        assert logi_auc <= 0.60

    def test_bit_identical_with_same_seed(self):
        X, y = xor_dataset(500, seed=5, noise=0.1)
        cfg = GbmConfig(n_trees=30, subsample=0.7, seed=11)
        m1 = fit_gbm(X, y, cfg)
        m2 = fit_gbm(X, y, cfg)
        assert m1.trees == m2.trees
        assert m1.base_score == m2.base_score
        assert np.array_equal(m1.feature_gain, m2.feature_gain)

    def test_train_loss_monotone_with_full_sample(self):
        X, y = xor_dataset(800, seed=6, noise=0.05)
        model = fit_gbm(X, y, GbmConfig(n_trees=60, subsample=1.0))
        losses = np.array(model.train_loss)
        assert (np.diff(losses) <= 1e-12).all()

    def test_feature_gain_normalized_and_permutation_invariant(self):
        X, y = xor_dataset(600, seed=7, noise=0.05)
        cfg = GbmConfig(n_trees=20)
        m1 = fit_gbm(X, y, cfg)
        assert m1.feature_gain.sum() == pytest.approx(1.0, abs=1e-12)
        assert (m1.feature_gain >= 0).all()
        rng = np.random.default_rng(8)
        perm = rng.permutation(len(y))
        m2 = fit_gbm(X[perm], y[perm], cfg)
        assert np.allclose(m1.feature_gain, m2.feature_gain, atol=1e-9)

    def test_monotone_transform_invariance(self):
        X, y = xor_dataset(600, seed=9, noise=0.05)
        cfg = GbmConfig(n_trees=25)
        base = fit_gbm(X, y, cfg)
        Xt = X.copy()
        Xt[:, 3] = Xt[:, 3] ** 3  # strictly increasing on the real line
        transformed = fit_gbm(Xt, y, cfg)
        assert np.allclose(base.predict(X), transformed.predict(Xt), atol=1e-12)

    def test_scores_strictly_inside_unit_interval(self):
        X, y = xor_dataset(400, seed=10)
        model = fit_gbm(X, y, GbmConfig(n_trees=40))
        scores = model.predict(X)
        assert (scores > 0).all() and (scores < 1).all()

    def test_degenerate_labels_raise(self):
        X = np.random.default_rng(0).normal(size=(50, 12))
        with pytest.raises(DegenerateLabelError):
            fit_gbm(X, np.zeros(50), GbmConfig())

    def test_no_split_yields_base_only_model(self):
        # constant features: no candidate split anywhere
        X = np.ones((100, 12))
        y = np.array([0.0, 1.0] * 50)
        model = fit_gbm(X, y, GbmConfig())
        assert model.trees == []
        assert np.allclose(model.predict(X), 0.5)

    def test_binning_respects_left_closed_rule(self):
        X = np.array([[1.0], [2.0], [2.0], [3.0], [4.0]])
        edges = quantile_bin_edges(X, 4)
        binned = bin_matrix(X, edges)
        # every value <= edge j must land in a bin index <= j
        for j, e in enumerate(edges[0]):
            assert ((X[:, 0] <= e) == (binned[:, 0] <= j)).all()

    def test_large_boosts_separate_deterministic_labels(self):
        rng = np.random.default_rng(12)
        X = rng.normal(0, 1, (600, 12))
        y = (X[:, 2] + 0.5 * X[:, 5] > 0).astype(float)
        model = fit_gbm(X, y, GbmConfig(n_trees=300, learning_rate=0.1))
        assert auc(model.predict(X), y) > 0.999


class TestArtifact:
    def make_artifact(self):
        X, y = xor_dataset(400, seed=13, noise=0.1)
        m = matrix_from(X, y)
        return train_gbm(m, GbmConfig(n_trees=15), split=SplitSpec()), m

    def test_predict_shape_checks(self):
        artifact, m = self.make_artifact()
        with pytest.raises(ShapeError):
            artifact.predict(np.zeros((5, 3)))
        assert artifact.predict(np.empty((0, 12))).size == 0

    def test_json_round_trip(self, tmp_path):
        artifact, m = self.make_artifact()
        path = tmp_path / "model.json"
        save_model(artifact, path)
        loaded = load_model(path)
        assert np.array_equal(loaded.predict(m.X), artifact.predict(m.X))
        assert loaded.threshold == artifact.threshold
        assert loaded.columns == FEATURE_COLUMNS
        assert np.allclose(loaded.feature_gain, artifact.feature_gain)


class TestTscv:
    def test_fold_structure(self):
        folds = tscv_folds(100, 4)
        assert len(folds) == 4
        for tr, va in folds:
            assert tr[-1] + 1 == va[0]
            assert len(va) > 0

    def test_grid_of_one(self):
        X, y = xor_dataset(300, seed=14, noise=0.1)
        cfg = GbmConfig(n_trees=10)
        assert tscv_tune(matrix_from(X, y), [cfg], k=3) == cfg

    def test_learner_beats_base_only(self):
        X, y = xor_dataset(900, seed=15, noise=0.05)
        m = matrix_from(X, y)
        base_only = GbmConfig(n_trees=0)
        learner = GbmConfig(n_trees=40)
        best = tscv_tune(m, [base_only, learner], k=3)
        assert best == learner
        # oracle: direct fold AUC comparison reproduces the choice
        folds = tscv_folds(m.n, 3)
        for cfg in (learner,):
            aucs = []
            for tr, va in folds:
                model = fit_gbm(m.X[tr], m.y[tr], cfg)
                aucs.append(auc(model.predict(m.X[va]), m.y[va]))
            assert np.mean(aucs) > 0.5

    def test_infeasible_k(self):
        X, y = xor_dataset(6, seed=16)
        with pytest.raises(TuningError):
            tscv_folds(3, 10)

    def test_tie_breaks_toward_smaller_model(self):
        # constant features: every config scores identically (all base-only)
        X = np.ones((200, 12))
        y = np.array([0.0, 1.0] * 100)
        m = matrix_from(X, y)
        big = GbmConfig(n_trees=50, max_depth=6)
        small = GbmConfig(n_trees=10, max_depth=2)
        assert tscv_tune(m, [big, small], k=2) == small


class TestThreshold:
    def brute_force(self, scores, labels):
        best_tau, best_f1 = None, -1.0
        for tau in THRESHOLD_GRID:
            f1 = f1_at_threshold(np.asarray(scores), np.asarray(labels), tau)
            if f1 >= best_f1:
                best_tau, best_f1 = tau, f1
        return best_tau

    def test_spec_example(self):
        assert optimize_threshold([0.9, 0.8, 0.1], [1, 1, 0]) == pytest.approx(0.80)

    def test_perfect_scores_tie_break(self):
        assert optimize_threshold([0.0, 1.0, 1.0, 0.0], [0, 1, 1, 0]) == pytest.approx(0.99)

    def test_all_negative_raises(self):
        with pytest.raises(ThresholdError):
            optimize_threshold([0.5, 0.6], [0, 0])

    def test_matches_brute_force_on_random_sets(self):
        rng = np.random.default_rng(17)
        for _ in range(60):
            n = int(rng.integers(5, 60))
            scores = np.round(rng.random(n), 3)
            labels = (rng.random(n) < 0.4).astype(float)
            if labels.min() == labels.max():
                continue
            assert optimize_threshold(scores, labels) == self.brute_force(scores, labels)

    def test_tune_threshold_uses_validation_partition(self):
        rng = np.random.default_rng(18)
        n = 900
        X = rng.normal(0, 1, (n, 12))
        y = (X[:, 0] > 0).astype(float)
        dates = (
            [date(2021, 1, 1) + timedelta(days=i) for i in range(500)]
            + [date(2023, 2, 1) + timedelta(days=i) for i in range(200)]
            + [date(2024, 2, 1) + timedelta(days=i) for i in range(200)]
        )
        m = FeatureMatrix(X=X, y=y, event_keys=[f"k{i}" for i in range(n)], disclosure_dates=dates)
        artifact = train_gbm(
            FeatureMatrix(X=X[:500], y=y[:500], event_keys=m.event_keys[:500], disclosure_dates=dates[:500]),
            GbmConfig(n_trees=30),
            split=SplitSpec(),
        )
        tuned = tune_threshold(artifact, m)
        valid_scores = artifact.predict(X[500:700])
        assert tuned.threshold == optimize_threshold(valid_scores, y[500:700])
