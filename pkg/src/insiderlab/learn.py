"""Model training: temporal split, GBM and logistic baseline, tuning, threshold.

The temporal split is by disclosure date with inclusive upper bounds. Time-
series cross-validation uses expanding-window folds on the date-sorted
training rows. The decision threshold is tuned on validation F1 over the grid
{0.01, ..., 0.99}, largest threshold winning ties.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, replace
from datetime import date
from pathlib import Path

import numpy as np

from .errors import (
    ConfigurationError,
    DegenerateLabelError,
    ShapeError,
    ThresholdError,
    TuningError,
    ValidationError,
)
from .evaluate import auc
from .features import FEATURE_COLUMNS, FeatureMatrix
from .gbm import GbmConfig, GbmModel, fit_gbm, sigmoid

log = logging.getLogger(__name__)

MODEL_FORMAT_VERSION = 1

THRESHOLD_GRID = [round(i / 100.0, 2) for i in range(1, 100)]


@dataclass(frozen=True)
class SplitSpec:
    train_end: date = date(2022, 12, 31)
    valid_end: date = date(2023, 12, 31)
    test_end: date = date(2024, 12, 31)

    def __post_init__(self):
        if not (self.train_end < self.valid_end < self.test_end):
            raise ValidationError("split requires train_end < valid_end < test_end")

    def to_dict(self) -> dict:
        return {
            "train_end": self.train_end.isoformat(),
            "valid_end": self.valid_end.isoformat(),
            "test_end": self.test_end.isoformat(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SplitSpec":
        return cls(
            train_end=date.fromisoformat(d["train_end"]),
            valid_end=date.fromisoformat(d["valid_end"]),
            test_end=date.fromisoformat(d["test_end"]),
        )


def _subset(matrix: FeatureMatrix, mask: np.ndarray) -> FeatureMatrix:
    idx = np.flatnonzero(mask)
    return FeatureMatrix(
        X=matrix.X[idx],
        y=matrix.y[idx],
        event_keys=[matrix.event_keys[i] for i in idx],
        disclosure_dates=[matrix.disclosure_dates[i] for i in idx],
    )


def temporal_split(matrix: FeatureMatrix, spec: SplitSpec) -> tuple[FeatureMatrix, FeatureMatrix, FeatureMatrix]:
    """Partition rows by disclosure date; boundary rows go to the earlier side."""
    dates = np.array(matrix.disclosure_dates)
    train = dates <= spec.train_end
    valid = (dates > spec.train_end) & (dates <= spec.valid_end)
    test = (dates > spec.valid_end) & (dates <= spec.test_end)
    beyond = int((dates > spec.test_end).sum()) if matrix.n else 0
    if beyond:
        log.warning("temporal_split: dropping %d rows dated after test_end", beyond)
    parts = {"train": train, "valid": valid, "test": test}
    for name, mask in parts.items():
        if not mask.any():
            raise ConfigurationError(f"temporal split produced an empty {name} partition")
    return _subset(matrix, train), _subset(matrix, valid), _subset(matrix, test)


# -- logistic baseline ---------------------------------------------------------


@dataclass
class LogisticModel:
    coef: np.ndarray  # one weight per feature column, 0 for dropped columns
    intercept: float
    mean: np.ndarray
    std: np.ndarray  # 1.0 for dropped columns
    kept: np.ndarray  # bool mask of columns used in the fit
    l2: float
    n_iter: int

    def predict(self, X: np.ndarray) -> np.ndarray:
        if X.ndim != 2 or X.shape[1] != self.coef.size:
            raise ShapeError(f"expected {self.coef.size} feature columns, got {X.shape}")
        z = (X - self.mean) / self.std @ self.coef + self.intercept
        return sigmoid(z)


def train_logistic(X: np.ndarray, y: np.ndarray, l2: float = 1.0, max_iter: int = 500, tol: float = 1e-8) -> LogisticModel:
    """L2-regularized logistic regression by Newton iterations on standardized features."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if np.unique(y).size < 2:
        raise DegenerateLabelError("logistic training labels contain a single class")
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    kept = std > 0
    if not kept.all():
        log.warning("train_logistic: dropping %d zero-variance columns", int((~kept).sum()))
    std_safe = np.where(kept, std, 1.0)
    Xs = ((X - mean) / std_safe)[:, kept]
    n, k = Xs.shape
    Xd = np.column_stack([np.ones(n), Xs])
    w = np.zeros(k + 1)
    reg = np.full(k + 1, l2)
    reg[0] = 0.0  # intercept unpenalized
    n_iter = 0
    for n_iter in range(1, max_iter + 1):
        p = sigmoid(Xd @ w)
        grad = Xd.T @ (p - y) + reg * w
        if np.linalg.norm(grad) < tol:
            break
        wdiag = p * (1.0 - p)
        H = (Xd.T * wdiag) @ Xd + np.diag(reg + 1e-12)
        w = w - np.linalg.solve(H, grad)
    coef = np.zeros(X.shape[1])
    coef[kept] = w[1:]
    return LogisticModel(
        coef=coef, intercept=float(w[0]), mean=mean, std=std_safe, kept=kept, l2=l2, n_iter=n_iter
    )


# -- model artifact --------------------------------------------------------------


@dataclass
class ModelArtifact:
    """Trained GBM plus everything needed to score new rows from file."""

    model: GbmModel
    threshold: float
    columns: list[str]
    split: SplitSpec

    @property
    def feature_gain(self) -> np.ndarray:
        return self.model.feature_gain

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != len(self.columns):
            raise ShapeError(f"expected {len(self.columns)} feature columns, got {X.shape}")
        if len(X) == 0:
            return np.array([])
        return self.model.predict(X)

    def to_dict(self) -> dict:
        return {
            "format_version": MODEL_FORMAT_VERSION,
            "model_type": "gbm",
            "trees": self.model.trees,
            "base_score": self.model.base_score,
            "threshold": self.threshold,
            "feature_gain": [float(v) for v in self.model.feature_gain],
            "config": self.model.config.to_dict(),
            "columns": self.columns,
            "split": self.split.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelArtifact":
        if d.get("format_version") != MODEL_FORMAT_VERSION:
            raise ValidationError(f"unsupported model format_version {d.get('format_version')}")
        model = GbmModel(
            trees=d["trees"],
            base_score=float(d["base_score"]),
            feature_gain=np.array(d["feature_gain"], dtype=float),
            config=GbmConfig.from_dict(d["config"]),
        )
        return cls(
            model=model,
            threshold=float(d["threshold"]),
            columns=list(d["columns"]),
            split=SplitSpec.from_dict(d["split"]),
        )


def save_model(artifact: ModelArtifact, path) -> None:
    Path(path).write_text(json.dumps(artifact.to_dict(), sort_keys=True) + "\n")


def load_model(path) -> ModelArtifact:
    return ModelArtifact.from_dict(json.loads(Path(path).read_text()))


def train_gbm(train: FeatureMatrix, cfg: GbmConfig, split: SplitSpec | None = None) -> ModelArtifact:
    """Fit the boosted ensemble on a training partition."""
    if train.X.shape[1] != len(FEATURE_COLUMNS):
        raise ShapeError(f"expected {len(FEATURE_COLUMNS)} feature columns, got {train.X.shape}")
    model = fit_gbm(train.X, train.y, cfg)
    return ModelArtifact(
        model=model,
        threshold=0.5,
        columns=list(FEATURE_COLUMNS),
        split=split or SplitSpec(),
    )


# -- time-series cross-validation --------------------------------------------------


def tscv_folds(n: int, k: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """Expanding-window folds over date-sorted rows: k (train, valid) index pairs."""
    if k < 2:
        raise TuningError("time-series cross-validation needs k >= 2")
    bounds = [int(np.floor(n * i / (k + 1))) for i in range(k + 2)]
    folds = []
    for i in range(1, k + 1):
        train_idx = np.arange(0, bounds[i])
        valid_idx = np.arange(bounds[i], bounds[i + 1])
        if train_idx.size == 0 or valid_idx.size == 0:
            raise TuningError(f"k={k} leaves an empty slice for {n} rows")
        folds.append((train_idx, valid_idx))
    return folds


def tscv_tune(train: FeatureMatrix, grid: list[GbmConfig], k: int = 3) -> GbmConfig:
    """Pick the grid config with the best mean expanding-window validation AUC.

    Single-class folds are skipped; ties break toward smaller n_trees, then
    smaller max_depth.
    """
    if not grid:
        raise TuningError("empty tuning grid")
    order = np.lexsort((np.arange(train.n), np.array(train.disclosure_dates)))
    X, y = train.X[order], train.y[order]
    folds = tscv_folds(len(y), k)
    usable = [
        (tr, va)
        for tr, va in folds
        if np.unique(y[tr]).size == 2 and np.unique(y[va]).size == 2
    ]
    if not usable:
        raise TuningError("every cross-validation fold is single-class")

    best_cfg, best_key = None, None
    for cfg in grid:
        scores = []
        for tr, va in usable:
            model = fit_gbm(X[tr], y[tr], cfg)
            scores.append(auc(model.predict(X[va]), y[va]))
        key = (float(np.mean(scores)), -cfg.n_trees, -cfg.max_depth)
        if best_key is None or key > best_key:
            best_cfg, best_key = cfg, key
    log.info("tscv_tune: best mean AUC %.4f with %s", best_key[0], best_cfg)
    return best_cfg


# -- threshold optimization -----------------------------------------------------------


def f1_at_threshold(scores: np.ndarray, labels: np.ndarray, tau: float) -> float:
    pred = scores >= tau
    tp = float(np.sum(pred & (labels > 0.5)))
    fp = float(np.sum(pred & (labels <= 0.5)))
    fn = float(np.sum(~pred & (labels > 0.5)))
    denom = 2.0 * tp + fp + fn
    return 2.0 * tp / denom if denom > 0 else 0.0


def optimize_threshold(scores: np.ndarray, labels: np.ndarray) -> float:
    """Grid-search tau in {0.01..0.99} maximizing F1; largest tau wins ties."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels, dtype=float)
    if not (labels > 0.5).any():
        raise ThresholdError("threshold optimization needs at least one positive label")
    if not (labels <= 0.5).any():
        raise ThresholdError("threshold optimization needs at least one negative label")
    best_tau, best_f1 = THRESHOLD_GRID[0], -1.0
    for tau in THRESHOLD_GRID:
        f1 = f1_at_threshold(scores, labels, tau)
        if f1 >= best_f1:
            best_tau, best_f1 = tau, f1
    return best_tau


def tune_threshold(artifact: ModelArtifact, matrix: FeatureMatrix) -> ModelArtifact:
    """Re-derive the decision threshold on the validation partition."""
    _, valid, _ = temporal_split(matrix, artifact.split)
    scores = artifact.predict(valid.X)
    tau = optimize_threshold(scores, valid.y)
    return replace(artifact, threshold=tau)
