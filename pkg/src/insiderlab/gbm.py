"""Gradient-boosted trees on binary logistic loss with histogram splits.

Each boosting round fits one regression tree to per-row gradient/hessian
statistics, scanning candidate splits over quantile-bin edges precomputed on
the training matrix. Leaf weights are Newton steps -G/(H + l2), scaled by the
learning rate when stored, so prediction is simply sigmoid(base + sum of leaf
values). All reductions run in a fixed order: identical inputs and seed give
bit-identical trees.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateLabelError, ShapeError, ValidationError


@dataclass(frozen=True)
class GbmConfig:
    n_trees: int = 200
    max_depth: int = 4
    learning_rate: float = 0.1
    min_child_weight: float = 5.0
    l2_reg: float = 1.0
    subsample: float = 1.0
    n_bins: int = 64
    seed: int = 7

    def __post_init__(self):
        if self.n_trees < 0:
            raise ValidationError("n_trees must be >= 0")
        for name in ("max_depth", "learning_rate", "min_child_weight", "l2_reg", "n_bins"):
            if getattr(self, name) <= 0:
                raise ValidationError(f"GbmConfig.{name} must be strictly positive")
        if not (0.0 < self.subsample <= 1.0):
            raise ValidationError("subsample must be in (0, 1]")

    def to_dict(self) -> dict:
        return {
            "n_trees": self.n_trees,
            "max_depth": self.max_depth,
            "learning_rate": self.learning_rate,
            "min_child_weight": self.min_child_weight,
            "l2_reg": self.l2_reg,
            "subsample": self.subsample,
            "n_bins": self.n_bins,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GbmConfig":
        return cls(**d)


def sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z, dtype=float)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def log_loss(y: np.ndarray, score: np.ndarray) -> float:
    """Mean binary log loss of raw scores (log-odds)."""
    # log(1 + e^-m) computed stably from the margin m = (2y-1) * score
    margin = np.where(y > 0.5, score, -score)
    return float(np.mean(np.logaddexp(0.0, -margin)))


def quantile_bin_edges(X: np.ndarray, n_bins: int) -> list[np.ndarray]:
    """Per-feature candidate thresholds at training-set quantiles (deduplicated)."""
    qs = np.linspace(0.0, 1.0, n_bins + 1)[1:-1]
    edges = []
    for f in range(X.shape[1]):
        col = X[:, f]
        e = np.unique(np.quantile(col, qs))
        if e.size and e[-1] >= col.max():
            e = e[:-1]  # an edge at the column max sends every row left: useless
        edges.append(e)
    return edges


def bin_matrix(X: np.ndarray, edges: list[np.ndarray]) -> np.ndarray:
    """Bin index per value: row goes left of edge j iff value <= edges[j]."""
    binned = np.empty(X.shape, dtype=np.int32)
    for f, e in enumerate(edges):
        binned[:, f] = np.searchsorted(e, X[:, f], side="left")
    return binned


@dataclass
class _SplitResult:
    gain: float
    feature: int
    edge_idx: int


def _best_split(
    binned: np.ndarray,
    edges: list[np.ndarray],
    rows: np.ndarray,
    g: np.ndarray,
    h: np.ndarray,
    l2: float,
    min_child_weight: float,
) -> _SplitResult | None:
    g_rows, h_rows = g[rows], h[rows]
    G, H = g_rows.sum(), h_rows.sum()
    parent = G * G / (H + l2)
    best: _SplitResult | None = None
    for f in range(binned.shape[1]):
        n_edges = edges[f].size
        if n_edges == 0:
            continue
        b = binned[rows, f]
        hist_g = np.bincount(b, weights=g_rows, minlength=n_edges + 1)
        hist_h = np.bincount(b, weights=h_rows, minlength=n_edges + 1)
        gl = np.cumsum(hist_g)[:-1]
        hl = np.cumsum(hist_h)[:-1]
        gr = G - gl
        hr = H - hl
        ok = (hl >= min_child_weight) & (hr >= min_child_weight)
        if not ok.any():
            continue
        gain = 0.5 * (gl * gl / (hl + l2) + gr * gr / (hr + l2) - parent)
        gain = np.where(ok, gain, -np.inf)
        j = int(np.argmax(gain))
        if gain[j] > 0 and (best is None or gain[j] > best.gain):
            best = _SplitResult(gain=float(gain[j]), feature=f, edge_idx=j)
    return best


def _build_tree(
    binned: np.ndarray,
    edges: list[np.ndarray],
    rows: np.ndarray,
    g: np.ndarray,
    h: np.ndarray,
    cfg: GbmConfig,
    feature_gain: np.ndarray,
) -> list[dict]:
    """Grow one tree; returns a node list (index 0 is the root)."""
    nodes: list[dict] = []

    def grow(node_rows: np.ndarray, depth: int) -> int:
        idx = len(nodes)
        nodes.append({})
        split = None
        if depth < cfg.max_depth:
            split = _best_split(binned, edges, node_rows, g, h, cfg.l2_reg, cfg.min_child_weight)
        if split is None:
            G, H = g[node_rows].sum(), h[node_rows].sum()
            nodes[idx] = {"value": cfg.learning_rate * (-G / (H + cfg.l2_reg))}
            return idx
        feature_gain[split.feature] += split.gain
        go_left = binned[node_rows, split.feature] <= split.edge_idx
        left = grow(node_rows[go_left], depth + 1)
        right = grow(node_rows[~go_left], depth + 1)
        nodes[idx] = {
            "feature": split.feature,
            "threshold": float(edges[split.feature][split.edge_idx]),
            "left": left,
            "right": right,
        }
        return idx

    grow(rows, 0)
    return nodes


def tree_predict(nodes: list[dict], X: np.ndarray) -> np.ndarray:
    """Raw-score contribution of one tree for each row of X."""
    out = np.zeros(len(X))
    stack = [(0, np.arange(len(X)))]
    while stack:
        idx, rows = stack.pop()
        node = nodes[idx]
        if "value" in node:
            out[rows] = node["value"]
            continue
        go_left = X[rows, node["feature"]] <= node["threshold"]
        stack.append((node["left"], rows[go_left]))
        stack.append((node["right"], rows[~go_left]))
    return out


@dataclass
class GbmModel:
    trees: list[list[dict]]
    base_score: float
    feature_gain: np.ndarray  # normalized to sum 1 when any split exists
    config: GbmConfig
    train_loss: list[float] = field(default_factory=list)

    def raw_scores(self, X: np.ndarray) -> np.ndarray:
        score = np.full(len(X), self.base_score)
        for nodes in self.trees:
            score += tree_predict(nodes, X)
        return score

    def predict(self, X: np.ndarray) -> np.ndarray:
        return sigmoid(self.raw_scores(X))


def fit_gbm(X: np.ndarray, y: np.ndarray, cfg: GbmConfig) -> GbmModel:
    """Boost cfg.n_trees rounds; stops early only if a round finds no split."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2:
        raise ShapeError("training matrix must be 2-D")
    classes = np.unique(y)
    if classes.size < 2:
        raise DegenerateLabelError("training labels contain a single class")
    if not np.isin(classes, (0.0, 1.0)).all():
        raise ValidationError("labels must be binary 0/1")

    n = len(y)
    pos_rate = float(y.mean())
    base = float(np.log(pos_rate / (1.0 - pos_rate)))
    edges = quantile_bin_edges(X, cfg.n_bins)
    binned = bin_matrix(X, edges)
    rng = np.random.default_rng(cfg.seed)

    score = np.full(n, base)
    feature_gain = np.zeros(X.shape[1])
    trees: list[list[dict]] = []
    train_loss = [log_loss(y, score)]
    all_rows = np.arange(n)

    for _ in range(cfg.n_trees):
        p = sigmoid(score)
        g = p - y
        h = p * (1.0 - p)
        if cfg.subsample < 1.0:
            rows = all_rows[rng.random(n) < cfg.subsample]
            if rows.size == 0:
                continue
        else:
            rows = all_rows
        nodes = _build_tree(binned, edges, rows, g, h, cfg, feature_gain)
        if len(nodes) == 1:
            break  # no usable split; further rounds would be no-ops too
        trees.append(nodes)
        score += tree_predict(nodes, X)
        train_loss.append(log_loss(y, score))

    total = feature_gain.sum()
    if total > 0:
        feature_gain = feature_gain / total
    return GbmModel(trees=trees, base_score=base, feature_gain=feature_gain, config=cfg, train_loss=train_loss)
