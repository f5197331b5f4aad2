"""Random-forest classification written from scratch.

Trees are CART classifiers grown on bootstrap resamples with Gini splits over
a random subset of candidate features at each node. Split thresholds are
midpoints between consecutive distinct values; samples with
``x[feature] <= threshold`` go left. The forest predicts by majority vote
(ties to the lower class index) and reports mean leaf distributions as
probabilities.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

MODEL_FORMAT = "billboard-sig-forest"
MODEL_VERSION = 1
_IMPROVEMENT_EPS = 1e-12


def gini(counts: np.ndarray) -> np.ndarray:
    """Gini impurity of class-count rows (last axis = classes)."""
    counts = np.asarray(counts, dtype=float)
    tot = counts.sum(axis=-1)
    safe = np.where(tot > 0, tot, 1.0)
    p = counts / safe[..., None]
    return np.where(tot > 0, 1.0 - np.sum(p * p, axis=-1), 0.0)


@dataclass
class TreeArrays:
    """Flat node storage; leaves have ``feature == -1``."""

    feature: list[int] = field(default_factory=list)
    threshold: list[float] = field(default_factory=list)
    left: list[int] = field(default_factory=list)
    right: list[int] = field(default_factory=list)
    counts: list[list[float]] = field(default_factory=list)
    depth: list[int] = field(default_factory=list)

    def add(self, counts, depth) -> int:
        self.feature.append(-1)
        self.threshold.append(0.0)
        self.left.append(-1)
        self.right.append(-1)
        self.counts.append([float(c) for c in counts])
        self.depth.append(depth)
        return len(self.feature) - 1


class DecisionTree(BaseEstimator, ClassifierMixin):
    """Depth-capped CART classifier with per-node random feature subsets.

    ``y`` must already be encoded as ``0..n_classes-1``; the forest handles
    label encoding.
    """

    def __init__(self, max_depth=2, max_features=None, random_state=None):
        self.max_depth = max_depth
        self.max_features = max_features
        self.random_state = random_state

    def fit(self, X, y, sample_weight=None, n_classes=None):
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=np.int64)
        n, d = X.shape
        w = np.ones(n) if sample_weight is None else np.asarray(sample_weight, dtype=float)
        self.n_classes_ = int(n_classes if n_classes is not None else y.max() + 1)
        self.n_features_in_ = d
        k = d if self.max_features is None else int(self.max_features)
        if not 1 <= k <= d:
            raise ValueError(f"max_features must lie in [1, {d}], got {k}")
        rng = np.random.default_rng(self.random_state)
        self.tree_ = TreeArrays()
        self._grow(X, y, w, np.flatnonzero(w > 0), 0, k, rng)
        self._freeze()
        return self

    def _grow(self, X, y, w, idx, depth, k, rng) -> int:
        counts = np.bincount(y[idx], weights=w[idx], minlength=self.n_classes_)
        node = self.tree_.add(counts, depth)
        if depth >= self.max_depth or np.count_nonzero(counts) <= 1:
            return node
        feats = np.sort(rng.choice(X.shape[1], size=k, replace=False))
        best = _best_split(X[idx], y[idx], w[idx], feats, self.n_classes_)
        if best is None:
            return node
        f, thr, _ = best
        mask = X[idx, f] <= thr
        t = self.tree_
        t.feature[node] = int(f)
        t.threshold[node] = float(thr)
        t.left[node] = self._grow(X, y, w, idx[mask], depth + 1, k, rng)
        t.right[node] = self._grow(X, y, w, idx[~mask], depth + 1, k, rng)
        return node

    def _freeze(self):
        t = self.tree_
        self.feature_ = np.array(t.feature, dtype=np.int64)
        self.threshold_ = np.array(t.threshold, dtype=float)
        self.left_ = np.array(t.left, dtype=np.int64)
        self.right_ = np.array(t.right, dtype=np.int64)
        self.counts_ = np.array(t.counts, dtype=float).reshape(-1, self.n_classes_)
        self.node_depth_ = np.array(t.depth, dtype=np.int64)
        tot = self.counts_.sum(axis=1, keepdims=True)
        self.leaf_proba_ = np.divide(self.counts_, tot, out=np.zeros_like(self.counts_), where=tot > 0)

    def apply(self, X) -> np.ndarray:
        """Leaf index reached by each row."""
        X = np.asarray(X, dtype=float)
        node = np.zeros(len(X), dtype=np.int64)
        active = self.feature_[node] >= 0
        while active.any():
            rows = np.flatnonzero(active)
            nd = node[rows]
            go_left = X[rows, self.feature_[nd]] <= self.threshold_[nd]
            node[rows] = np.where(go_left, self.left_[nd], self.right_[nd])
            active = self.feature_[node] >= 0
        return node

    def predict_proba(self, X) -> np.ndarray:
        return self.leaf_proba_[self.apply(X)]

    def predict(self, X) -> np.ndarray:
        return np.argmax(self.predict_proba(X), axis=1)

    def impurity_decrease(self) -> np.ndarray:
        """Per-feature weighted Gini decrease, as a fraction of the root weight."""
        imp = np.zeros(self.n_features_in_)
        w = self.counts_.sum(axis=1)
        g = gini(self.counts_)
        for node in np.flatnonzero(self.feature_ >= 0):
            l, r = self.left_[node], self.right_[node]
            imp[self.feature_[node]] += w[node] * g[node] - w[l] * g[l] - w[r] * g[r]
        return imp / w[0] if w[0] > 0 else imp

    @property
    def max_leaf_depth(self) -> int:
        return int(self.node_depth_[self.feature_ < 0].max())

    def to_dict(self) -> dict:
        return {
            "feature": self.feature_.tolist(),
            "threshold": self.threshold_.tolist(),
            "left": self.left_.tolist(),
            "right": self.right_.tolist(),
            "counts": self.counts_.tolist(),
            "depth": self.node_depth_.tolist(),
        }

    @classmethod
    def from_dict(cls, doc: dict, n_features: int, max_depth: int, max_features=None) -> "DecisionTree":
        tree = cls(max_depth=max_depth, max_features=max_features)
        tree.tree_ = TreeArrays(
            list(doc["feature"]), list(doc["threshold"]), list(doc["left"]), list(doc["right"]),
            [list(c) for c in doc["counts"]], list(doc["depth"]),
        )
        tree.n_classes_ = len(doc["counts"][0])
        tree.n_features_in_ = n_features
        tree._freeze()
        return tree


def _best_split(X, y, w, feats, n_classes):
    """Lowest weighted child Gini over candidate features; ties to lower (feature, threshold)."""
    total = np.bincount(y, weights=w, minlength=n_classes)
    n_tot = total.sum()
    parent = float(gini(total)) * n_tot
    best = None
    best_imp = parent - _IMPROVEMENT_EPS
    onehot = np.zeros((len(y), n_classes))
    onehot[np.arange(len(y)), y] = w
    for f in feats:
        order = np.argsort(X[:, f], kind="stable")
        xs = X[order, f]
        cum = np.cumsum(onehot[order], axis=0)
        # candidate cut after position i where the value changes
        cut = np.flatnonzero(xs[1:] > xs[:-1])
        if cut.size == 0:
            continue
        left = cum[cut]
        right = total[None, :] - left
        imp = gini(left) * left.sum(axis=1) + gini(right) * right.sum(axis=1)
        i = int(np.argmin(imp))
        if imp[i] < best_imp:
            best_imp = float(imp[i])
            c = cut[i]
            best = (int(f), 0.5 * (xs[c] + xs[c + 1]), best_imp)
    return best


@dataclass(frozen=True)
class ForestConfig:
    n_trees: int = 100
    max_depth: int = 2
    features_per_split: int = 3
    bootstrap: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.n_trees < 1 or self.max_depth < 1:
            raise ValueError("n_trees and max_depth must be >= 1")
        if not 1 <= self.features_per_split <= 7:
            raise ValueError("features_per_split must lie in [1, 7]")

    def estimator(self) -> "RandomForest":
        return RandomForest(
            n_estimators=self.n_trees,
            max_depth=self.max_depth,
            max_features=self.features_per_split,
            bootstrap=self.bootstrap,
            random_state=self.seed,
        )


class RandomForest(ClassifierMixin, BaseEstimator):
    """Bagged ensemble of :class:`DecisionTree` with per-tree derived seeds.

    Defaults follow the billboard classifier: 100 trees of depth 2 with three
    candidate features per split.

    Passing ``sample_ids`` to :meth:`fit` makes training independent of row
    order: rows are sorted by id before any resampling.
    """

    def __init__(self, n_estimators=100, max_depth=2, max_features=3, bootstrap=True, random_state=0):
        self.n_estimators = n_estimators
        self.max_depth = max_depth
        self.max_features = max_features
        self.bootstrap = bootstrap
        self.random_state = random_state

    def fit(self, X, y, sample_ids=None):
        X, y = check_X_y(X, y)
        if len(X) < 2:
            raise ValueError("need at least two training rows")
        if sample_ids is not None:
            order = np.argsort(np.asarray(sample_ids), kind="stable")
            X, y = X[order], y[order]
        self.classes_, y_enc = np.unique(y, return_inverse=True)
        self.n_features_in_ = X.shape[1]
        k = min(int(self.max_features), X.shape[1]) if self.max_features is not None else X.shape[1]
        seeds = np.random.SeedSequence(self.random_state).spawn(self.n_estimators)
        n = len(X)
        self.estimators_ = []
        for ss in seeds:
            rng = np.random.default_rng(ss)
            if self.bootstrap:
                weight = np.bincount(rng.integers(0, n, n), minlength=n).astype(float)
            else:
                weight = np.ones(n)
            tree = DecisionTree(self.max_depth, k, rng.integers(2**63))
            tree.fit(X, y_enc, sample_weight=weight, n_classes=len(self.classes_))
            self.estimators_.append(tree)
        return self

    def _check(self, X):
        check_is_fitted(self, "estimators_")
        return check_array(X)

    def predict_proba(self, X) -> np.ndarray:
        X = self._check(X)
        return np.mean([t.predict_proba(X) for t in self.estimators_], axis=0)

    def predict(self, X) -> np.ndarray:
        X = self._check(X)
        votes = np.zeros((len(X), len(self.classes_)), dtype=np.int64)
        for t in self.estimators_:
            votes[np.arange(len(X)), t.predict(X)] += 1
        return self.classes_[np.argmax(votes, axis=1)]

    @property
    def feature_importances_(self) -> np.ndarray:
        return mdi_importance(self)

    def to_dict(self) -> dict:
        check_is_fitted(self, "estimators_")
        return {
            "format": MODEL_FORMAT,
            "version": MODEL_VERSION,
            "params": self.get_params(),
            "classes": self.classes_.tolist(),
            "n_features": self.n_features_in_,
            "trees": [t.to_dict() for t in self.estimators_],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "RandomForest":
        if doc.get("format") != MODEL_FORMAT:
            raise ValueError(f"not a forest model document (format={doc.get('format')!r})")
        if doc.get("version") != MODEL_VERSION:
            raise ValueError(f"unsupported model version {doc.get('version')!r}")
        forest = cls(**doc["params"])
        forest.classes_ = np.array(doc["classes"])
        forest.n_features_in_ = int(doc["n_features"])
        forest.estimators_ = [
            DecisionTree.from_dict(t, forest.n_features_in_, forest.max_depth, forest.max_features)
            for t in doc["trees"]
        ]
        return forest


def save_model(forest: RandomForest, path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(forest.to_dict(), indent=1) + "\n", encoding="utf-8")


def load_model(path) -> RandomForest:
    return RandomForest.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def train_forest(X, y, cfg: ForestConfig | None = None) -> RandomForest:
    X = np.asarray(X, dtype=float)
    if X.size == 0:
        raise ValueError("empty training data")
    if np.isnan(X).any():
        raise ValueError("NaN feature values")
    return (cfg or ForestConfig()).estimator().fit(X, y)


def mdi_importance(forest: RandomForest) -> np.ndarray:
    """Mean decrease in impurity per feature, normalized to sum to 1.

    All zeros when no tree contains a split.
    """
    check_is_fitted(forest, "estimators_")
    imp = np.mean([t.impurity_decrease() for t in forest.estimators_], axis=0)
    total = imp.sum()
    return imp / total if total > 0 else imp


def permutation_importance(forest, X, y, repeats: int = 20, seed: int = 0) -> np.ndarray:
    """Mean accuracy drop per feature when its column is shuffled."""
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    X = np.asarray(X, dtype=float)
    y = np.asarray(y)
    base = float(np.mean(forest.predict(X) == y))
    rng = np.random.default_rng(seed)
    out = np.zeros(X.shape[1])
    for j in range(X.shape[1]):
        drops = []
        for _ in range(repeats):
            Xp = X.copy()
            Xp[:, j] = rng.permutation(Xp[:, j])
            drops.append(base - float(np.mean(forest.predict(Xp) == y)))
        out[j] = float(np.mean(drops))
    return out


def confusion_matrix(y_true, y_pred, n_classes: int = 3) -> np.ndarray:
    """Rows are true classes, columns predicted, in label order 0..n_classes-1."""
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    if y_true.shape != y_pred.shape:
        raise ValueError(f"length mismatch: {len(y_true)} true vs {len(y_pred)} predicted")
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (y_true, y_pred), 1)
    return cm


def stratified_folds(y, k: int = 5, seed: int = 0) -> np.ndarray:
    """Fold index per row: rows of each class are shuffled then dealt round-robin.

    The dealing position carries over between classes so fold sizes differ by
    at most one.
    """
    y = np.asarray(y)
    if k < 2:
        raise ValueError("k must be >= 2")
    if k > len(y):
        raise ValueError(f"k={k} exceeds the {len(y)} available rows")
    rng = np.random.default_rng(seed)
    folds = np.empty(len(y), dtype=np.int64)
    pos = 0
    for c in np.unique(y):
        idx = rng.permutation(np.flatnonzero(y == c))
        folds[idx] = (pos + np.arange(len(idx))) % k
        pos = (pos + len(idx)) % k
    return folds


@dataclass
class CVResult:
    best: ForestConfig
    scores: dict[ForestConfig, float]
    folds: np.ndarray


def cross_validate(X, y, grid: Sequence[ForestConfig], k: int = 5, seed: int = 0) -> CVResult:
    """Grid search scored by mean stratified k-fold validation accuracy.

    Ties go to the simpler config: fewer trees, then smaller depth.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y)
    if not grid:
        raise ValueError("empty hyperparameter grid")
    folds = stratified_folds(y, k, seed)
    scores: dict[ForestConfig, float] = {}
    for cfg in grid:
        accs = []
        for f in range(k):
            tr, va = folds != f, folds == f
            model = cfg.estimator().fit(X[tr], y[tr])
            accs.append(float(np.mean(model.predict(X[va]) == y[va])))
        scores[cfg] = float(np.mean(accs))
    best = min(grid, key=lambda c: (-round(scores[c], 12), c.n_trees, c.max_depth))
    return CVResult(best, scores, folds)


def default_grid(seed: int = 0) -> list[ForestConfig]:
    return [ForestConfig(n_trees=t, max_depth=d, seed=seed) for t in (10, 100) for d in (1, 2)]


@dataclass
class ImportanceReport:
    feature_names: tuple[str, ...]
    mdi: np.ndarray
    permutation: np.ndarray

    def rows(self):
        return [(n, float(m), float(p)) for n, m, p in zip(self.feature_names, self.mdi, self.permutation)]
