import json

import numpy as np
import pytest

from billboard_sig.features import stratified_split
from billboard_sig.forest import (
    DecisionTree, ForestConfig, ImportanceReport, RandomForest, confusion_matrix, cross_validate,
    default_grid, gini, load_model, mdi_importance, permutation_importance, save_model,
    stratified_folds, train_forest,
)
from synthetic_data import interval_dataset, noisy_dataset, separable_dataset, single_cause_dataset


def test_gini():
    assert gini(np.array([5, 0, 0])) == 0
    assert gini(np.array([1, 1])) == pytest.approx(0.5)
    assert gini(np.array([0, 0])) == 0


def test_tree_learns_threshold():
    X = np.array([[0.0], [1.0], [2.0], [3.0]])
    y = np.array([0, 0, 1, 1])
    t = DecisionTree(max_depth=1).fit(X, y)
    assert t.predict(X).tolist() == [0, 0, 1, 1]
    assert t.threshold_[0] == 1.5
    assert t.max_leaf_depth == 1


def test_tree_no_split_on_pure_node():
    t = DecisionTree(max_depth=3).fit(np.arange(6.0).reshape(-1, 1), np.zeros(6, int))
    assert t.max_leaf_depth == 0
    assert t.impurity_decrease().sum() == 0


def test_single_class_forest():
    X = np.random.default_rng(0).random((20, 7))
    f = train_forest(X, np.full(20, 1))
    assert set(f.predict(np.random.default_rng(1).random((10, 7)))) == {1}
    assert np.array_equal(mdi_importance(f), np.zeros(7))


def test_separable_two_class_one_feature():
    X, y = interval_dataset(200, seed=3, proportions=(1, 1))
    tr, te = stratified_split(y, 40, seed=3)
    f = RandomForest().fit(X[tr], y[tr])
    assert np.mean(f.predict(X[te]) == y[te]) >= 0.95


def test_separable_three_class():
    X, y = separable_dataset(seed=1)
    tr, te = stratified_split(y, 30, seed=1)
    f = train_forest(X[tr], y[tr], ForestConfig(n_trees=100, max_depth=2, seed=1))
    assert np.mean(f.predict(X[te]) == y[te]) >= 0.9
    assert np.mean(f.predict(X[tr]) == y[tr]) >= np.mean(f.predict(X[te]) == y[te])


def test_determinism():
    X, y = noisy_dataset(seed=2)
    a = RandomForest(random_state=5).fit(X, y)
    b = RandomForest(random_state=5).fit(X, y)
    assert a.to_dict() == b.to_dict()
    c = RandomForest(random_state=6).fit(X, y)
    assert a.to_dict() != c.to_dict()


def test_row_order_invariance_with_ids():
    X, y = noisy_dataset(seed=4)
    ids = np.arange(len(y)) * 7 + 3
    perm = np.random.default_rng(0).permutation(len(y))
    a = RandomForest(random_state=1).fit(X, y, sample_ids=ids)
    b = RandomForest(random_state=1).fit(X[perm], y[perm], sample_ids=ids[perm])
    assert np.array_equal(a.predict(X), b.predict(X))


def test_probabilities_sum_to_one():
    X, y = noisy_dataset(seed=0)
    f = RandomForest(n_estimators=20).fit(X, y)
    assert np.allclose(f.predict_proba(X).sum(axis=1), 1.0)


def test_single_tree_vote_and_tie_rule():
    X = np.array([[0.0], [1.0], [2.0], [3.0]])
    y = np.array([0, 0, 1, 1])
    f = RandomForest(n_estimators=1, max_features=1, bootstrap=False).fit(X, y)
    assert np.array_equal(f.predict(X), f.estimators_[0].predict(X))
    t0 = DecisionTree(max_depth=1).fit(X, np.array([0, 0, 0, 0]), n_classes=2)
    t1 = DecisionTree(max_depth=1).fit(X, np.array([1, 1, 1, 1]), n_classes=2)
    f.estimators_ = [t1, t0]
    assert f.predict(X).tolist() == [0, 0, 0, 0]


def test_nan_and_empty_rejected():
    with pytest.raises(ValueError):
        train_forest(np.array([[np.nan] * 7, [0] * 7]), [0, 1])
    with pytest.raises(ValueError):
        train_forest(np.zeros((0, 7)), [])
    f = RandomForest(n_estimators=2).fit(np.random.default_rng(0).random((10, 7)), [0, 1] * 5)
    with pytest.raises(ValueError):
        f.predict(np.array([[np.nan] * 7]))


def test_depth_cap():
    X, y = noisy_dataset(seed=3)
    for depth in (1, 2, 4):
        f = RandomForest(n_estimators=15, max_depth=depth).fit(X, y)
        assert all(t.max_leaf_depth <= depth for t in f.estimators_)


def test_config_validation():
    for bad in (dict(n_trees=0), dict(max_depth=0), dict(features_per_split=8), dict(features_per_split=0)):
        with pytest.raises(ValueError):
            ForestConfig(**bad)


def test_confusion_matrix():
    y = np.array([0, 1, 2, 1])
    assert np.array_equal(confusion_matrix(y, y), np.diag([1, 2, 1]))
    cm = confusion_matrix([0, 0, 1, 2], [0, 1, 1, 1])
    assert cm.tolist() == [[1, 1, 0], [0, 1, 0], [0, 1, 0]] and cm.sum() == 4
    with pytest.raises(ValueError):
        confusion_matrix([0], [0, 1])


def test_folds_partition():
    y = np.array([0] * 45 + [1] * 79 + [2] * 21)
    folds = stratified_folds(y, 5, seed=2)
    assert sorted(np.bincount(folds).tolist()) == [29] * 5
    for c in range(3):
        counts = np.bincount(folds[y == c], minlength=5)
        assert counts.max() - counts.min() <= 1
    with pytest.raises(ValueError):
        stratified_folds(y[:3], 5)


def test_cv_singleton_grid():
    X, y = noisy_dataset(seed=1)
    cfg = ForestConfig(n_trees=5, max_depth=1)
    r = cross_validate(X, y, [cfg])
    assert r.best == cfg and set(r.scores) == {cfg}
    with pytest.raises(ValueError):
        cross_validate(X[:4], y[:4], [cfg], k=5)


def test_cv_prefers_depth_two_and_simpler_on_ties():
    X, y = separable_dataset(seed=0)
    r = cross_validate(X, y, default_grid(0), seed=0)
    assert r.best.max_depth == 2
    tied = [c for c in r.scores if r.scores[c] == r.scores[r.best]]
    assert r.best == min(tied, key=lambda c: (c.n_trees, c.max_depth))


def test_mdi_single_feature():
    rng = np.random.default_rng(0)
    X = np.column_stack([rng.random(60), np.full(60, 2.0)])
    y = (X[:, 0] > 0.5).astype(int)
    f = RandomForest(n_estimators=10, max_features=2).fit(X, y)
    assert mdi_importance(f).tolist() == [1.0, 0.0]


def test_importances_single_cause():
    X, y = single_cause_dataset(seed=0)
    tr, te = stratified_split(y, 30, seed=0)
    f = RandomForest().fit(X[tr], y[tr])
    mdi = f.feature_importances_
    assert mdi.sum() == pytest.approx(1.0, abs=1e-9) and (mdi >= 0).all()
    assert np.argmax(mdi) == 0
    perm = permutation_importance(f, X[te], y[te], repeats=20, seed=0)
    assert np.argmax(perm) == 0
    assert perm[6] == 0.0
    assert np.abs(perm[1:6]).max() <= 0.05
    rows = ImportanceReport(("a",) * 7, mdi, perm).rows()
    assert len(rows) == 7 and rows[0][1] == mdi[0]


def test_permutation_repeats_validated():
    X, y = noisy_dataset(seed=0)
    f = RandomForest(n_estimators=3).fit(X, y)
    with pytest.raises(ValueError):
        permutation_importance(f, X, y, repeats=0)


def test_model_json_round_trip(tmp_path):
    X, y = noisy_dataset(seed=5)
    f = RandomForest(n_estimators=12, random_state=3).fit(X, y)
    path = tmp_path / "model.json"
    save_model(f, path)
    g = load_model(path)
    assert np.array_equal(f.predict(X), g.predict(X))
    assert np.allclose(f.predict_proba(X), g.predict_proba(X))
    assert g.get_params() == f.get_params()
    doc = json.loads(path.read_text())
    doc["version"] = 99
    with pytest.raises(ValueError):
        RandomForest.from_dict(doc)
    with pytest.raises(ValueError):
        RandomForest.from_dict({"format": "other"})
