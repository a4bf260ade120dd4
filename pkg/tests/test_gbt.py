import time

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dfdx import gbt
from dfdx.gbt import (ConfigurationError, Hyperparams, SizeError, TreeEnsemble, fit, grid_search_cv,
                      kfold_indices, predict, train_test_split)
from dfdx.ingest import FeatureTable, SchemaError
from dfdx.signal import RocofSeries

from conftest import random_ensemble

H0 = 3600 * 400000


def _gain(gl, hl, gr, hr, lam):
    g, h = gl + gr, hl + hr
    return 0.5 * (gl**2 / (hl + lam) + gr**2 / (hr + lam) - g**2 / (h + lam))


def _exhaustive(X, g, h, lam, mcw):
    """Best gain over every feature, every cut between distinct values and both NaN sides."""
    best = 0.0
    for f in range(X.shape[1]):
        x = X[:, f]
        miss = np.isnan(x)
        vals = np.unique(x[~miss])
        for lo, hi in zip(vals[:-1], vals[1:]):
            left = ~miss & (x <= lo)
            right = ~miss & (x >= hi)
            for miss_left in (False, True):
                lm = left | (miss & miss_left)
                rm = right | (miss & (not miss_left))
                hl, hr = h[lm].sum(), h[rm].sum()
                if hl > 0 and hr > 0 and hl >= mcw and hr >= mcw:
                    best = max(best, _gain(g[lm].sum(), hl, g[rm].sum(), hr, lam))
    return best


def _check_tree_optimal(tree, X, g, h, lam, mcw, max_depth):
    def walk(node, rows, depth):
        if tree.left[node] < 0:
            if depth < max_depth:
                assert _exhaustive(X[rows], g[rows], h[rows], lam, mcw) <= 1e-12
            return
        want = _exhaustive(X[rows], g[rows], h[rows], lam, mcw)
        assert tree.gain[node] == pytest.approx(want, rel=1e-12, abs=1e-12)
        x = X[rows, tree.feature[node]]
        go_left = np.where(np.isnan(x), tree.default_left[node], x < tree.threshold[node])
        walk(tree.left[node], rows[go_left], depth + 1)
        walk(tree.right[node], rows[~go_left], depth + 1)

    walk(0, np.arange(X.shape[0]), 0)


def test_two_point_stump():
    X = np.array([[0.0], [1.0]])
    y = np.array([0.0, 1.0])
    hp = Hyperparams(n_trees=1, max_depth=1, learning_rate=1.0, min_child_weight=0.0,
                     l2_leaf_penalty=0.0, base_score=0.5)
    e = fit(X, y, hp)
    t = e.trees[0]
    assert t.n_nodes == 3
    leaves = sorted(float(v) for v in t.value[t.left < 0])
    assert leaves == [-0.5, 0.5]
    assert predict(e, [0.0]) == 0.0
    assert predict(e, [1.0]) == 1.0


def test_constant_targets(rng):
    X = rng.normal(size=(40, 3))
    for hp in (Hyperparams(n_trees=5), Hyperparams(n_trees=3, max_depth=4, l2_leaf_penalty=0.0,
                                                    row_subsample=0.5)):
        e = fit(X, np.full(40, 2.5), hp)
        np.testing.assert_array_equal(predict(e, X), 2.5)


def test_determinism(rng):
    X = rng.normal(size=(80, 4))
    y = rng.normal(size=80)
    hp = Hyperparams(n_trees=10, max_depth=3, row_subsample=0.7, rng_seed=3)
    assert fit(X, y, hp).to_json() == fit(X, y, hp).to_json()


def test_empty_ensemble():
    e = TreeEnsemble((), 1.75, 0.1, ("a", "b"))
    assert predict(e, [0.0, 0.0]) == 1.75


def test_additivity(rng):
    for _ in range(10):
        e, X = random_ensemble(rng, 5, 6, 3, nan_frac=0.1)
        direct = e.base_score + e.shrinkage * e.tree_outputs(X).sum(axis=0)
        np.testing.assert_allclose(predict(e, X), direct, rtol=0, atol=1e-12)


def test_schema_errors(rng):
    e, X = random_ensemble(rng, 3, 2, 2)
    with pytest.raises(SchemaError):
        predict(e, X[:, :2])
    with pytest.raises(SizeError):
        fit(X[:1], np.zeros(1), Hyperparams())
    with pytest.raises(SizeError):
        fit(np.zeros((0, 3)), np.zeros(0), Hyperparams())


@pytest.mark.parametrize("kw", [dict(max_depth=0), dict(learning_rate=0.0), dict(learning_rate=1.5),
                                dict(l2_leaf_penalty=-1.0), dict(row_subsample=0.0)])
def test_hyperparam_validation(kw):
    with pytest.raises(ValueError):
        Hyperparams(**kw)


def test_monotone_training_loss():
    r = np.random.default_rng(2024)
    for _ in range(50):
        n, m = int(r.integers(10, 200)), int(r.integers(1, 6))
        X = r.normal(size=(n, m))
        X[r.random(X.shape) < 0.05] = np.nan
        y = r.normal(size=n) + np.nan_to_num(X[:, 0]) ** 2
        hp = Hyperparams(n_trees=15, max_depth=int(r.integers(1, 5)),
                         learning_rate=float(r.uniform(0.05, 1.0)),
                         min_child_weight=float(r.uniform(0, 5)),
                         l2_leaf_penalty=float(r.uniform(0, 3)))
        loss = np.asarray(fit(X, y, hp).train_loss)
        assert np.all(np.diff(loss) <= 1e-12 * loss[:-1])


def test_exhaustive_split_oracle():
    r = np.random.default_rng(99)
    for trial in range(300):
        n = int(r.integers(2, 21))
        X = np.round(r.normal(size=(n, 2)), int(r.integers(0, 3)))
        if trial % 3 == 0:
            X[r.random(X.shape) < 0.2] = np.nan
        y = r.normal(size=n)
        lam = float(r.choice([0.0, 0.5, 2.0]))
        mcw = float(r.choice([0.0, 1.0, 3.0]))
        depth = int(r.integers(1, 4))
        hp = Hyperparams(n_trees=1, max_depth=depth, learning_rate=1.0, min_child_weight=mcw,
                         l2_leaf_penalty=lam)
        e = fit(X, y, hp)
        g = e.base_score - y
        _check_tree_optimal(e.trees[0], X, g, np.ones(n), lam, mcw, depth)


def test_cover_conservation(rng):
    for _ in range(10):
        e, _ = random_ensemble(rng, 4, 5, 4, nan_frac=0.1, subsample=0.7)
        for t in e.trees:
            inner = np.flatnonzero(t.left >= 0)
            np.testing.assert_allclose(t.cover[inner], t.cover[t.left[inner]] + t.cover[t.right[inner]],
                                       rtol=1e-12)
            assert np.all(np.isfinite(t.threshold[inner]))
            assert np.all(np.isfinite(t.value[t.left < 0]))


def test_newton_leaf_values(rng):
    X = rng.normal(size=(50, 2))
    y = rng.normal(size=50)
    hp = Hyperparams(n_trees=1, max_depth=2, learning_rate=0.3, l2_leaf_penalty=1.5)
    e = fit(X, y, hp)
    t = e.trees[0]
    leaf = t.leaf_index(X)
    g = e.base_score - y
    for node in np.unique(leaf):
        sel = leaf == node
        assert t.value[node] == pytest.approx(-g[sel].sum() / (sel.sum() + 1.5), rel=1e-12)


def test_interpolation_capacity(rng):
    x = rng.permutation(30).astype(float)[:, None]
    y = rng.normal(size=30)
    hp = Hyperparams(n_trees=60, max_depth=3, learning_rate=1.0, min_child_weight=0.0,
                     l2_leaf_penalty=0.0)
    e = fit(x, y, hp)
    assert np.mean((predict(e, x) - y) ** 2) < 1e-6


def test_missing_values_follow_default(rng):
    X = rng.normal(size=(100, 1))
    y = (X[:, 0] > 0).astype(float)
    X[:20, 0] = np.nan
    y[:20] = 5.0
    e = fit(X, y, Hyperparams(n_trees=30, max_depth=2, learning_rate=0.5, l2_leaf_penalty=0.0))
    assert predict(e, [np.nan]) == pytest.approx(5.0, abs=0.01)


def test_json_round_trip(tmp_path, rng):
    e, X = random_ensemble(rng, 4, 5, 3, nan_frac=0.1)
    gbt.save_ensemble(tmp_path / "e.json", e)
    back = gbt.load_ensemble(tmp_path / "e.json")
    np.testing.assert_array_equal(predict(back, X), predict(e, X))
    assert back.feature_names == e.feature_names


def _table(n, mask=None):
    hours = H0 + 3600 * np.arange(n)
    t = FeatureTable(hours, {"a": np.arange(n, dtype=float)}, mask)
    return t, RocofSeries(hours, np.zeros(n), np.ones(n, dtype=bool))


def test_split_sizes():
    t, y = _table(100)
    s = train_test_split(t, y, 0.2, seed=1)
    assert s.test.size == 20 and s.train.size == 80
    assert np.intersect1d(s.train, s.test).size == 0


def test_split_pinned_and_deterministic():
    t, y = _table(24 * 20)
    pin = H0 + 3600 * 48
    want = np.arange(48, 72)
    for seed in range(5):
        s = train_test_split(t, y, 0.2, pinned_start=pin, seed=seed)
        assert np.isin(want, s.test).all()
        assert np.union1d(s.train, s.test).size == 480
    a = train_test_split(t, y, 0.2, pinned_start=pin, seed=7)
    b = train_test_split(t, y, 0.2, pinned_start=pin, seed=7)
    np.testing.assert_array_equal(a.test, b.test)
    with pytest.raises(ConfigurationError):
        train_test_split(t, y, 0.2, pinned_start=H0 + 3600 * 470)


def test_split_excludes_masked():
    mask = np.ones(50, dtype=bool)
    mask[[3, 9]] = False
    t, y = _table(50, mask)
    s = train_test_split(t, y, 0.2)
    assert not np.isin([3, 9], np.concatenate([s.train, s.test])).any()


def test_kfold():
    folds = kfold_indices(23, 5, 0)
    assert sorted(np.concatenate(folds).tolist()) == list(range(23))
    with pytest.raises(SizeError):
        kfold_indices(9, 5, 0)


def test_grid_single_and_duplicate(rng):
    X = rng.normal(size=(60, 2))
    y = X[:, 0] + 0.1 * rng.normal(size=60)
    hp = Hyperparams(n_trees=10, max_depth=2)
    best, scores = grid_search_cv(X, y, [hp], k=3)
    assert best == hp and len(scores) == 1
    other = Hyperparams(n_trees=10, max_depth=1)
    best, scores = grid_search_cv(X, y, [hp, other, hp], k=3)
    assert scores[0] == scores[2]


def test_grid_planted_interaction(rng):
    X = rng.uniform(-1, 1, size=(300, 2))
    y = np.sign(X[:, 0]) * np.sign(X[:, 1]) + 0.05 * rng.normal(size=300)
    d1 = Hyperparams(n_trees=40, max_depth=1, learning_rate=0.3)
    d2 = Hyperparams(n_trees=40, max_depth=2, learning_rate=0.3)
    best, scores = grid_search_cv(X, y, [d1, d2], k=5, seed=0)
    assert best == d2
    assert scores[1] > scores[0] + 0.5


def test_grids():
    assert len(gbt.PAPER_GRID) == 72
    assert {hp.max_depth for hp in gbt.PAPER_GRID} == {3, 5, 7}


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_predict_in_target_hull(seed):
    # without penalty or shrinkage overshoot, squared-error leaves are averages of residuals
    r = np.random.default_rng(seed)
    X = r.normal(size=(40, 3))
    y = r.normal(size=40)
    e = fit(X, y, Hyperparams(n_trees=1, max_depth=3, learning_rate=1.0, l2_leaf_penalty=0.0,
                              min_child_weight=0.0))
    p = predict(e, r.normal(size=(20, 3)))
    assert p.min() >= y.min() - 1e-12 and p.max() <= y.max() + 1e-12


@pytest.mark.slow
def test_fit_speed_guard():
    r = np.random.default_rng(0)
    X = r.normal(size=(40_000, 30))
    y = X[:, 0] - 2 * X[:, 1] * (X[:, 2] > 0) + r.normal(size=40_000)
    t0 = time.perf_counter()
    e = fit(X, y, Hyperparams(n_trees=300, max_depth=6))
    elapsed = time.perf_counter() - t0
    print(f"40000x30, 300 trees, depth 6: {elapsed:.1f} s")
    assert len(e.trees) == 300
    assert elapsed < 600
