"""Gradient tree boosting for squared error, built from scratch.

Trees are grown level-wise with exact greedy split search over presorted
feature columns. Leaf weights are Newton steps ``-G / (H + lambda)``; the
ensemble output is ``base_score + shrinkage * sum(tree outputs)``. Node
covers (hessian sums of the training rows reaching a node) are kept for
TreeSHAP.
"""
from __future__ import annotations

import itertools
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from numba import njit

from .ingest import FeatureTable, SchemaError
from .signal import RocofSeries


class SizeError(ValueError):
    pass


class ConfigurationError(ValueError):
    pass


@dataclass(frozen=True)
class Hyperparams:
    n_trees: int = 100
    max_depth: int = 3
    learning_rate: float = 0.1
    min_child_weight: float = 1.0
    l2_leaf_penalty: float = 1.0
    row_subsample: float = 1.0
    rng_seed: int = 0
    base_score: Optional[float] = None  # None: mean of the training targets

    def __post_init__(self):
        if self.n_trees < 0:
            raise ValueError("n_trees must be >= 0")
        if self.max_depth < 1:
            raise ValueError("max_depth must be >= 1")
        if not 0.0 < self.learning_rate <= 1.0:
            raise ValueError("learning_rate must lie in (0, 1]")
        if self.min_child_weight < 0 or self.l2_leaf_penalty < 0:
            raise ValueError("penalties must be >= 0")
        if not 0.0 < self.row_subsample <= 1.0:
            raise ValueError("row_subsample must lie in (0, 1]")


def _grid(**axes) -> list:
    keys = list(axes)
    return [Hyperparams(**dict(zip(keys, vals))) for vals in itertools.product(*axes.values())]


PAPER_GRID = _grid(max_depth=[3, 5, 7], learning_rate=[0.05, 0.1, 0.3], n_trees=[100, 300],
                   min_child_weight=[1.0, 10.0], l2_leaf_penalty=[0.0, 1.0])
SMALL_GRID = _grid(max_depth=[3, 5], learning_rate=[0.1], n_trees=[150],
                   min_child_weight=[5.0], l2_leaf_penalty=[1.0])
GRIDS = {"paper": PAPER_GRID, "small": SMALL_GRID}


@dataclass(frozen=True, eq=False)
class Tree:
    """Flat binary tree. Leaves have ``left == right == -1`` and ``feature == -1``.

    Rows go left when ``x[feature] < threshold``; NaN follows ``default_left``.
    """

    left: np.ndarray
    right: np.ndarray
    feature: np.ndarray
    threshold: np.ndarray
    value: np.ndarray
    cover: np.ndarray
    default_left: np.ndarray
    gain: np.ndarray

    @property
    def n_nodes(self) -> int:
        return self.left.size

    def is_leaf(self, i) -> bool:
        return self.left[i] < 0

    def leaf_index(self, X: np.ndarray) -> np.ndarray:
        node = np.zeros(X.shape[0], dtype=np.int64)
        rows = np.arange(X.shape[0])
        while True:
            inner = self.left[node] >= 0
            if not inner.any():
                return node
            r, nd = rows[inner], node[inner]
            x = X[r, self.feature[nd]]
            go_left = np.where(np.isnan(x), self.default_left[nd], x < self.threshold[nd])
            node[inner] = np.where(go_left, self.left[nd], self.right[nd])

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.value[self.leaf_index(X)]

    def to_dict(self, i: int = 0) -> dict:
        if self.left[i] < 0:
            return {"leaf_value": float(self.value[i]), "cover": float(self.cover[i])}
        return {
            "split_feature": int(self.feature[i]),
            "threshold": float(self.threshold[i]),
            "default_left": bool(self.default_left[i]),
            "cover": float(self.cover[i]),
            "gain": float(self.gain[i]),
            "left": self.to_dict(int(self.left[i])),
            "right": self.to_dict(int(self.right[i])),
        }

    @classmethod
    def from_dict(cls, root: dict) -> "Tree":
        cols = {k: [] for k in ("left", "right", "feature", "threshold", "value",
                                "cover", "default_left", "gain")}

        def add(node):
            i = len(cols["left"])
            for k in cols:
                cols[k].append(None)
            cols["cover"][i] = float(node["cover"])
            if "leaf_value" in node:
                cols["left"][i] = cols["right"][i] = cols["feature"][i] = -1
                cols["threshold"][i] = np.nan
                cols["value"][i] = float(node["leaf_value"])
                cols["default_left"][i] = False
                cols["gain"][i] = 0.0
                return i
            cols["feature"][i] = int(node["split_feature"])
            cols["threshold"][i] = float(node["threshold"])
            cols["default_left"][i] = bool(node.get("default_left", True))
            cols["gain"][i] = float(node.get("gain", 0.0))
            cols["value"][i] = np.nan
            cols["left"][i] = add(node["left"])
            cols["right"][i] = add(node["right"])
            return i

        add(root)
        return cls(
            np.asarray(cols["left"], dtype=np.int64), np.asarray(cols["right"], dtype=np.int64),
            np.asarray(cols["feature"], dtype=np.int64), np.asarray(cols["threshold"], dtype=float),
            np.asarray(cols["value"], dtype=float), np.asarray(cols["cover"], dtype=float),
            np.asarray(cols["default_left"], dtype=bool), np.asarray(cols["gain"], dtype=float),
        )


@dataclass(frozen=True, eq=False)
class TreeEnsemble:
    trees: tuple
    base_score: float
    shrinkage: float
    feature_names: tuple
    train_loss: tuple = field(default=(), repr=False)

    @property
    def n_features(self) -> int:
        return len(self.feature_names)

    def check(self) -> None:
        """Raise SchemaError if a tree references a feature the ensemble does not know."""
        for t in self.trees:
            if np.any(t.feature >= self.n_features):
                raise SchemaError("tree references an unknown feature id")

    def tree_outputs(self, X) -> np.ndarray:
        X = _as_matrix(X, self.n_features)
        if not self.trees:
            return np.zeros((0, X.shape[0]))
        return np.stack([t.predict(X) for t in self.trees])

    def to_dict(self) -> dict:
        return {
            "base_score": self.base_score,
            "shrinkage": self.shrinkage,
            "feature_names": list(self.feature_names),
            "trees": [t.to_dict() for t in self.trees],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d: dict) -> "TreeEnsemble":
        e = cls(tuple(Tree.from_dict(t) for t in d["trees"]), float(d["base_score"]),
                float(d["shrinkage"]), tuple(d["feature_names"]))
        e.check()
        return e

    @classmethod
    def from_json(cls, text: str) -> "TreeEnsemble":
        return cls.from_dict(json.loads(text))


def save_ensemble(path, e: TreeEnsemble) -> None:
    Path(path).write_text(e.to_json())


def load_ensemble(path) -> TreeEnsemble:
    return TreeEnsemble.from_json(Path(path).read_text())


def _as_matrix(X, n_features: int) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != n_features:
        raise SchemaError(f"expected rows with {n_features} features, got shape {X.shape}")
    return X


def predict(e: TreeEnsemble, X):
    """Ensemble output for one row (returns a float) or a matrix of rows."""
    single = np.ndim(X) == 1
    e.check()
    X = _as_matrix(X, e.n_features)
    out = np.full(X.shape[0], e.base_score, dtype=float)
    if e.trees:
        out = out + e.shrinkage * e.tree_outputs(X).sum(axis=0)
    return float(out[0]) if single else out


# --------------------------------------------------------------------------
# tree growing


class _Presorted:
    """Per-feature row order by value; NaN rows sit at the end of each order."""

    def __init__(self, X: np.ndarray):
        self.X = np.ascontiguousarray(X)
        self.XT = np.ascontiguousarray(X.T)
        self.order = np.stack([np.argsort(X[:, f], kind="stable") for f in range(X.shape[1])]) \
            if X.shape[1] else np.empty((0, X.shape[0]), dtype=np.int64)
        self.n_valid = np.count_nonzero(~np.isnan(X), axis=0).astype(np.int64)


@njit(cache=True)
def _gain(gl, hl, gr, hr, g, h, lam):
    return 0.5 * (gl * gl / (hl + lam) + gr * gr / (hr + lam) - g * g / (h + lam))


@njit(cache=True)
def _scan_splits(XT, order, n_valid, g, h, node_of, local, Ga, Ha, lam, mcw):
    """One pass per feature over the presorted rows, all active nodes at once.

    A candidate threshold lies between consecutive distinct values within a
    node; rows below it go left. Missing rows are tried on either side. Ties
    keep the earlier feature and the lower threshold.
    """
    n_act = Ga.size
    best_gain = np.zeros(n_act)
    best_feat = np.full(n_act, -1, dtype=np.int64)
    best_thr = np.full(n_act, np.nan)
    best_dl = np.zeros(n_act, dtype=np.bool_)
    GL = np.zeros(n_act)
    HL = np.zeros(n_act)
    Gv = np.zeros(n_act)
    Hv = np.zeros(n_act)
    last = np.zeros(n_act)
    seen = np.zeros(n_act, dtype=np.bool_)
    for f in range(order.shape[0]):
        x = XT[f]
        GL[:] = 0.0
        HL[:] = 0.0
        Gv[:] = 0.0
        Hv[:] = 0.0
        seen[:] = False
        nv = n_valid[f]
        for p in range(nv):
            r = order[f, p]
            k = local[node_of[r]]
            if k >= 0:
                Gv[k] += g[r]
                Hv[k] += h[r]
        for p in range(nv):
            r = order[f, p]
            k = local[node_of[r]]
            if k < 0:
                continue
            xr = x[r]
            if seen[k] and xr > last[k]:
                G, H = Ga[k], Ha[k]
                Gm, Hm = G - Gv[k], H - Hv[k]
                for miss_left in (False, True):
                    gl, hl = GL[k], HL[k]
                    if miss_left:
                        gl += Gm
                        hl += Hm
                    gr, hr = G - gl, H - hl
                    if hl > 0 and hr > 0 and hl >= mcw and hr >= mcw:
                        gain = _gain(gl, hl, gr, hr, G, H, lam)
                        if gain > best_gain[k]:
                            best_gain[k] = gain
                            best_feat[k] = f
                            thr = 0.5 * (last[k] + xr)
                            best_thr[k] = thr if thr > last[k] else xr
                            if Hm == 0:
                                # no missing rows: NaN follows the heavier child
                                best_dl[k] = hl >= hr
                            else:
                                best_dl[k] = miss_left
            GL[k] += g[r]
            HL[k] += h[r]
            last[k] = xr
            seen[k] = True
    return best_gain, best_feat, best_thr, best_dl


def _best_splits(data: _Presorted, g, h, node_of, active, G, H, hp: Hyperparams):
    """Best (gain, feature, threshold, default_left) for every active node."""
    local = np.full(max(int(node_of.max()), int(active.max())) + 1, -1, dtype=np.int64)
    local[active] = np.arange(active.size)
    return _scan_splits(data.XT, data.order, data.n_valid, g, h, node_of, local,
                        G[active], H[active], float(hp.l2_leaf_penalty),
                        float(hp.min_child_weight))


def _grow_tree(data: _Presorted, g, h, hp: Hyperparams) -> Tree:
    X = data.X
    n = X.shape[0]
    lam = hp.l2_leaf_penalty
    node_of = np.zeros(n, dtype=np.int64)
    left, right, feat, thr, cover, dleft, gains, Gs = [-1], [-1], [-1], [np.nan], [0.0], [False], [0.0], [0.0]
    G0, H0 = float(g.sum()), float(h.sum())
    Gs[0], cover[0] = G0, H0
    active = np.array([0], dtype=np.int64)
    rows = np.arange(n)

    for _depth in range(hp.max_depth):
        n_nodes = len(left)
        G = np.bincount(node_of, weights=g, minlength=n_nodes)
        H = np.bincount(node_of, weights=h, minlength=n_nodes)
        bg, bf, bt, bdl = _best_splits(data, g, h, node_of, active, G, H, hp)
        split = bg > 0
        if not split.any():
            break
        new_active = []
        child_left = np.full(n_nodes, -1, dtype=np.int64)
        child_right = np.full(n_nodes, -1, dtype=np.int64)
        for j in np.flatnonzero(split):
            p = int(active[j])
            feat[p], thr[p], dleft[p], gains[p] = int(bf[j]), float(bt[j]), bool(bdl[j]), float(bg[j])
            for side in (child_left, child_right):
                side[p] = len(left)
                new_active.append(len(left))
                left.append(-1), right.append(-1), feat.append(-1), thr.append(np.nan)
                cover.append(0.0), dleft.append(False), gains.append(0.0), Gs.append(0.0)
            left[p], right[p] = int(child_left[p]), int(child_right[p])
        moving = child_left[node_of] >= 0
        r, nd = rows[moving], node_of[moving]
        fr = np.asarray(feat, dtype=np.int64)[nd]
        xv = X[r, fr]
        thr_arr = np.asarray(thr)[nd]
        dl_arr = np.asarray(dleft, dtype=bool)[nd]
        go_left = np.where(np.isnan(xv), dl_arr, xv < thr_arr)
        node_of[moving] = np.where(go_left, child_left[nd], child_right[nd])
        active = np.asarray(new_active, dtype=np.int64)

    n_nodes = len(left)
    G = np.bincount(node_of, weights=g, minlength=n_nodes)
    H = np.bincount(node_of, weights=h, minlength=n_nodes)
    left_a = np.asarray(left, dtype=np.int64)
    # covers of internal nodes are the sums of their leaves
    cov = H.copy()
    for i in range(n_nodes - 1, -1, -1):
        if left_a[i] >= 0:
            cov[i] = cov[left_a[i]] + cov[right[i]]
            G[i] = G[left_a[i]] + G[right[i]]
    value = -G / (cov + lam)
    value[left_a >= 0] = np.nan
    return Tree(left_a, np.asarray(right, dtype=np.int64), np.asarray(feat, dtype=np.int64),
                np.asarray(thr, dtype=float), value, cov,
                np.asarray(dleft, dtype=bool), np.asarray(gains, dtype=float))


def fit(X, y, hp: Hyperparams, feature_names: Sequence[str] = None) -> TreeEnsemble:
    """Boost ``hp.n_trees`` regression trees on ``(X, y)`` under squared error."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or X.shape[0] != y.size:
        raise SizeError("X must be (n_rows, n_features) aligned with y")
    if y.size < 2:
        raise SizeError("need at least 2 training rows")
    if not np.all(np.isfinite(y)):
        raise ValueError("targets must be finite")
    names = tuple(feature_names) if feature_names is not None else tuple(
        f"f{j}" for j in range(X.shape[1]))
    if len(names) != X.shape[1]:
        raise SchemaError("feature_names does not match X")

    rng = np.random.default_rng(hp.rng_seed)
    base = float(np.mean(y)) if hp.base_score is None else float(hp.base_score)
    pred = np.full(y.size, base)
    data = _Presorted(X)
    trees, losses = [], [float(np.mean((pred - y) ** 2))]
    for _ in range(hp.n_trees):
        grad = pred - y
        hess = np.ones(y.size)
        if hp.row_subsample < 1.0:
            keep = np.zeros(y.size, dtype=bool)
            k = max(2, int(round(hp.row_subsample * y.size)))
            keep[rng.choice(y.size, size=min(k, y.size), replace=False)] = True
            grad = np.where(keep, grad, 0.0)
            hess = np.where(keep, hess, 0.0)
        tree = _grow_tree(data, grad, hess, hp)
        trees.append(tree)
        pred = pred + hp.learning_rate * tree.predict(X)
        losses.append(float(np.mean((pred - y) ** 2)))
    return TreeEnsemble(tuple(trees), base, hp.learning_rate, names, tuple(losses))


# --------------------------------------------------------------------------
# data splitting and model selection


@dataclass(frozen=True, eq=False)
class Split:
    train: np.ndarray
    test: np.ndarray
    pinned: np.ndarray


def usable_rows(table: FeatureTable, targets: RocofSeries) -> np.ndarray:
    if table.hour_timestamps.shape != targets.hour_timestamps.shape or np.any(
            table.hour_timestamps != targets.hour_timestamps):
        raise SchemaError("feature table and targets are not aligned")
    return table.row_mask & targets.valid


def train_test_split(table: FeatureTable, targets: RocofSeries, test_frac: float = 0.2,
                     pinned_start: Optional[int] = None, pinned_hours: int = 24,
                     seed: int = 0) -> Split:
    """Random hold-out split plus an optional contiguous block forced into the test set.

    ``test_frac`` applies to the usable rows outside the pinned block. Masked
    rows and rows with invalid targets are in neither set.
    """
    if not 0.0 <= test_frac < 1.0:
        raise ConfigurationError("test_frac must lie in [0, 1)")
    ok = usable_rows(table, targets)
    pinned = np.zeros(len(table), dtype=bool)
    if pinned_start is not None:
        want = pinned_start + 3600 * np.arange(pinned_hours, dtype=np.int64)
        present = np.isin(want, table.hour_timestamps)
        if not present.all():
            raise ConfigurationError(f"{int((~present).sum())} pinned hours are missing from the table")
        pinned = np.isin(table.hour_timestamps, want)
    pool = np.flatnonzero(ok & ~pinned)
    n_test = int(round(test_frac * pool.size))
    perm = np.random.default_rng(seed).permutation(pool)
    test = np.sort(np.concatenate([perm[:n_test], np.flatnonzero(ok & pinned)]))
    train = np.sort(perm[n_test:])
    return Split(train, test, np.flatnonzero(ok & pinned))


def _r2(y, p) -> float:
    sst = np.sum((y - y.mean()) ** 2)
    if sst == 0:
        raise SizeError("validation fold has constant targets")
    return float(1.0 - np.sum((y - p) ** 2) / sst)


def kfold_indices(n: int, k: int, seed: int) -> list:
    if k < 2:
        raise ValueError("k must be >= 2")
    if n // k < 2:
        raise SizeError(f"{n} rows give folds smaller than 2 rows for k={k}")
    perm = np.random.default_rng(seed).permutation(n)
    return [np.sort(f) for f in np.array_split(perm, k)]


def grid_search_cv(X, y, grid: Sequence[Hyperparams], k: int = 5, seed: int = 0,
                   feature_names=None):
    """Mean validation R^2 for every grid point over the same ``k`` folds.

    Returns ``(best, scores)``; ties go to the earliest grid point.
    """
    grid = list(grid)
    if not grid:
        raise ValueError("grid is empty")
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    folds = kfold_indices(y.size, k, seed)
    scores = []
    for hp in grid:
        fold_scores = []
        for i, val in enumerate(folds):
            tr = np.concatenate([f for j, f in enumerate(folds) if j != i])
            model = fit(X[tr], y[tr], hp, feature_names)
            fold_scores.append(_r2(y[val], predict(model, X[val])))
        scores.append(float(np.mean(fold_scores)))
    best = int(np.argmax(scores))
    return grid[best], scores


def hyperparams_dict(hp: Hyperparams) -> dict:
    return asdict(hp)
