"""SHAP attributions for boosted tree ensembles.

``tree_shap`` is the polynomial-time path-dependent algorithm: the value of
a feature coalition is the tree output with absent features integrated out
along training covers. ``brute_force_shap`` evaluates the same game by
enumerating every coalition and is only meant as a check.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numba import njit

from .gbt import TreeEnsemble, _as_matrix
from .gbt import predict as ensemble_predict
from .ingest import SchemaError, format_utc


class ModelIntegrityError(ValueError):
    pass


class CapacityError(ValueError):
    pass


MAX_BRUTE_FORCE_FEATURES = 12


@dataclass(frozen=True, eq=False)
class ShapMatrix:
    values: np.ndarray  # (n_rows, n_features), mHz/s
    base_value: float
    feature_names: tuple
    predictions: np.ndarray

    def __len__(self):
        return self.values.shape[0]


@dataclass(frozen=True, eq=False)
class DailyShapProfile:
    """Per hour of day (0..23) means; rows of empty hours are NaN."""

    mean_shap: np.ndarray  # (24, n_features)
    mean_prediction: np.ndarray
    mean_observed: np.ndarray
    counts: np.ndarray
    base_value: float
    feature_names: tuple

    @property
    def empty(self) -> np.ndarray:
        return self.counts == 0


# --------------------------------------------------------------------------
# path-dependent TreeSHAP


@njit(cache=True)
def _extend(feat, zf, of, pw, off, ud, pz, po, pi):
    feat[off + ud] = pi
    zf[off + ud] = pz
    of[off + ud] = po
    pw[off + ud] = 1.0 if ud == 0 else 0.0
    for i in range(ud - 1, -1, -1):
        pw[off + i + 1] += po * pw[off + i] * (i + 1) / (ud + 1)
        pw[off + i] = pz * pw[off + i] * (ud - i) / (ud + 1)


@njit(cache=True)
def _unwind(feat, zf, of, pw, off, ud, idx):
    o = of[off + idx]
    z = zf[off + idx]
    nxt = pw[off + ud]
    for i in range(ud - 1, -1, -1):
        if o != 0:
            tmp = pw[off + i]
            pw[off + i] = nxt * (ud + 1) / ((i + 1) * o)
            nxt = tmp - pw[off + i] * z * (ud - i) / (ud + 1)
        else:
            pw[off + i] = pw[off + i] * (ud + 1) / (z * (ud - i))
    for i in range(idx, ud):
        feat[off + i] = feat[off + i + 1]
        zf[off + i] = zf[off + i + 1]
        of[off + i] = of[off + i + 1]


@njit(cache=True)
def _unwound_sum(zf, of, pw, off, ud, idx):
    o = of[off + idx]
    z = zf[off + idx]
    nxt = pw[off + ud]
    total = 0.0
    if o != 0:
        for i in range(ud - 1, -1, -1):
            tmp = nxt / ((i + 1) * o)
            total += tmp
            nxt = pw[off + i] - tmp * z * (ud - i)
    else:
        for i in range(ud - 1, -1, -1):
            total += pw[off + i] / (z * (ud - i))
    return total * (ud + 1)


@njit
def _recurse(x, phi, left, right, feature, thr, value, cover, dleft, node, ud,
             feat, zf, of, pw, parent_off, pz, po, pi, scale):
    off = parent_off + ud + 1
    for i in range(ud + 1):
        feat[off + i] = feat[parent_off + i]
        zf[off + i] = zf[parent_off + i]
        of[off + i] = of[parent_off + i]
        pw[off + i] = pw[parent_off + i]
    _extend(feat, zf, of, pw, off, ud, pz, po, pi)

    if left[node] < 0:
        for i in range(1, ud + 1):
            w = _unwound_sum(zf, of, pw, off, ud, i)
            phi[feat[off + i]] += w * (of[off + i] - zf[off + i]) * value[node] * scale
        return

    f = feature[node]
    xv = x[f]
    if np.isnan(xv):
        go_left = dleft[node]
    else:
        go_left = xv < thr[node]
    hot = left[node] if go_left else right[node]
    cold = right[node] if go_left else left[node]
    iz = 1.0
    io = 1.0
    k = -1
    for i in range(ud + 1):
        if feat[off + i] == f:
            k = i
            break
    if k >= 0:
        iz = zf[off + k]
        io = of[off + k]
        _unwind(feat, zf, of, pw, off, ud, k)
        ud -= 1
    w = cover[node]
    _recurse(x, phi, left, right, feature, thr, value, cover, dleft, hot, ud + 1,
             feat, zf, of, pw, off, iz * cover[hot] / w, io, f, scale)
    _recurse(x, phi, left, right, feature, thr, value, cover, dleft, cold, ud + 1,
             feat, zf, of, pw, off, iz * cover[cold] / w, 0.0, f, scale)


@njit
def _shap_rows(X, left, right, feature, thr, value, cover, dleft, n_nodes, scale, buf_len):
    n, m = X.shape
    out = np.zeros((n, m + 1))  # last column collects the path's dummy slot
    feat = np.zeros(buf_len, dtype=np.int64)
    zf = np.zeros(buf_len)
    of = np.zeros(buf_len)
    pw = np.zeros(buf_len)
    for r in range(n):
        phi = out[r]
        for t in range(left.shape[0]):
            _recurse(X[r], phi, left[t, :n_nodes[t]], right[t, :n_nodes[t]],
                     feature[t, :n_nodes[t]], thr[t, :n_nodes[t]], value[t, :n_nodes[t]],
                     cover[t, :n_nodes[t]], dleft[t, :n_nodes[t]], 0, 0,
                     feat, zf, of, pw, 0, 1.0, 1.0, m, scale)
    return out[:, :m]


def _depth(tree, i=0) -> int:
    if tree.left[i] < 0:
        return 0
    return 1 + max(_depth(tree, tree.left[i]), _depth(tree, tree.right[i]))


def _check_covers(e: TreeEnsemble) -> None:
    for k, t in enumerate(e.trees):
        if np.any(t.cover <= 0):
            raise ModelIntegrityError(f"tree {k} has a node with zero cover")
        inner = t.left >= 0
        if np.any(t.feature[inner] < 0):
            raise ModelIntegrityError(f"tree {k} has an internal node without a feature")


def _padded(e: TreeEnsemble):
    nt = len(e.trees)
    width = max((t.n_nodes for t in e.trees), default=1)
    left = np.full((nt, width), -1, dtype=np.int64)
    right = np.full((nt, width), -1, dtype=np.int64)
    feature = np.full((nt, width), -1, dtype=np.int64)
    thr = np.zeros((nt, width))
    value = np.zeros((nt, width))
    cover = np.ones((nt, width))
    dleft = np.zeros((nt, width), dtype=np.bool_)
    n_nodes = np.zeros(nt, dtype=np.int64)
    for k, t in enumerate(e.trees):
        n = t.n_nodes
        n_nodes[k] = n
        left[k, :n], right[k, :n], feature[k, :n] = t.left, t.right, t.feature
        thr[k, :n] = np.nan_to_num(t.threshold)
        value[k, :n] = np.nan_to_num(t.value)
        cover[k, :n], dleft[k, :n] = t.cover, t.default_left
    return left, right, feature, thr, value, cover, dleft, n_nodes


def expected_value(e: TreeEnsemble) -> float:
    """Cover-weighted mean ensemble output, the value of the empty coalition."""
    total = 0.0
    for t in e.trees:
        leaves = t.left < 0
        total += float(np.sum(t.cover[leaves] * t.value[leaves]) / t.cover[0])
    return e.base_score + e.shrinkage * total


def _explain(e: TreeEnsemble, X: np.ndarray) -> np.ndarray:
    e.check()
    _check_covers(e)
    if not e.trees:
        return np.zeros((X.shape[0], e.n_features))
    depth = max(_depth(t) for t in e.trees)
    buf_len = (depth + 3) * (depth + 4) // 2 + 1
    return _shap_rows(X, *_padded(e), float(e.shrinkage), buf_len)


def tree_shap(e: TreeEnsemble, row):
    """Exact SHAP values of one row. Returns ``(phi, base_value)``."""
    X = _as_matrix(row, e.n_features)
    if X.shape[0] != 1:
        raise SchemaError("tree_shap explains a single row")
    return _explain(e, X)[0], expected_value(e)


def shap_matrix(e: TreeEnsemble, rows, feature_names=None) -> ShapMatrix:
    X = _as_matrix(rows, e.n_features)
    phi = _explain(e, X)
    preds = np.atleast_1d(ensemble_predict(e, X))
    return ShapMatrix(phi, expected_value(e), tuple(e.feature_names), preds)


# --------------------------------------------------------------------------
# brute-force oracle


def _coalition_values(tree, x, m):
    """Tree output for every coalition (bitmask index) of the m features."""
    masks = np.arange(2**m, dtype=np.int64)

    def walk(i):
        if tree.left[i] < 0:
            return np.full(masks.size, tree.value[i])
        f = tree.feature[i]
        lv, rv = walk(tree.left[i]), walk(tree.right[i])
        xv = x[f]
        go_left = tree.default_left[i] if math.isnan(xv) else xv < tree.threshold[i]
        known = lv if go_left else rv
        c = tree.cover
        averaged = (c[tree.left[i]] * lv + c[tree.right[i]] * rv) / c[i]
        return np.where((masks >> f) & 1, known, averaged)

    return walk(0)


def brute_force_shap(e: TreeEnsemble, row) -> np.ndarray:
    """Shapley values by enumerating all 2^m coalitions (m <= 12)."""
    m = e.n_features
    if m > MAX_BRUTE_FORCE_FEATURES:
        raise CapacityError(f"{m} features exceed the brute-force limit of {MAX_BRUTE_FORCE_FEATURES}")
    e.check()
    _check_covers(e)
    x = _as_matrix(row, m)[0]
    v = np.full(2**m, e.base_score)
    for t in e.trees:
        v = v + e.shrinkage * _coalition_values(t, x, m)
    sizes = np.array([bin(s).count("1") for s in range(2**m)])
    weight = np.array([math.factorial(k) * math.factorial(m - k - 1) / math.factorial(m)
                       for k in range(m)])
    phi = np.zeros(m)
    for i in range(m):
        without = np.flatnonzero(((np.arange(2**m) >> i) & 1) == 0)
        phi[i] = np.sum(weight[sizes[without]] * (v[without | (1 << i)] - v[without]))
    return phi


# --------------------------------------------------------------------------
# aggregation and export


def daily_aggregate(m: ShapMatrix, hour_of_day, observed=None) -> DailyShapProfile:
    """Per-hour-of-day arithmetic means of attributions, predictions and observations.

    ``observed`` may be an array or a RocofSeries aligned with the rows;
    invalid observations are left out of the observed mean only.
    """
    hod = np.asarray(hour_of_day, dtype=float)
    if hod.shape != (len(m),):
        raise SchemaError("need one hour-of-day label per row")
    if np.any(np.isnan(hod)) or np.any((hod < 0) | (hod > 23) | (hod != np.round(hod))):
        raise SchemaError("hour-of-day labels must be integers in 0..23")
    hod = hod.astype(np.int64)
    if observed is None:
        obs = np.full(len(m), np.nan)
    elif hasattr(observed, "rocof"):
        obs = np.where(observed.valid, observed.rocof, np.nan)
    else:
        obs = np.asarray(observed, dtype=float)
    counts = np.bincount(hod, minlength=24)
    n_feat = m.values.shape[1]
    mean_shap = np.full((24, n_feat), np.nan)
    mean_pred = np.full(24, np.nan)
    mean_obs = np.full(24, np.nan)
    for h in np.flatnonzero(counts):
        sel = hod == h
        mean_shap[h] = m.values[sel].mean(axis=0)
        mean_pred[h] = m.predictions[sel].mean()
        o = obs[sel]
        if np.any(~np.isnan(o)):
            mean_obs[h] = np.nanmean(o)
    return DailyShapProfile(mean_shap, mean_pred, mean_obs, counts, m.base_value, m.feature_names)


def dependency_pairs(m: ShapMatrix, feature, feature_values) -> np.ndarray:
    """``(feature value, attribution)`` per row, in row order, as an (n, 2) array."""
    if isinstance(feature, str):
        if feature not in m.feature_names:
            raise SchemaError(f"unknown feature {feature!r}")
        j = m.feature_names.index(feature)
    else:
        j = int(feature)
        if not 0 <= j < len(m.feature_names):
            raise SchemaError(f"unknown feature index {j}")
    vals = np.asarray(feature_values, dtype=float)
    if vals.shape != (len(m),):
        raise SchemaError("need one feature value per row")
    return np.column_stack([vals, m.values[:, j]])


def write_shap_csv(path, m: ShapMatrix, hour_timestamps) -> None:
    cols = [f"shap_{n}_mhz_per_s" for n in m.feature_names]
    with Path(path).open("w", newline="") as fh:
        fh.write(",".join(["hour_utc", "base_value_mhz_per_s", "prediction_mhz_per_s", *cols]) + "\n")
        for t, p, row in zip(hour_timestamps, m.predictions, m.values):
            cells = [format_utc(t), repr(float(m.base_value)), repr(float(p))]
            cells += [repr(float(v)) for v in row]
            fh.write(",".join(cells) + "\n")


def write_daily_shap_csv(path, prof: DailyShapProfile) -> None:
    cols = [f"shap_{n}_mhz_per_s" for n in prof.feature_names]
    head = ["hour_of_day", "n_rows", "base_value_mhz_per_s", "mean_prediction_mhz_per_s",
            "mean_observed_mhz_per_s", *cols]

    def cell(v):
        return "" if math.isnan(v) else repr(float(v))

    with Path(path).open("w", newline="") as fh:
        fh.write(",".join(head) + "\n")
        for h in range(24):
            cells = [str(h), str(int(prof.counts[h])), cell(prof.base_value),
                     cell(prof.mean_prediction[h]), cell(prof.mean_observed[h])]
            cells += [cell(v) for v in prof.mean_shap[h]]
            fh.write(",".join(cells) + "\n")


def write_dependency_csv(path, feature: str, pairs: np.ndarray) -> None:
    with Path(path).open("w", newline="") as fh:
        fh.write(f"{feature}_value,shap_{feature}_mhz_per_s\n")
        for v, a in pairs:
            fh.write(f"{float(v)!r},{float(a)!r}\n")
