"""R^2 scores, daily average profiles and sign agreement of profiles."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ingest import HOUR, AlignmentError
from .signal import RocofSeries


class UndefinedScoreError(ValueError):
    pass


def _values(s):
    if isinstance(s, RocofSeries):
        return s.hour_timestamps, np.where(s.valid, s.rocof, np.nan)
    return None, np.asarray(s, dtype=float)


def r2_score(y_true, y_pred) -> float:
    """``1 - SSE/SST`` over pairs valid in both series; SST about the mean of ``y_true``."""
    t_true, a = _values(y_true)
    t_pred, b = _values(y_pred)
    if a.shape != b.shape or (t_true is not None and t_pred is not None
                              and np.any(t_true != t_pred)):
        raise AlignmentError("y_true and y_pred are not aligned")
    ok = ~np.isnan(a) & ~np.isnan(b)
    a, b = a[ok], b[ok]
    if a.size < 2:
        raise UndefinedScoreError("need at least 2 valid pairs")
    sst = float(np.sum((a - a.mean()) ** 2))
    if sst == 0.0:
        raise UndefinedScoreError("y_true is constant; R^2 is undefined")
    return 1.0 - float(np.sum((a - b) ** 2)) / sst


@dataclass(frozen=True, eq=False)
class DailyProfile:
    means: np.ndarray  # (24,), NaN where count == 0
    counts: np.ndarray

    def to_dict(self) -> dict:
        return {"mean": [None if np.isnan(v) else float(v) for v in self.means],
                "count": [int(c) for c in self.counts]}


def hour_of_day(hour_timestamps) -> np.ndarray:
    return (np.asarray(hour_timestamps, dtype=np.int64) // HOUR) % 24


def daily_profile(hour_timestamps, values=None, valid=None) -> DailyProfile:
    """Mean per UTC hour of day over valid samples.

    Accepts either a RocofSeries (as the only argument) or timestamps plus values.
    """
    if isinstance(hour_timestamps, RocofSeries):
        s = hour_timestamps
        hour_timestamps, values, valid = s.hour_timestamps, s.rocof, s.valid
    v = np.asarray(values, dtype=float)
    ok = ~np.isnan(v) if valid is None else np.asarray(valid, dtype=bool) & ~np.isnan(v)
    hod = hour_of_day(hour_timestamps)[ok]
    counts = np.bincount(hod, minlength=24)
    sums = np.bincount(hod, weights=v[ok], minlength=24)
    with np.errstate(invalid="ignore", divide="ignore"):
        means = np.where(counts > 0, sums / np.maximum(counts, 1), np.nan)
    return DailyProfile(means, counts)


@dataclass(frozen=True)
class SignMatch:
    matches: int
    mismatched_hours: tuple
    excluded_hours: tuple

    def to_dict(self) -> dict:
        return {"matches": self.matches, "mismatched_hours": list(self.mismatched_hours),
                "excluded_hours": list(self.excluded_hours)}


def sign_match(pred_profile: DailyProfile, data_profile: DailyProfile) -> SignMatch:
    """Count hours where both profile means point the same way.

    An exact zero matches either sign. Hours empty in either profile are
    excluded and reported.
    """
    p, d = pred_profile.means, data_profile.means
    empty = (pred_profile.counts == 0) | (data_profile.counts == 0)
    sp, sd = np.sign(p), np.sign(d)
    agree = (sp == sd) | (sp == 0) | (sd == 0)
    mism = np.flatnonzero(~agree & ~empty)
    return SignMatch(int(np.count_nonzero(agree & ~empty)),
                     tuple(int(h) for h in mism),
                     tuple(int(h) for h in np.flatnonzero(empty)))
