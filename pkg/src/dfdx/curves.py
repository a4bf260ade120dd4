"""Minute-resolution load, solar and generation curves, and hourly step sizes.

Load and solar are interpolated from hourly values with a natural cubic
spline; scheduled generation is a right-continuous step curve that changes
at each full hour.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .ingest import HOUR, AlignmentError, format_utc


class DomainError(ValueError):
    pass


class ExtrapolationError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class CubicSpline:
    knot_xs: np.ndarray
    knot_ys: np.ndarray
    second_derivatives: np.ndarray

    def __call__(self, x):
        return eval_spline(self, x)


def _solve_tridiagonal(sub, diag, sup, rhs):
    """Thomas algorithm; ``sub[0]`` and ``sup[-1]`` are ignored."""
    n = diag.size
    c = np.zeros(n)
    d = np.zeros(n)
    c[0] = sup[0] / diag[0]
    d[0] = rhs[0] / diag[0]
    for i in range(1, n):
        denom = diag[i] - sub[i] * c[i - 1]
        c[i] = sup[i] / denom if i < n - 1 else 0.0
        d[i] = (rhs[i] - sub[i] * d[i - 1]) / denom
    x = np.zeros(n)
    x[-1] = d[-1]
    for i in range(n - 2, -1, -1):
        x[i] = d[i] - c[i] * x[i + 1]
    return x


def fit_natural_spline(knot_xs, knot_ys) -> CubicSpline:
    """Interpolating cubic spline with zero curvature at both end knots."""
    xs = np.asarray(knot_xs, dtype=float)
    ys = np.asarray(knot_ys, dtype=float)
    if xs.ndim != 1 or xs.shape != ys.shape:
        raise DomainError("knot_xs and knot_ys must be 1-d and of equal length")
    if xs.size < 3:
        raise DomainError("a natural spline needs at least 3 knots")
    if np.any(np.diff(xs) <= 0):
        raise DomainError("knot_xs must be strictly increasing")
    if not (np.all(np.isfinite(xs)) and np.all(np.isfinite(ys))):
        raise DomainError("knots must be finite")

    h = np.diff(xs)
    slopes = np.diff(ys) / h
    m = np.zeros(xs.size)
    # interior equations: h[i-1] M[i-1] + 2 (h[i-1] + h[i]) M[i] + h[i] M[i+1] = 6 (s[i] - s[i-1])
    sub = np.concatenate([[0.0], h[1:-1]])
    diag = 2.0 * (h[:-1] + h[1:])
    sup = np.concatenate([h[1:-1], [0.0]])
    rhs = 6.0 * np.diff(slopes)
    m[1:-1] = _solve_tridiagonal(sub, diag, sup, rhs)
    for a in (xs, ys, m):
        a.setflags(write=False)
    return CubicSpline(xs, ys, m)


def eval_spline(s: CubicSpline, x):
    """Evaluate the spline at scalar or array ``x``; no extrapolation."""
    xq = np.asarray(x, dtype=float)
    xs, ys, m = s.knot_xs, s.knot_ys, s.second_derivatives
    if np.any(np.isnan(xq)) or np.any(xq < xs[0]) or np.any(xq > xs[-1]):
        raise ExtrapolationError(f"x outside spline range [{xs[0]}, {xs[-1]}]")
    i = np.clip(np.searchsorted(xs, xq, side="right") - 1, 0, xs.size - 2)
    h = xs[i + 1] - xs[i]
    a = (xs[i + 1] - xq) / h
    b = (xq - xs[i]) / h
    out = a * ys[i] + b * ys[i + 1] + ((a**3 - a) * m[i] + (b**3 - b) * m[i + 1]) * h * h / 6.0
    return float(out) if out.ndim == 0 else out


def hourly_spline(hour_timestamps, values, anchor: str = "start") -> CubicSpline:
    """Spline through hourly values placed at hour starts (or mid-hour)."""
    t = np.asarray(hour_timestamps, dtype=float)
    if anchor == "mid":
        t = t + HOUR / 2
    elif anchor != "start":
        raise ValueError(f"unknown anchor {anchor!r}")
    return fit_natural_spline(t, values)


@dataclass(frozen=True, eq=False)
class StepCurve:
    """Piecewise-constant hourly levels, right-continuous at boundaries."""

    hour_timestamps: np.ndarray
    levels: np.ndarray

    def __call__(self, t):
        hours = self.hour_timestamps
        tq = np.asarray(t)
        if np.any(tq < hours[0]) or np.any(tq >= hours[-1] + HOUR):
            raise AlignmentError("time outside the step curve's hours")
        out = self.levels[np.searchsorted(hours, tq, side="right") - 1]
        return float(out) if out.ndim == 0 else out


@dataclass(frozen=True, eq=False)
class StepSizes:
    """Signed step per hour boundary (MW); ``valid`` is False where undefined."""

    hour_timestamps: np.ndarray
    delta: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.delta, dtype=float).copy()
        v = np.asarray(self.valid, dtype=bool) & ~np.isnan(d)
        d[~v] = np.nan
        object.__setattr__(self, "hour_timestamps", np.asarray(self.hour_timestamps, dtype=np.int64))
        object.__setattr__(self, "delta", d)
        object.__setattr__(self, "valid", v)

    def __len__(self):
        return self.delta.size

    def take(self, idx) -> "StepSizes":
        return StepSizes(self.hour_timestamps[idx], self.delta[idx], self.valid[idx])


def step_sizes_from_hourly(hour_timestamps, values, mask=None) -> StepSizes:
    """Backward differences: the step at ``t_i`` is ``value(t_i) - value(t_i - 1h)``.

    The first boundary, boundaries after a gap in the hours, and boundaries
    next to a masked hour have no step.
    """
    hours = np.asarray(hour_timestamps, dtype=np.int64)
    v = np.asarray(values, dtype=float)
    if v.size < 2 or v.shape != hours.shape:
        raise DomainError("need at least 2 aligned hourly values")
    ok = np.ones(v.size, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    ok = ok & ~np.isnan(v)
    delta = np.full(v.size, np.nan)
    delta[1:] = v[1:] - v[:-1]
    valid = np.zeros(v.size, dtype=bool)
    valid[1:] = ok[1:] & ok[:-1] & (np.diff(hours) == HOUR)
    return StepSizes(hours, delta, valid)


def refined_step_sizes(load_steps: StepSizes, solar_steps: StepSizes) -> StepSizes:
    """Generation steps with the continuous solar ramp removed: load minus solar."""
    if load_steps.hour_timestamps.shape != solar_steps.hour_timestamps.shape or np.any(
            load_steps.hour_timestamps != solar_steps.hour_timestamps):
        raise AlignmentError("load and solar steps are not aligned")
    return StepSizes(load_steps.hour_timestamps,
                     load_steps.delta - solar_steps.delta,
                     load_steps.valid & solar_steps.valid)


def step_curve_from_steps(initial_level: float, steps: StepSizes) -> StepCurve:
    """Integrate steps into hourly levels; ``steps.delta[0]`` is not used."""
    d = np.where(steps.valid, steps.delta, 0.0)
    d[0] = 0.0
    return StepCurve(steps.hour_timestamps, initial_level + np.cumsum(d))


def refined_generation_curve(step_curve: StepCurve, solar_spline: CubicSpline, minutes):
    """Scheduled steps plus smooth solar generation at each minute."""
    t = np.asarray(minutes)
    try:
        return step_curve(t) + eval_spline(solar_spline, t)
    except (ExtrapolationError, AlignmentError) as exc:
        raise AlignmentError(f"minute grid outside curve domains: {exc}") from None


def minute_grid(start: int, stop: int) -> np.ndarray:
    """Minute timestamps in ``[start, stop]``."""
    return np.arange(start, stop + 1, 60, dtype=np.int64)


def write_minute_curve_csv(path, minutes, values) -> None:
    with Path(path).open("w", newline="") as fh:
        fh.write("minute_utc,value_mw\n")
        for t, v in zip(minutes, values):
            fh.write(f"{format_utc(t)},{float(v)!r}\n")
