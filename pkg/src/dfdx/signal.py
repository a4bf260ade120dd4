"""Hourly rate-of-change-of-frequency (RoCoF) extraction.

The derivative is estimated from one-second increments, smoothed with a
rectangular rolling mean, and the RoCoF of an hour boundary is the smoothed
derivative at the point of largest magnitude within ``[t_i - T, t_i + T]``.
Frequencies are in Hz, derivatives in mHz/s.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .ingest import HOUR, AlignmentError, FrequencyTrace, ParseError, format_utc, parse_utc


class SizeError(ValueError):
    pass


class InvalidWindow(ValueError):
    """The extraction window is incomplete or contains missing samples."""


@dataclass(frozen=True, eq=False)
class DerivativeSeries:
    """Estimated df/dt in mHz/s. ``values[k]`` belongs to ``start_time + k * sample_period``."""

    start_time: int
    values: np.ndarray
    sample_period: int = 1

    def __len__(self):
        return self.values.size


@dataclass(frozen=True, eq=False)
class RocofSeries:
    """One signed RoCoF value per hour boundary; invalid hours hold NaN."""

    hour_timestamps: np.ndarray
    rocof: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        hours = np.asarray(self.hour_timestamps, dtype=np.int64)
        vals = np.asarray(self.rocof, dtype=float).copy()
        valid = np.asarray(self.valid, dtype=bool) & ~np.isnan(vals)
        if not (hours.shape == vals.shape == valid.shape) or hours.ndim != 1:
            raise SizeError("hour_timestamps, rocof and valid must have equal length")
        vals[~valid] = np.nan
        for a in (hours, vals, valid):
            a.setflags(write=False)
        object.__setattr__(self, "hour_timestamps", hours)
        object.__setattr__(self, "rocof", vals)
        object.__setattr__(self, "valid", valid)

    def __len__(self):
        return self.hour_timestamps.size

    def take(self, idx) -> "RocofSeries":
        return RocofSeries(self.hour_timestamps[idx], self.rocof[idx], self.valid[idx])


def increments(trace: FrequencyTrace) -> DerivativeSeries:
    """Forward differences ``f[k+1] - f[k]`` per sample period, in mHz/s."""
    f = np.asarray(trace.values, dtype=float)
    if f.size < 2:
        raise SizeError("trace needs at least 2 samples")
    d = np.diff(f) * (1e3 / trace.sample_period)
    return DerivativeSeries(trace.start_time, d, trace.sample_period)


def _window_offset(width: int, align: str) -> int:
    if align == "center":
        return width // 2
    if align == "trailing":
        return width - 1
    raise ValueError(f"unknown window alignment {align!r}")


def _window_samples(window_len, sample_period) -> int:
    width, rem = divmod(window_len, sample_period)
    if rem or width < 1:
        raise ValueError("window_len must be a positive multiple of sample_period")
    return int(width)


def _rolling(values: np.ndarray, width: int, offset: int) -> np.ndarray:
    n = values.size
    out = np.full(n, np.nan)
    if width > n:
        raise SizeError(f"window of {width} samples longer than series of {n}")
    bad = np.isnan(values)
    sums = np.convolve(np.where(bad, 0.0, values), np.ones(width), mode="valid")
    nbad = np.convolve(bad.astype(np.int64), np.ones(width, dtype=np.int64), mode="valid")
    means = sums / width
    means[nbad > 0] = np.nan
    # means[j] averages values[j : j + width] and is reported at j + offset
    out[offset:offset + means.size] = means
    return out


def rolling_mean(d: DerivativeSeries, window_len: int = 30, align: str = "center") -> DerivativeSeries:
    """Rectangular rolling mean of ``window_len`` seconds.

    With ``align="center"`` the value at index k averages
    ``d[k - w//2 : k - w//2 + w]``; for even ``w`` the window reaches one
    sample further into the past. Positions where the window does not fit or
    holds a NaN are NaN.
    """
    width = _window_samples(window_len, d.sample_period)
    out = _rolling(np.asarray(d.values, dtype=float), width, _window_offset(width, align))
    return DerivativeSeries(d.start_time, out, d.sample_period)


def extract_rocof(trace: FrequencyTrace, t_i: int, T: int = 30, L: int = 30,
                  align: str = "center") -> float:
    """Signed smoothed df/dt (mHz/s) at the largest |df/dt| in ``[t_i - T, t_i + T]``.

    Ties go to the earliest time. Raises :class:`InvalidWindow` if any sample
    the computation depends on is missing or outside the trace.
    """
    p = trace.sample_period
    width = _window_samples(L, p)
    half, rem = divmod(T, p)
    if rem or half < 0:
        raise ValueError("T must be a non-negative multiple of sample_period")
    offset = _window_offset(width, align)
    k = trace.index_of(t_i)
    # smoothed value at j uses f[j - offset : j - offset + width + 1]
    lo = k - half - offset
    hi = k + half - offset + width + 1
    if lo < 0 or hi > len(trace):
        raise InvalidWindow(f"window around {format_utc(t_i)} exceeds the trace")
    f = trace.values[lo:hi]
    if np.isnan(f).any():
        raise InvalidWindow(f"missing samples around {format_utc(t_i)}")
    d = np.diff(f) * (1e3 / p)
    smooth = np.convolve(d, np.ones(width), mode="valid") / width
    return float(smooth[np.argmax(np.abs(smooth))])


def rocof_series(trace: FrequencyTrace, hours, T: int = 30, L: int = 30,
                 align: str = "center") -> RocofSeries:
    """Apply :func:`extract_rocof` to every hour; failing hours are marked invalid."""
    hours = np.asarray(hours, dtype=np.int64)
    if np.any(hours % HOUR):
        raise AlignmentError("hour boundaries must be hour-aligned")
    if np.any(np.diff(hours) <= 0):
        raise AlignmentError("hour boundaries must be sorted")
    out = np.full(hours.size, np.nan)
    valid = np.zeros(hours.size, dtype=bool)
    for i, t in enumerate(hours):
        try:
            out[i] = extract_rocof(trace, int(t), T, L, align)
            valid[i] = True
        except (InvalidWindow, AlignmentError):
            pass
    return RocofSeries(hours, out, valid)


def trace_hours(trace: FrequencyTrace) -> np.ndarray:
    """All full-hour boundaries that fall inside the trace."""
    first = -(-trace.start_time // HOUR) * HOUR
    last = trace.start_time + (len(trace) - 1) * trace.sample_period
    return np.arange(first, last + 1, HOUR, dtype=np.int64)


def write_rocof_csv(path, series: RocofSeries) -> None:
    with Path(path).open("w", newline="") as fh:
        fh.write("hour_utc,rocof_mhz_per_s,valid\n")
        for t, v, ok in zip(series.hour_timestamps, series.rocof, series.valid):
            fh.write(f"{format_utc(t)},{repr(float(v)) if ok else ''},{int(ok)}\n")


def read_rocof_csv(path) -> RocofSeries:
    path = Path(path)
    hours, vals, valid = [], [], []
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["hour_utc", "rocof_mhz_per_s", "valid"]:
            raise ParseError(path, 1, "expected header 'hour_utc,rocof_mhz_per_s,valid'")
        for row in reader:
            if not row:
                continue
            try:
                ok = row[2].strip() == "1"
                hours.append(parse_utc(row[0]))
                vals.append(float(row[1]) if ok else math.nan)
                valid.append(ok)
            except (ValueError, IndexError) as exc:
                raise ParseError(path, reader.line_num, str(exc)) from None
    return RocofSeries(np.asarray(hours, dtype=np.int64), np.asarray(vals), np.asarray(valid))
