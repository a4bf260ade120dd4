"""Frequency and feature ingestion, plus a seeded synthetic data generator.

Timestamps are carried internally as integer seconds since the Unix epoch
(UTC). On disk they are ISO-8601 strings such as ``2016-12-01T00:00:00Z``.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

HOUR = 3600


class ParseError(ValueError):
    """Malformed input row; carries the 1-based line number."""

    def __init__(self, path, line, msg):
        self.path = str(path)
        self.line = line
        super().__init__(f"{path}:{line}: {msg}")


class OrderingError(ValueError):
    pass


class SchemaError(ValueError):
    pass


class AlignmentError(ValueError):
    pass


def parse_utc(text: str) -> int:
    """Parse an ISO-8601 UTC timestamp into epoch seconds."""
    s = text.strip()
    if s.endswith("Z") or s.endswith("z"):
        s = s[:-1] + "+00:00"
    dt = datetime.fromisoformat(s)
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    ts = dt.timestamp()
    if ts != int(ts):
        raise ValueError(f"sub-second timestamp not supported: {text!r}")
    return int(ts)


def format_utc(ts: int) -> str:
    return datetime.fromtimestamp(int(ts), tz=timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def _fmt(v: float) -> str:
    # repr round-trips float64 exactly; NaN is written as an empty cell
    return "" if math.isnan(v) else repr(float(v))


@dataclass(frozen=True, eq=False)
class FrequencyTrace:
    """Uniformly sampled grid frequency in Hz. Missing samples are NaN."""

    start_time: int
    values: np.ndarray
    sample_period: int = 1

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if self.sample_period <= 0:
            raise ValueError("sample_period must be positive")
        if vals.ndim != 1 or vals.size < 2:
            raise ValueError("a frequency trace needs at least 2 samples")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    def __len__(self):
        return self.values.size

    @property
    def times(self) -> np.ndarray:
        return self.start_time + self.sample_period * np.arange(self.values.size, dtype=np.int64)

    def index_of(self, t: int) -> int:
        """Sample index of time ``t``; may fall outside the trace."""
        k, rem = divmod(t - self.start_time, self.sample_period)
        if rem:
            raise AlignmentError(f"time {t} is not on the sample grid")
        return k


@dataclass(frozen=True, eq=False)
class FeatureTable:
    """Hourly external features. ``row_mask`` is True for valid rows."""

    hour_timestamps: np.ndarray
    columns: dict
    row_mask: np.ndarray = None

    def __post_init__(self):
        hours = np.asarray(self.hour_timestamps, dtype=np.int64)
        if hours.ndim != 1:
            raise ValueError("hour_timestamps must be one-dimensional")
        if np.any(hours % HOUR):
            raise AlignmentError("feature timestamps must be hour-aligned")
        if np.any(np.diff(hours) <= 0):
            raise OrderingError("feature timestamps must be strictly increasing")
        cols = {}
        for name, col in self.columns.items():
            arr = np.asarray(col, dtype=float)
            if arr.shape != hours.shape:
                raise SchemaError(f"column {name!r} has length {arr.size}, expected {hours.size}")
            arr.setflags(write=False)
            cols[name] = arr
        if self.row_mask is None:
            mask = np.ones(hours.size, dtype=bool)
            for arr in cols.values():
                mask &= ~np.isnan(arr)
        else:
            mask = np.asarray(self.row_mask, dtype=bool).copy()
            if mask.shape != hours.shape:
                raise SchemaError("row_mask length does not match the table")
        hours.setflags(write=False)
        mask.setflags(write=False)
        object.__setattr__(self, "hour_timestamps", hours)
        object.__setattr__(self, "columns", cols)
        object.__setattr__(self, "row_mask", mask)

    def __len__(self):
        return self.hour_timestamps.size

    @property
    def feature_names(self) -> list:
        return list(self.columns)

    def matrix(self, names=None) -> np.ndarray:
        names = self.feature_names if names is None else names
        missing = [n for n in names if n not in self.columns]
        if missing:
            raise SchemaError(f"unknown feature(s): {missing}")
        if not names:
            return np.empty((len(self), 0))
        return np.column_stack([self.columns[n] for n in names])

    def take(self, idx) -> "FeatureTable":
        idx = np.asarray(idx)
        return FeatureTable(
            self.hour_timestamps[idx],
            {k: v[idx] for k, v in self.columns.items()},
            self.row_mask[idx],
        )

    def with_column(self, name, values) -> "FeatureTable":
        cols = dict(self.columns)
        cols[name] = values
        mask = self.row_mask & ~np.isnan(np.asarray(values, dtype=float))
        return FeatureTable(self.hour_timestamps, cols, mask)


# --------------------------------------------------------------------------
# CSV readers and writers


def read_frequency_csv(path, sample_period: int = 1) -> FrequencyTrace:
    """Read a ``timestamp_utc,frequency_hz`` file.

    Gaps in the timestamp sequence are filled with NaN samples so that the
    returned trace is uniform. Empty frequency cells also become NaN.
    """
    path = Path(path)
    times, vals = [], []
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["timestamp_utc", "frequency_hz"]:
            raise ParseError(path, 1, "expected header 'timestamp_utc,frequency_hz'")
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 2:
                raise ParseError(path, line, f"expected 2 fields, got {len(row)}")
            try:
                t = parse_utc(row[0])
                v = float(row[1]) if row[1].strip() else math.nan
            except ValueError as exc:
                raise ParseError(path, line, str(exc)) from None
            if times and t <= times[-1]:
                raise OrderingError(f"{path}:{line}: timestamp not after previous row")
            if (t - (times[0] if times else t)) % sample_period:
                raise ParseError(path, line, "timestamp off the sample grid")
            times.append(t)
            vals.append(v)
    if len(times) < 2:
        raise ParseError(path, 1, "need at least 2 samples")
    t = np.asarray(times, dtype=np.int64)
    idx = (t - t[0]) // sample_period
    out = np.full(idx[-1] + 1, np.nan)
    out[idx] = vals
    return FrequencyTrace(int(t[0]), out, sample_period)


def write_frequency_csv(path, trace: FrequencyTrace) -> None:
    stamps = np.datetime_as_string(trace.times.astype("datetime64[s]"), unit="s")
    with Path(path).open("w", newline="") as fh:
        fh.write("timestamp_utc,frequency_hz\n")
        fh.writelines(f"{t}Z,{_fmt(v)}\n" for t, v in zip(stamps, trace.values.tolist()))


def read_feature_csv(path) -> FeatureTable:
    """Read an ``hour_utc,<feature...>`` file; rows with empty cells are masked."""
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[0].strip() != "hour_utc":
            raise SchemaError(f"{path}: first column must be 'hour_utc'")
        names = [h.strip() for h in header[1:]]
        if len(set(names)) != len(names) or "hour_utc" in names:
            dup = sorted({n for n in names if names.count(n) > 1 or n == "hour_utc"})
            raise SchemaError(f"{path}: duplicate column name(s) {dup}")
        hours, rows = [], []
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise ParseError(path, line, f"expected {len(header)} fields, got {len(row)}")
            try:
                t = parse_utc(row[0])
                vals = [float(c) if c.strip() else math.nan for c in row[1:]]
            except ValueError as exc:
                raise ParseError(path, line, str(exc)) from None
            if t % HOUR:
                raise AlignmentError(f"{path}:{line}: timestamp {row[0]!r} is not hour-aligned")
            if hours and t <= hours[-1]:
                raise OrderingError(f"{path}:{line}: timestamp not after previous row")
            hours.append(t)
            rows.append(vals)
    data = np.asarray(rows, dtype=float).reshape(len(rows), len(names))
    mask = ~np.isnan(data).any(axis=1)
    return FeatureTable(np.asarray(hours, dtype=np.int64),
                        {n: data[:, j] for j, n in enumerate(names)}, mask)


def write_feature_csv(path, table: FeatureTable) -> None:
    names = table.feature_names
    with Path(path).open("w", newline="") as fh:
        fh.write(",".join(["hour_utc", *names]) + "\n")
        for i, t in enumerate(table.hour_timestamps):
            cells = [format_utc(t)]
            cells.extend(_fmt(table.columns[n][i]) for n in names)
            fh.write(",".join(cells) + "\n")


# --------------------------------------------------------------------------
# synthetic data

# Rough Continental-European daily shapes (MW), hour 0..23 UTC.
DEFAULT_LOAD_PROFILE = (
    270e3, 262e3, 257e3, 255e3, 256e3, 262e3, 280e3, 310e3, 332e3, 343e3, 350e3, 354e3,
    354e3, 350e3, 343e3, 338e3, 337e3, 339e3, 343e3, 339e3, 328e3, 312e3, 295e3, 281e3,
)
DEFAULT_SOLAR_PROFILE = (
    0.0, 0.0, 0.0, 0.0, 0.0, 1e3, 5e3, 14e3, 27e3, 41e3, 52e3, 58e3,
    59e3, 54e3, 45e3, 33e3, 20e3, 9e3, 2e3, 0.0, 0.0, 0.0, 0.0, 0.0,
)


@dataclass(frozen=True)
class SyntheticConfig:
    """Parameters of the synthetic DFD generator.

    Each day draws a load scale ``1 + N(0, load_day_std)`` and a solar scale
    ``U(solar_min_scale, 1)``; both stretch the profile around its minimum, so
    flat profiles never produce steps. ``rocof_bias`` and ``hour_offsets``
    (hour-of-day -> mHz/s) add slope components no step model can see.
    """

    n_days: int = 30
    noise_std: float = 0.0
    imbalance_gain: float = 1e-4
    load_profile: tuple = DEFAULT_LOAD_PROFILE
    solar_profile: tuple = DEFAULT_SOLAR_PROFILE
    rng_seed: int = 0
    start: str = "2016-12-01T00:00:00Z"
    load_day_std: float = 0.0
    solar_min_scale: float = 1.0
    hourly_jitter_mw: float = 0.0
    rocof_bias: float = 0.0
    hour_offsets: dict = field(default_factory=dict)
    ramp_seconds: int = 300
    recovery_seconds: int = 2400

    def __post_init__(self):
        if self.n_days < 1:
            raise ValueError("n_days must be >= 1")
        if self.noise_std < 0:
            raise ValueError("noise_std must be >= 0")
        if len(self.load_profile) != 24 or len(self.solar_profile) != 24:
            raise ValueError("load_profile and solar_profile need 24 hourly values")
        if not 0.0 <= self.solar_min_scale <= 1.0:
            raise ValueError("solar_min_scale must lie in [0, 1]")
        if self.load_day_std < 0 or self.hourly_jitter_mw < 0:
            raise ValueError("variability parameters must be >= 0")
        if self.ramp_seconds < 1 or self.recovery_seconds < 1:
            raise ValueError("ramp and recovery durations must be positive")
        # the next hour's extraction window must see a flat frequency
        if self.ramp_seconds + self.recovery_seconds > HOUR - 120:
            raise ValueError("ramp + recovery must end well before the next hour")
        if parse_utc(self.start) % 86400:
            raise AlignmentError("start must be a UTC midnight")
        object.__setattr__(self, "load_profile", tuple(float(v) for v in self.load_profile))
        object.__setattr__(self, "solar_profile", tuple(float(v) for v in self.solar_profile))
        object.__setattr__(self, "hour_offsets",
                           {int(k): float(v) for k, v in dict(self.hour_offsets).items()})


_LIST_KEYS = {"load_profile", "solar_profile"}
_INT_KEYS = {"n_days", "rng_seed", "ramp_seconds", "recovery_seconds"}


def read_synthetic_config(path) -> SyntheticConfig:
    """Parse a flat ``key=value`` file. Lists are comma separated;
    ``hour_offsets`` is written as ``22:-1.0,4:0.2``."""
    kwargs = {}
    known = set(SyntheticConfig.__dataclass_fields__)
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError(path, lineno, "expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in known:
            raise ParseError(path, lineno, f"unknown key {key!r}")
        try:
            if key in _LIST_KEYS:
                kwargs[key] = tuple(float(v) for v in value.split(","))
            elif key == "hour_offsets":
                pairs = [p.split(":") for p in value.split(",") if p.strip()]
                kwargs[key] = {int(h): float(v) for h, v in pairs}
            elif key in _INT_KEYS:
                kwargs[key] = int(value)
            elif key == "start":
                kwargs[key] = value
            else:
                kwargs[key] = float(value)
        except ValueError as exc:
            raise ParseError(path, lineno, str(exc)) from None
    return SyntheticConfig(**kwargs)


def write_synthetic_config(path, cfg: SyntheticConfig) -> None:
    lines = []
    for key in SyntheticConfig.__dataclass_fields__:
        v = getattr(cfg, key)
        if key in _LIST_KEYS:
            v = ",".join(repr(x) for x in v)
        elif key == "hour_offsets":
            v = ",".join(f"{h}:{x!r}" for h, x in sorted(v.items()))
        elif isinstance(v, float):
            v = repr(v)
        lines.append(f"{key}={v}")
    Path(path).write_text("\n".join(lines) + "\n")


def _daily_curve(profile, scale):
    base = min(profile)
    return base + scale * (np.asarray(profile) - base)


def synthesize_dataset(cfg: SyntheticConfig):
    """Generate ``(trace, features, ground_truth)`` from a schedule-step model.

    At every hour boundary the generation step is the load ramp minus the
    solar ramp. The frequency deviation then ramps for ``ramp_seconds`` at
    ``imbalance_gain * step`` (plus bias and hour offset) mHz/s and recovers
    linearly back to nominal over ``recovery_seconds``. White Gaussian noise of
    ``noise_std`` Hz is added per sample. ``ground_truth`` holds the
    noise-free ramp slope per boundary.
    """
    from .signal import RocofSeries

    rng = np.random.default_rng(cfg.rng_seed)
    n_hours = 24 * cfg.n_days
    t0 = parse_utc(cfg.start)

    # hour -1 (the day before) anchors the first boundary's ramp
    load_scale = 1.0 + cfg.load_day_std * rng.standard_normal(cfg.n_days + 1)
    solar_scale = rng.uniform(cfg.solar_min_scale, 1.0, size=cfg.n_days + 1)
    load = np.concatenate([_daily_curve(cfg.load_profile, s) for s in load_scale])[23:]
    solar = np.concatenate([_daily_curve(cfg.solar_profile, s) for s in solar_scale])[23:]
    if cfg.hourly_jitter_mw > 0:
        load = load + cfg.hourly_jitter_mw * rng.standard_normal(load.size)
        solar = np.maximum(solar + 0.25 * cfg.hourly_jitter_mw * rng.standard_normal(solar.size)
                           * (solar > 0), 0.0)
    load_ramp = np.diff(load)
    solar_ramp = np.diff(solar)
    load, solar = load[1:], solar[1:]

    hours = t0 + HOUR * np.arange(n_hours, dtype=np.int64)
    hod = (hours // HOUR) % 24
    offsets = np.array([cfg.hour_offsets.get(int(h), 0.0) for h in hod])
    slope = cfg.imbalance_gain * (load_ramp - solar_ramp) + cfg.rocof_bias + offsets

    # frequency deviation in mHz, one sample per second, starting one hour early
    ramp, rec = cfg.ramp_seconds, cfg.recovery_seconds
    j = np.arange(HOUR, dtype=float)
    shape = np.where(j <= ramp, j, np.maximum(ramp - (j - ramp) * ramp / rec, 0.0))
    dev = np.concatenate([np.zeros(HOUR), (slope[:, None] * shape[None, :]).ravel()])
    n_samples = dev.size
    freq = 50.0 + dev * 1e-3
    if cfg.noise_std > 0:
        freq = freq + cfg.noise_std * rng.standard_normal(n_samples)

    trace = FrequencyTrace(t0 - HOUR, freq, 1)
    columns = {
        "load": load,
        "solar": solar,
        "load_ramp": load_ramp,
        "solar_ramp": solar_ramp,
        "hour": hod.astype(float),
        "weekday": np.array([datetime.fromtimestamp(int(t), tz=timezone.utc).weekday()
                             for t in hours], dtype=float),
        "month": np.array([datetime.fromtimestamp(int(t), tz=timezone.utc).month
                           for t in hours], dtype=float),
    }
    features = FeatureTable(hours, columns)
    truth = RocofSeries(hours, slope.copy(), np.ones(n_hours, dtype=bool))
    return trace, features, truth
