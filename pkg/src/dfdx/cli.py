"""Command-line pipeline: ``synth``, ``rocof``, ``fit-linear`` and ``fit-ml``.

Every artifact is a pure function of the input files and the run
configuration; reports contain no wall-clock data.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from . import curves, evaluate, gbt, linmodel, shapx
from .ingest import (
    HOUR,
    FeatureTable,
    SchemaError,
    format_utc,
    parse_utc,
    read_feature_csv,
    read_frequency_csv,
    read_synthetic_config,
    synthesize_dataset,
    write_feature_csv,
    write_frequency_csv,
)
from .signal import RocofSeries, read_rocof_csv, rocof_series, trace_hours, write_rocof_csv

log = logging.getLogger("dfdx")

LINEAR_VARIANTS = {
    # name: (step input, fit intercept)
    "load_based": ("load_step", False),
    "load_based_bias": ("load_step", True),
    "refined": ("refined_step", True),
    "refined_no_bias": ("refined_step", False),
}

_PROFILE_SCHEMA = {
    "type": "object",
    "required": ["mean", "count"],
    "properties": {
        "mean": {"type": "array", "minItems": 24, "maxItems": 24,
                 "items": {"type": ["number", "null"]}},
        "count": {"type": "array", "minItems": 24, "maxItems": 24,
                  "items": {"type": "integer", "minimum": 0}},
    },
}
_SIGN_SCHEMA = {
    "type": "object",
    "required": ["matches", "mismatched_hours", "excluded_hours"],
    "properties": {
        "matches": {"type": "integer", "minimum": 0, "maximum": 24},
        "mismatched_hours": {"type": "array", "items": {"type": "integer"}},
        "excluded_hours": {"type": "array", "items": {"type": "integer"}},
    },
}
LINEAR_REPORT_SCHEMA = {
    "type": "object",
    "required": ["units", "n_rows", "n_train", "n_test", "n_invalid_rocof",
                 "data_profile_test", "data_profile_all", "models"],
    "properties": {
        "units": {"type": "object"},
        "n_rows": {"type": "integer"},
        "n_train": {"type": "integer"},
        "n_test": {"type": "integer"},
        "n_invalid_rocof": {"type": "integer"},
        "data_profile_test": _PROFILE_SCHEMA,
        "data_profile_all": _PROFILE_SCHEMA,
        "models": {
            "type": "object",
            "required": list(LINEAR_VARIANTS),
            "additionalProperties": {
                "type": "object",
                "required": ["slope", "intercept", "uses_intercept", "input_kind", "r2_test",
                             "profile_test", "profile_all", "sign_match_test", "sign_match_all"],
                "properties": {
                    "slope": {"type": "number"},
                    "intercept": {"type": "number"},
                    "uses_intercept": {"type": "boolean"},
                    "input_kind": {"enum": list(linmodel.INPUT_KINDS)},
                    "r2_test": {"type": ["number", "null"]},
                    "profile_test": _PROFILE_SCHEMA,
                    "profile_all": _PROFILE_SCHEMA,
                    "sign_match_test": _SIGN_SCHEMA,
                    "sign_match_all": _SIGN_SCHEMA,
                },
            },
        },
    },
}


@dataclass(frozen=True)
class RunConfig:
    out: Path
    freq: Optional[Path] = None
    features: Optional[Path] = None
    synth_config: Optional[Path] = None
    rocof: Optional[Path] = None
    seed: int = 0
    window_T: int = 30
    window_L: int = 30
    align: str = "center"
    grid: str = "small"
    pin_start: Optional[str] = None
    test_frac: float = 0.2
    cv_folds: int = 5

    def validate(self, need_features: bool) -> None:
        if self.synth_config is not None and (self.freq or self.features or self.rocof):
            raise ValueError("give either --synth-config or input files, not both")
        if self.synth_config is None:
            if need_features and self.features is None:
                raise ValueError("--features is required (or use --synth-config)")
            if self.freq is None and self.rocof is None:
                raise ValueError("--freq or --rocof is required (or use --synth-config)")
        if self.grid not in gbt.GRIDS:
            raise ValueError(f"unknown grid {self.grid!r}; choose from {sorted(gbt.GRIDS)}")
        for p in (self.freq, self.features, self.synth_config, self.rocof):
            if p is not None and not Path(p).is_file():
                raise FileNotFoundError(f"input file not found: {p}")


@dataclass(frozen=True, eq=False)
class Dataset:
    table: Optional[FeatureTable]
    rocof: RocofSeries
    ground_truth: Optional[RocofSeries] = None


def load_dataset(cfg: RunConfig, need_features: bool = True) -> Dataset:
    cfg.validate(need_features)
    truth = None
    trace = None
    if cfg.synth_config is not None:
        trace, table, truth = synthesize_dataset(read_synthetic_config(cfg.synth_config))
    else:
        table = read_feature_csv(cfg.features) if cfg.features is not None else None
        if cfg.rocof is None:
            trace = read_frequency_csv(cfg.freq)
    if cfg.rocof is not None:
        rocof = read_rocof_csv(cfg.rocof)
        if table is not None and not np.array_equal(rocof.hour_timestamps, table.hour_timestamps):
            raise SchemaError("RoCoF file hours do not match the feature table")
    else:
        hours = table.hour_timestamps if table is not None else trace_hours(trace)
        rocof = rocof_series(trace, hours, cfg.window_T, cfg.window_L, cfg.align)
    return Dataset(table, rocof, truth)


def _steps(table: FeatureTable, level: str, ramp: str) -> curves.StepSizes:
    if ramp in table.columns:
        return curves.StepSizes(table.hour_timestamps, table.columns[ramp], table.row_mask)
    if level in table.columns:
        return curves.step_sizes_from_hourly(table.hour_timestamps, table.columns[level],
                                             table.row_mask)
    raise SchemaError(f"feature table needs a {ramp!r} or {level!r} column")


def step_inputs(table: FeatureTable) -> dict:
    load = _steps(table, "load", "load_ramp")
    solar = _steps(table, "solar", "solar_ramp")
    return {"load_step": load, "refined_step": curves.refined_step_sizes(load, solar)}


def make_split(cfg: RunConfig, ds: Dataset) -> gbt.Split:
    pin = parse_utc(cfg.pin_start) if cfg.pin_start else None
    return gbt.train_test_split(ds.table, ds.rocof, cfg.test_frac, pin, 24, cfg.seed)


def _mask(n, idx):
    m = np.zeros(n, dtype=bool)
    m[idx] = True
    return m


def _restrict(s: RocofSeries, keep: np.ndarray) -> RocofSeries:
    return RocofSeries(s.hour_timestamps, s.rocof, s.valid & keep)


def _dump(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n")


UNITS = {"rocof": "mHz/s", "slope": "mHz/s per MW", "intercept": "mHz/s", "steps": "MW"}


# --------------------------------------------------------------------------
# commands


def cmd_synth(cfg: RunConfig) -> dict:
    if cfg.synth_config is None:
        raise ValueError("--synth-config is required")
    if not Path(cfg.synth_config).is_file():
        raise FileNotFoundError(f"input file not found: {cfg.synth_config}")
    trace, table, truth = synthesize_dataset(read_synthetic_config(cfg.synth_config))
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    write_frequency_csv(out / "frequency.csv", trace)
    write_feature_csv(out / "features.csv", table)
    write_rocof_csv(out / "ground_truth.csv", truth)
    return {"frequency": out / "frequency.csv", "features": out / "features.csv",
            "ground_truth": out / "ground_truth.csv"}


def cmd_rocof(cfg: RunConfig) -> RocofSeries:
    ds = load_dataset(cfg, need_features=False)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    write_rocof_csv(out / "rocof.csv", ds.rocof)
    log.info("wrote %d hours (%d invalid)", len(ds.rocof), int((~ds.rocof.valid).sum()))
    return ds.rocof


def _write_curves(out: Path, table: FeatureTable, steps: dict, day_start: int) -> None:
    if "load" not in table.columns or "solar" not in table.columns:
        log.info("no load/solar level columns; skipping minute curves")
        return
    hours = table.hour_timestamps
    sel = (hours >= day_start - HOUR) & (hours <= day_start + 24 * HOUR)
    if np.count_nonzero(sel) < 3 or not table.row_mask[sel].all():
        log.info("curve day %s incomplete; skipping minute curves", format_utc(day_start))
        return
    h = hours[sel]
    load = table.columns["load"][sel]
    solar = table.columns["solar"][sel]
    minutes = curves.minute_grid(int(h[0]), int(h[-1]))
    load_spline = curves.hourly_spline(h, load)
    solar_spline = curves.hourly_spline(h, solar)
    load_steps_curve = curves.StepCurve(h, load)
    refined = steps["refined_step"].take(np.flatnonzero(sel))
    g_l = curves.step_curve_from_steps(float(load[0] - solar[0]), refined)
    cdir = out / "curves"
    cdir.mkdir(exist_ok=True)
    curves.write_minute_curve_csv(cdir / "load.csv", minutes, load_spline(minutes))
    curves.write_minute_curve_csv(cdir / "generation_load_based.csv", minutes, load_steps_curve(minutes))
    curves.write_minute_curve_csv(cdir / "solar.csv", minutes, solar_spline(minutes))
    curves.write_minute_curve_csv(cdir / "generation_refined.csv", minutes,
                                  curves.refined_generation_curve(g_l, solar_spline, minutes))


def fit_linear_models(ds: Dataset, split: gbt.Split) -> dict:
    """Fit every linear variant on the training rows; returns name -> (model, predictions)."""
    n = len(ds.table)
    steps = step_inputs(ds.table)
    train_y = _restrict(ds.rocof, _mask(n, split.train))
    fitted = {}
    for name, (kind, with_b) in LINEAR_VARIANTS.items():
        x = steps[kind]
        x = curves.StepSizes(x.hour_timestamps, x.delta, x.valid & ds.table.row_mask)
        m = linmodel.fit_least_squares(x, train_y, with_b, kind)
        fitted[name] = (m, linmodel.predict(m, x))
    return fitted


def _score(y: RocofSeries, pred: RocofSeries):
    try:
        return evaluate.r2_score(y, pred)
    except evaluate.UndefinedScoreError:
        return None


def cmd_fit_linear(cfg: RunConfig) -> dict:
    ds = load_dataset(cfg)
    split = make_split(cfg, ds)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    n = len(ds.table)
    test_mask = _mask(n, split.test)
    y_test = _restrict(ds.rocof, test_mask)
    data_test = evaluate.daily_profile(y_test)
    data_all = evaluate.daily_profile(_restrict(ds.rocof, ds.table.row_mask))
    fitted = fit_linear_models(ds, split)

    models = {}
    for name, (m, pred) in fitted.items():
        linmodel.save_model(out / f"linear_{name}.json", m)
        p_test = evaluate.daily_profile(_restrict(pred, test_mask))
        p_all = evaluate.daily_profile(pred)
        models[name] = {
            **dataclasses.asdict(m),
            "r2_test": _score(y_test, pred),
            "profile_test": p_test.to_dict(),
            "profile_all": p_all.to_dict(),
            "sign_match_test": evaluate.sign_match(p_test, data_test).to_dict(),
            "sign_match_all": evaluate.sign_match(p_all, data_all).to_dict(),
        }
    report = {
        "units": UNITS,
        "n_rows": n,
        "n_train": int(split.train.size),
        "n_test": int(split.test.size),
        "n_invalid_rocof": int(np.count_nonzero(~ds.rocof.valid)),
        "data_profile_test": data_test.to_dict(),
        "data_profile_all": data_all.to_dict(),
        "models": models,
    }
    _dump(out / "linear_report.json", report)

    with (out / "linear_predictions.csv").open("w") as fh:
        names = list(fitted)
        fh.write(",".join(["hour_utc", "rocof_mhz_per_s", "in_test",
                           *[f"{k}_mhz_per_s" for k in names]]) + "\n")
        for i, t in enumerate(ds.table.hour_timestamps):
            cells = [format_utc(t), _cell(ds.rocof.rocof[i]), str(int(test_mask[i]))]
            cells += [_cell(fitted[k][1].rocof[i]) for k in names]
            fh.write(",".join(cells) + "\n")

    day = parse_utc(cfg.pin_start) if cfg.pin_start else int(
        -(-ds.table.hour_timestamps[0] // 86400) * 86400 + 86400)
    _write_curves(out, ds.table, step_inputs(ds.table), day)
    write_rocof_csv(out / "rocof.csv", ds.rocof)
    return report


def _cell(v) -> str:
    return "" if np.isnan(v) else repr(float(v))


def run_ml(ds: Dataset, split: gbt.Split, grid, seed: int, k: int = 5):
    """Grid search on the training rows, refit, and explain the test rows."""
    names = ds.table.feature_names
    X = ds.table.matrix(names)
    y = ds.rocof.rocof
    grid = [dataclasses.replace(hp, rng_seed=seed) for hp in grid]
    best, scores = gbt.grid_search_cv(X[split.train], y[split.train], grid, k, seed, names)
    model = gbt.fit(X[split.train], y[split.train], best, names)
    sm = shapx.shap_matrix(model, X[split.test])
    return model, best, list(zip(grid, scores)), sm


def cmd_fit_ml(cfg: RunConfig) -> dict:
    ds = load_dataset(cfg)
    split = make_split(cfg, ds)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    model, best, cv, sm = run_ml(ds, split, gbt.GRIDS[cfg.grid], cfg.seed, cfg.cv_folds)
    test_hours = ds.table.hour_timestamps[split.test]
    y_test = ds.rocof.take(split.test)
    pred_test = RocofSeries(test_hours, sm.predictions, np.ones(split.test.size, dtype=bool))
    hod = evaluate.hour_of_day(test_hours)
    daily = shapx.daily_aggregate(sm, hod, y_test)

    gbt.save_ensemble(out / "ensemble.json", model)
    shapx.write_shap_csv(out / "shap_test.csv", sm, test_hours)
    shapx.write_daily_shap_csv(out / "daily_shap.csv", daily)
    ddir = out / "dependency"
    ddir.mkdir(exist_ok=True)
    X_test = ds.table.matrix()[split.test]
    for j, name in enumerate(sm.feature_names):
        shapx.write_dependency_csv(ddir / f"{name}.csv", name,
                                   shapx.dependency_pairs(sm, j, X_test[:, j]))
    p_test = evaluate.daily_profile(pred_test)
    d_test = evaluate.daily_profile(y_test)
    report = {
        "units": UNITS,
        "n_train": int(split.train.size),
        "n_test": int(split.test.size),
        "best_hyperparams": dataclasses.asdict(best),
        "cv_scores": [{"hyperparams": dataclasses.asdict(hp), "mean_r2": s} for hp, s in cv],
        "r2_test": _score(y_test, pred_test),
        "base_value_mhz_per_s": sm.base_value,
        "profile_test": p_test.to_dict(),
        "data_profile_test": d_test.to_dict(),
        "sign_match_test": evaluate.sign_match(p_test, d_test).to_dict(),
        "daily_shap": {
            name: [None if np.isnan(v) else float(v) for v in daily.mean_shap[:, j]]
            for j, name in enumerate(sm.feature_names)
        },
    }
    _dump(out / "ml_report.json", report)
    return report


# --------------------------------------------------------------------------
# argument parsing


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="dfdx", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, files=True):
        p.add_argument("--out", required=True, type=Path, help="output directory")
        p.add_argument("--synth-config", type=Path, help="key=value synthetic data config")
        if files:
            p.add_argument("--freq", type=Path, help="timestamp_utc,frequency_hz CSV")
            p.add_argument("--features", type=Path, help="hour_utc,<feature...> CSV")
            p.add_argument("--rocof", type=Path, help="precomputed hour_utc,rocof_mhz_per_s,valid CSV")
            p.add_argument("--window-T", type=int, default=30, help="half-width of the search interval (s)")
            p.add_argument("--window-L", type=int, default=30, help="rolling-mean length (s)")
            p.add_argument("--align", choices=["center", "trailing"], default="center")
        return p

    common(sub.add_parser("synth", help="write a synthetic dataset"), files=False)
    common(sub.add_parser("rocof", help="extract hourly RoCoF"))
    for name, hlp in (("fit-linear", "fit the linear step models"),
                      ("fit-ml", "fit the boosted model and compute SHAP values")):
        p = common(sub.add_parser(name, help=hlp))
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--pin-start", help="UTC start of a 24 h block forced into the test set")
        p.add_argument("--test-frac", type=float, default=0.2)
        p.add_argument("--grid", choices=sorted(gbt.GRIDS), default="small")
        p.add_argument("--cv-folds", type=int, default=5)
    return ap


def config_from_args(ns: argparse.Namespace) -> RunConfig:
    fields = {f.name for f in dataclasses.fields(RunConfig)}
    return RunConfig(**{k: v for k, v in vars(ns).items() if k in fields and v is not None})


COMMANDS = {"synth": cmd_synth, "rocof": cmd_rocof, "fit-linear": cmd_fit_linear,
            "fit-ml": cmd_fit_ml}


def main(argv=None) -> int:
    ns = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if ns.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        COMMANDS[ns.command](config_from_args(ns))
    except (OSError, ValueError) as exc:
        print(f"dfdx {ns.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
