"""Linear RoCoF predictors driven by hourly generation steps.

``y = a * step`` (load-based) or ``y = a * step + b`` (with bias); the step
is either the load ramp or the solar-corrected generation step.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .curves import StepSizes
from .ingest import AlignmentError
from .signal import RocofSeries

INPUT_KINDS = ("load_step", "refined_step")


class RankError(ValueError):
    pass


@dataclass(frozen=True)
class LinearDfdModel:
    slope: float
    intercept: float = 0.0
    uses_intercept: bool = False
    input_kind: str = "load_step"
    n_fit: int = 0

    def __post_init__(self):
        if self.input_kind not in INPUT_KINDS:
            raise ValueError(f"input_kind must be one of {INPUT_KINDS}")
        if not (math.isfinite(self.slope) and math.isfinite(self.intercept)):
            raise ValueError("coefficients must be finite")
        if not self.uses_intercept and self.intercept != 0.0:
            raise ValueError("intercept must be 0 when uses_intercept is False")

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "LinearDfdModel":
        return cls(**json.loads(text))


def _pairs(x: StepSizes, y: RocofSeries):
    if x.hour_timestamps.shape != y.hour_timestamps.shape or np.any(
            x.hour_timestamps != y.hour_timestamps):
        raise AlignmentError("steps and RoCoF series are not aligned")
    ok = x.valid & y.valid
    return x.delta[ok], y.rocof[ok]


def fit_least_squares(x: StepSizes, y: RocofSeries, with_intercept: bool,
                      input_kind: str = "load_step") -> LinearDfdModel:
    """Ordinary least squares over hours where both step and RoCoF are valid.

    Sums are accumulated with :func:`math.fsum` and the with-intercept fit is
    computed in centred form, so the result is the exactly rounded solution
    of the normal equations for all practical inputs.
    """
    xv, yv = _pairs(x, y)
    n = xv.size
    if n < 2:
        raise RankError(f"need at least 2 valid pairs, got {n}")
    if with_intercept:
        xm = math.fsum(xv) / n
        ym = math.fsum(yv) / n
        dx = xv - xm
        sxx = math.fsum(dx * dx)
        if sxx == 0.0:
            raise RankError("all step values are equal; slope and intercept are not identifiable")
        a = math.fsum(dx * (yv - ym)) / sxx
        b = ym - a * xm
    else:
        sxx = math.fsum(xv * xv)
        if sxx == 0.0:
            raise RankError("all step values are zero; slope is not identifiable")
        a = math.fsum(xv * yv) / sxx
        b = 0.0
    return LinearDfdModel(float(a), float(b), bool(with_intercept), input_kind, int(n))


def predict(m: LinearDfdModel, x: StepSizes) -> RocofSeries:
    y = m.slope * x.delta + m.intercept
    return RocofSeries(x.hour_timestamps, y, x.valid)


def save_model(path, m: LinearDfdModel) -> None:
    Path(path).write_text(m.to_json() + "\n")


def load_model(path) -> LinearDfdModel:
    return LinearDfdModel.from_json(Path(path).read_text())
