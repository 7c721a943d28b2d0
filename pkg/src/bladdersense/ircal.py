"""IR rangefinder calibration estimators.

Three ways to turn dimensionless rangefinder counts into a distance:
a log-linear curve, a two-segment piecewise linear regression, and a
complementary blend of the two linear segments. A reference coefficient
set ships as the default calibration; each estimator can also be refitted
from labeled data.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.exceptions import NotFittedError

from .validation import as_float_array, require

MODEL_FORMAT_VERSION = "1"

# Where the steep line sits relative to the crossover. The reference
# calibration uses the steep line below the crossover; the alternative
# convention puts it above, where it covers the near-distance region.
ORIENTATION_STEEP_LOW = "steep_low"
ORIENTATION_STEEP_HIGH = "steep_high"


@dataclass(frozen=True)
class Line:
    slope: float
    intercept: float

    def __call__(self, x):
        return self.slope * np.asarray(x, dtype=float) + self.intercept

    def solve_for(self, y):
        """Input value that produces output y."""
        return (np.asarray(y, dtype=float) - self.intercept) / self.slope


# Reference calibration lines (mm per count). "Steep" covers roughly twice
# the mm-per-count of "shallow".
STEEP_LINE = Line(-0.03049, 143.2)
SHALLOW_LINE = Line(-0.01226, 66.3)
DEFAULT_CROSSOVER_COUNTS = 4100.0
DEFAULT_BLEND_LO = 4050.0
DEFAULT_BLEND_HI = 4150.0
DEFAULT_CROSSOVER_MM = 18.0


@dataclass(frozen=True)
class PiecewiseModel:
    """Two lines joined at a crossover count value.

    `near` is the line fitted to the near-distance region and `far` to the
    far-distance region. `orientation` decides which side of the crossover
    each line serves: "steep_low" evaluates `near` below the crossover (the
    reference-calibration convention), "steep_high" evaluates it above,
    matching the count ranges the lines were actually fitted on.
    """

    near: Line = STEEP_LINE
    far: Line = SHALLOW_LINE
    crossover: float = DEFAULT_CROSSOVER_COUNTS
    orientation: str = ORIENTATION_STEEP_LOW

    def __post_init__(self):
        require(self.near.slope < 0 and self.far.slope < 0,
                "piecewise slopes must be negative")
        require(math.isfinite(self.crossover), "crossover must be finite")
        require(self.orientation in (ORIENTATION_STEEP_LOW, ORIENTATION_STEEP_HIGH),
                f"unknown orientation {self.orientation!r}")

    def estimate(self, counts):
        x = np.asarray(counts, dtype=float)
        if self.orientation == ORIENTATION_STEEP_LOW:
            below, above = self.near, self.far
        else:
            below, above = self.far, self.near
        return np.where(x < self.crossover, below(x), above(x))


@dataclass(frozen=True)
class ComplementModel:
    """Convex blend of two lines weighted by a confidence ramp on counts.

    Below `lo` the blend weight is 0 and only `line_low` applies; above `hi`
    the weight is 1 and only `line_high` applies; in between the weight ramps
    linearly.
    """

    line_high: Line = STEEP_LINE
    line_low: Line = SHALLOW_LINE
    lo: float = DEFAULT_BLEND_LO
    hi: float = DEFAULT_BLEND_HI

    def __post_init__(self):
        require(self.lo < self.hi, "blend bounds must satisfy lo < hi")
        require(self.line_high.slope < 0 and self.line_low.slope < 0,
                "blend line slopes must be negative")

    def alpha(self, counts):
        x = np.asarray(counts, dtype=float)
        return np.clip((x - self.lo) / (self.hi - self.lo), 0.0, 1.0)

    def estimate(self, counts):
        a = self.alpha(counts)
        x = np.asarray(counts, dtype=float)
        return a * self.line_high(x) + (1.0 - a) * self.line_low(x)

    def invert(self, distance_mm):
        """Counts that estimate() maps back to the given distance.

        The blend is not injective inside [lo, hi] (the reference lines
        cross above the window, so the blend overshoots by ~0.5 mm there),
        so the inverse is taken on the pure outer branches: the low-count
        line for distances at or beyond its value at `lo`, the high-count
        line otherwise. estimate(invert(d)) == d to float precision.
        """
        d = np.asarray(distance_mm, dtype=float)
        boundary = float(self.line_low(self.lo))
        return np.where(d >= boundary,
                        self.line_low.solve_for(d),
                        self.line_high.solve_for(d))


@dataclass(frozen=True)
class LogModel:
    """counts = a + b * ln(distance_mm)."""

    a: float
    b: float

    def __post_init__(self):
        require(self.b != 0, "log model slope must be nonzero")

    def counts_at(self, distance_mm):
        d = np.asarray(distance_mm, dtype=float)
        require(np.all(d > 0), "log model requires positive distances")
        return self.a + self.b * np.log(d)

    def distance_at(self, counts):
        x = np.asarray(counts, dtype=float)
        return np.exp((x - self.a) / self.b)


DEFAULT_PIECEWISE = PiecewiseModel()
DEFAULT_COMPLEMENT = ComplementModel()


def piecewise_estimate(counts, model=DEFAULT_PIECEWISE):
    return model.estimate(counts)


def alpha(counts, model=DEFAULT_COMPLEMENT):
    return model.alpha(counts)


def complement_estimate(counts, model=DEFAULT_COMPLEMENT):
    return model.estimate(counts)


def _ols_line(x, y):
    """Least-squares y = slope*x + intercept, plus residual RMSE."""
    x = as_float_array(x, "x", ndim=1)
    y = as_float_array(y, "y", ndim=1)
    require(len(x) == len(y), "x and y length mismatch")
    require(len(x) >= 2, "need at least two samples for a line fit")
    require(np.ptp(x) > 0, "degenerate fit: all x values identical")
    A = np.column_stack([x, np.ones_like(x)])
    coef, _, _, _ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - A @ coef
    rmse = float(np.sqrt(np.mean(resid**2)))
    return float(coef[0]), float(coef[1]), rmse


def fit_log(distances_mm, counts):
    """Fit counts = a + b*ln(d) by least squares.

    Returns (LogModel, residual_rmse_counts).
    """
    d = as_float_array(distances_mm, "distances_mm", ndim=1)
    require(np.all(d > 0), "distances must be positive")
    slope, intercept, rmse = _ols_line(np.log(d), counts)
    return LogModel(a=intercept, b=slope), rmse


def fit_piecewise(distances_mm, counts, crossover_mm=DEFAULT_CROSSOVER_MM):
    """Fit independent lines on the near/far distance partitions.

    distance = slope*counts + intercept on each side of `crossover_mm`.
    The fitted model uses the steep_high orientation (each line serves the
    count range its own data came from). Returns
    (PiecewiseModel, near_rmse_mm, far_rmse_mm).
    """
    d = as_float_array(distances_mm, "distances_mm", ndim=1)
    x = as_float_array(counts, "counts", ndim=1)
    require(len(d) == len(x), "distances and counts length mismatch")
    near_mask = d <= crossover_mm
    far_mask = ~near_mask
    require(np.count_nonzero(near_mask) >= 2,
            f"near region (<= {crossover_mm} mm) has fewer than 2 samples")
    require(np.count_nonzero(far_mask) >= 2,
            f"far region (> {crossover_mm} mm) has fewer than 2 samples")
    ns, ni, nr = _ols_line(x[near_mask], d[near_mask])
    fs, fi, fr = _ols_line(x[far_mask], d[far_mask])
    near = Line(ns, ni)
    far = Line(fs, fi)
    # validity regions meet between the two lines' counts at the boundary
    crossover_counts = 0.5 * (near.solve_for(crossover_mm) + far.solve_for(crossover_mm))
    model = PiecewiseModel(near=near, far=far, crossover=float(crossover_counts),
                           orientation=ORIENTATION_STEEP_HIGH)
    return model, nr, fr


class PiecewiseRangeRegressor(BaseEstimator, RegressorMixin):
    """sklearn-style wrapper around the piecewise calibration.

    Predicts distance (mm) from counts. Constructed with the reference
    coefficients, so predict() works before fit(); fit() replaces the model
    with one estimated from data.
    """

    def __init__(self, crossover_mm=DEFAULT_CROSSOVER_MM, model=DEFAULT_PIECEWISE):
        self.crossover_mm = crossover_mm
        self.model = model

    def fit(self, X, y):
        counts = np.asarray(X, dtype=float).reshape(-1)
        self.model_, self.near_rmse_, self.far_rmse_ = fit_piecewise(
            y, counts, crossover_mm=self.crossover_mm
        )
        return self

    def predict(self, X):
        counts = np.asarray(X, dtype=float).reshape(-1)
        model = getattr(self, "model_", self.model)
        return model.estimate(counts)


class ComplementRangeRegressor(BaseEstimator, RegressorMixin):
    """Complementary-blend calibration with the sklearn estimator surface."""

    def __init__(self, crossover_mm=DEFAULT_CROSSOVER_MM,
                 lo=DEFAULT_BLEND_LO, hi=DEFAULT_BLEND_HI,
                 model=DEFAULT_COMPLEMENT):
        self.crossover_mm = crossover_mm
        self.lo = lo
        self.hi = hi
        self.model = model

    def fit(self, X, y):
        counts = np.asarray(X, dtype=float).reshape(-1)
        fitted, _, _ = fit_piecewise(y, counts, crossover_mm=self.crossover_mm)
        self.model_ = ComplementModel(line_high=fitted.near, line_low=fitted.far,
                                      lo=self.lo, hi=self.hi)
        return self

    def predict(self, X):
        counts = np.asarray(X, dtype=float).reshape(-1)
        model = getattr(self, "model_", self.model)
        return model.estimate(counts)


class LogRangeRegressor(BaseEstimator, RegressorMixin):
    """Log-linear calibration; has no reference coefficients, so fit first."""

    def fit(self, X, y):
        counts = np.asarray(X, dtype=float).reshape(-1)
        self.model_, self.residual_rmse_ = fit_log(y, counts)
        return self

    def predict(self, X):
        if not hasattr(self, "model_"):
            raise NotFittedError("LogRangeRegressor must be fitted before predict")
        counts = np.asarray(X, dtype=float).reshape(-1)
        return self.model_.distance_at(counts)


def _line_dict(line):
    return {"slope": line.slope, "intercept": line.intercept}


def model_to_dict(model, fit_residual_rmse=None):
    if isinstance(model, PiecewiseModel):
        d = {
            "version": MODEL_FORMAT_VERSION,
            "type": "piecewise",
            "near": _line_dict(model.near),
            "far": _line_dict(model.far),
            "crossover_counts": model.crossover,
            "orientation": model.orientation,
        }
    elif isinstance(model, ComplementModel):
        d = {
            "version": MODEL_FORMAT_VERSION,
            "type": "complement",
            "line_high": _line_dict(model.line_high),
            "line_low": _line_dict(model.line_low),
            "blend_lo": model.lo,
            "blend_hi": model.hi,
        }
    elif isinstance(model, LogModel):
        d = {"version": MODEL_FORMAT_VERSION, "type": "log", "a": model.a, "b": model.b}
    else:
        raise TypeError(f"cannot serialize {type(model).__name__}")
    if fit_residual_rmse is not None:
        d["fit_residual_rmse"] = fit_residual_rmse
    return d


def model_from_dict(d):
    if d.get("version") != MODEL_FORMAT_VERSION:
        raise ValueError(f"unsupported calibration model version {d.get('version')!r}")
    kind = d.get("type")
    if kind == "piecewise":
        return PiecewiseModel(
            near=Line(d["near"]["slope"], d["near"]["intercept"]),
            far=Line(d["far"]["slope"], d["far"]["intercept"]),
            crossover=d["crossover_counts"],
            orientation=d.get("orientation", ORIENTATION_STEEP_LOW),
        )
    if kind == "complement":
        return ComplementModel(
            line_high=Line(d["line_high"]["slope"], d["line_high"]["intercept"]),
            line_low=Line(d["line_low"]["slope"], d["line_low"]["intercept"]),
            lo=d["blend_lo"],
            hi=d["blend_hi"],
        )
    if kind == "log":
        return LogModel(a=d["a"], b=d["b"])
    raise ValueError(f"unknown calibration model type {kind!r}")


def save_model(model, path, fit_residual_rmse=None):
    with open(path, "w") as fh:
        json.dump(model_to_dict(model, fit_residual_rmse), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_model(path):
    with open(path) as fh:
        return model_from_dict(json.load(fh))
