"""Ensemble model output statistics: minimum-CRPS calibration of ensembles.

The regression maps the ensemble mean to the location and an affine
function of the ensemble variance to the squared scale:

    location  = a + b * mean(members)
    scale**2  = c + d * var(members)

with c, d kept non-negative by optimizing over their square roots. The
coefficient vector is chosen to minimize the mean closed-form CRPS of the
induced predictive distributions over a training window, refit each
forecast-origin day in rolling operation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .distributions import (
    GAMMA_MIN_LOCATION,
    DistributionKind,
    PredictiveDistribution,
    crps_gamma,
    crps_normal,
    crps_truncated_normal,
)
from .optimizer import GradientMode, MinimizeResult, ObjectiveSpec, minimize

# a fit on a degraded window proceeds when at least this fraction of the
# requested days carries observations
MIN_WINDOW_FRACTION = 0.75

_VARIANCE_FLOOR = 1e-12


@dataclass(frozen=True)
class EnsembleSeries:
    """Time-indexed matrix of exchangeable ensemble members.

    One row per forecast-origin day for a single variable and forecast
    horizon. ``observations`` aligns with ``times``; missing observations
    are NaN.
    """

    variable: str
    horizon: int
    times: np.ndarray
    members: np.ndarray
    observations: np.ndarray | None = None

    def __post_init__(self):
        times = np.asarray(self.times)
        if times.dtype.kind == "M":
            times = times.astype("datetime64[s]")
        members = np.asarray(self.members, dtype=float)
        if members.ndim != 2:
            raise ValueError("members must be a [time, member] matrix")
        if members.shape[1] < 2:
            raise ValueError("at least 2 ensemble members are required")
        if times.shape[0] != members.shape[0]:
            raise ValueError("times and members disagree on the number of rows")
        if times.size > 1 and not np.all(times[1:] > times[:-1]):
            raise ValueError("times must be strictly increasing without duplicates")
        obs = self.observations
        if obs is not None:
            obs = np.asarray(obs, dtype=float)
            if obs.shape != (members.shape[0],):
                raise ValueError("observations must align with times")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "members", members)
        object.__setattr__(self, "observations", obs)

    @property
    def n_members(self) -> int:
        return self.members.shape[1]

    def __len__(self) -> int:
        return self.members.shape[0]


@dataclass(frozen=True)
class EmosParameters:
    """Fitted calibration coefficients for one variable and horizon."""

    a: float
    b: float
    c: float
    d: float
    kind: DistributionKind
    fitted_at: object = None
    window_days: int | None = None
    converged: bool = True

    def __post_init__(self):
        if self.c < 0.0 or self.d < 0.0:
            raise ValueError("variance coefficients c and d must be non-negative")
        if self.c == 0.0 and self.d == 0.0:
            raise ValueError("c and d cannot both be zero")


def ensemble_moments(row: Sequence[float]) -> tuple[float, float]:
    """Mean and population variance (divisor M) of one ensemble row."""
    x = np.asarray(row, dtype=float)
    if x.ndim != 1 or x.size < 2:
        raise ValueError("an ensemble row needs at least 2 members")
    return float(np.mean(x)), float(np.var(x))


def _crps_by_kind(kind: DistributionKind, mu, sigma, y):
    if kind is DistributionKind.NORMAL:
        return crps_normal(mu, sigma, y)
    if kind is DistributionKind.TRUNCATED_NORMAL:
        return crps_truncated_normal(mu, sigma, y)
    return crps_gamma(mu, sigma, y)


def crps_objective(
    members: np.ndarray, observations: Sequence[float], kind: DistributionKind
) -> ObjectiveSpec:
    """Mean-training-CRPS objective over ``theta = (a, b, gamma, delta)``.

    ``c = gamma**2`` and ``d = delta**2`` keep the variance coefficients
    non-negative while the optimizer stays unconstrained.
    """
    members = np.asarray(members, dtype=float)
    y = np.asarray(observations, dtype=float)
    if members.ndim != 2 or members.shape[0] != y.shape[0]:
        raise ValueError("members must be [n, M] aligned with n observations")
    if members.shape[0] < 2:
        raise ValueError("at least 2 training rows are required")
    if not np.all(np.isfinite(members)) or not np.all(np.isfinite(y)):
        raise ValueError("training data must be finite")
    means = np.mean(members, axis=1)
    variances = np.var(members, axis=1)

    def evaluate(theta: np.ndarray) -> float:
        a, b, gamma, delta = theta
        mu = a + b * means
        var = gamma * gamma + delta * delta * variances
        sigma = np.sqrt(np.maximum(var, _VARIANCE_FLOOR))
        return float(np.mean(_crps_by_kind(kind, mu, sigma, y)))

    resid_std = float(np.std(y - means))
    x0 = np.array([0.0, 1.0, max(resid_std, 1e-3), 1.0])
    return ObjectiveSpec(
        dimension=4,
        evaluate=evaluate,
        initial_point=x0,
        gradient_mode=GradientMode.FINITE_DIFFERENCE,
    )


def fit(
    members: np.ndarray,
    observations: Sequence[float],
    kind: DistributionKind,
    *,
    fitted_at=None,
    window_days: int | None = None,
    tol: float = 1e-8,
    max_iter: int = 200,
) -> EmosParameters:
    """Minimum-CRPS estimate of the calibration coefficients.

    Non-convergence within ``max_iter`` returns the best point found with
    ``converged=False``.
    """
    spec = crps_objective(members, observations, kind)
    result = minimize(spec, tol=tol, max_iter=max_iter)
    return _params_from_result(result, kind, fitted_at, window_days)


def _params_from_result(
    result: MinimizeResult, kind, fitted_at, window_days
) -> EmosParameters:
    a, b, gamma, delta = result.point
    c, d = float(gamma * gamma), float(delta * delta)
    if c == 0.0 and d == 0.0:
        c = _VARIANCE_FLOOR
    return EmosParameters(
        a=float(a),
        b=float(b),
        c=c,
        d=d,
        kind=kind,
        fitted_at=fitted_at,
        window_days=window_days,
        converged=result.converged,
    )


def calibrate(params: EmosParameters, row: Sequence[float]) -> PredictiveDistribution:
    """Predictive distribution for one ensemble row under fitted coefficients."""
    mean, variance = ensemble_moments(row)
    location = params.a + params.b * mean
    scale_sq = params.c + params.d * variance
    if scale_sq <= 0.0:
        raise ValueError("degenerate scale: c + d * ensemble variance is zero")
    if params.kind is DistributionKind.GAMMA:
        location = max(location, GAMMA_MIN_LOCATION)
    return PredictiveDistribution(
        kind=params.kind, location=location, scale=math.sqrt(scale_sq)
    )


@dataclass(frozen=True)
class RollingCalibration:
    """Output of a rolling refit: one distribution per calibrated day."""

    times: tuple
    distributions: tuple[PredictiveDistribution, ...]
    parameters: tuple[EmosParameters, ...]
    warnings: tuple[str, ...] = field(default=())

    def __len__(self) -> int:
        return len(self.times)


def rolling_calibrate(
    series: EnsembleSeries,
    window_days: int,
    kind: DistributionKind,
    *,
    max_iter: int = 200,
) -> RollingCalibration:
    """Refit coefficients each day on the trailing ``window_days`` days.

    The rolling unit is the forecast-origin day (one row per day and
    horizon). A day is calibrated once a full window of prior rows
    exists; windows degraded by missing observations still fit when at
    least ``MIN_WINDOW_FRACTION`` of the days carry observations, and are
    skipped with a warning otherwise.
    """
    if window_days < 1:
        raise ValueError("window_days must be at least 1")
    if series.observations is None:
        raise ValueError("rolling calibration requires observations")
    obs = series.observations
    min_required = max(2, math.ceil(MIN_WINDOW_FRACTION * window_days))

    times_out, dists, fitted, warnings = [], [], [], []
    for i in range(window_days, len(series)):
        window = slice(i - window_days, i)
        ok = np.isfinite(obs[window])
        n_avail = int(np.sum(ok))
        when = series.times[i]
        if n_avail < min_required:
            warnings.append(
                f"{series.variable} h{series.horizon} {when}: skipped, "
                f"{n_avail} of {window_days} window days have observations"
            )
            continue
        if n_avail < window_days:
            warnings.append(
                f"{series.variable} h{series.horizon} {when}: degraded window, "
                f"{n_avail} of {window_days} days"
            )
        params = fit(
            series.members[window][ok],
            obs[window][ok],
            kind,
            fitted_at=when,
            window_days=window_days,
            max_iter=max_iter,
        )
        times_out.append(when)
        dists.append(calibrate(params, series.members[i]))
        fitted.append(params)
    return RollingCalibration(
        times=tuple(times_out),
        distributions=tuple(dists),
        parameters=tuple(fitted),
        warnings=tuple(warnings),
    )


def parameter_csv_lines(
    entries: Iterable[tuple[str, int, object, EmosParameters]]
) -> list[str]:
    """Rows of the coefficient trace: variable, horizon_h, date, a, b, c, d, kind."""
    lines = ["variable,horizon_h,date,a,b,c,d,kind"]
    for variable, horizon, date, p in entries:
        lines.append(
            f"{variable},{horizon},{date},{p.a!r},{p.b!r},{p.c!r},{p.d!r},{p.kind.value}"
        )
    return lines
