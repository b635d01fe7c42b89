"""Wind power forecasting models mapping weather features to power.

All models are fitted on historical observed weather so they learn the
actual weather-to-power relationship; at forecast time each ensemble
member is passed through the fitted model individually to produce a power
ensemble. Besides weather, models see the observed power from 24 hours
before the target time and calendar dummy variables.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Mapping, Sequence

import numpy as np
from scipy import linalg
from sklearn.ensemble import RandomForestRegressor


class ModelKind(Enum):
    LINEAR = "linear"
    FOURIER_LINEAR = "fourier_linear"
    RANDOM_FOREST = "random_forest"
    MLP = "mlp"


class SchemaError(ValueError):
    """Prediction inputs do not match the model's feature schema."""


class RankDeficientError(ValueError):
    """Design matrix is rank deficient."""

    def __init__(self, columns: Sequence[str]):
        self.columns = tuple(columns)
        super().__init__(f"collinear design columns: {', '.join(self.columns)}")


@dataclass(frozen=True)
class FeatureFrame:
    """Aligned training rows: weather, lagged power, dummies, target."""

    times: np.ndarray
    weather: np.ndarray
    weather_names: tuple[str, ...]
    lag24_power: np.ndarray
    dummies: np.ndarray
    dummy_names: tuple[str, ...]
    target_power: np.ndarray | None = None

    def __post_init__(self):
        n = len(self.times)
        weather = np.asarray(self.weather, dtype=float).reshape(n, -1)
        dummies = np.asarray(self.dummies, dtype=float).reshape(n, -1)
        if weather.shape[1] != len(self.weather_names):
            raise ValueError("weather columns and names disagree")
        if dummies.shape[1] != len(self.dummy_names):
            raise ValueError("dummy columns and names disagree")
        if dummies.size and not np.all((dummies == 0.0) | (dummies == 1.0)):
            raise ValueError("dummy cells must be 0 or 1")
        lag = np.asarray(self.lag24_power, dtype=float)
        if lag.shape != (n,):
            raise ValueError("lag24_power must align with times")
        target = self.target_power
        if target is not None:
            target = np.asarray(target, dtype=float)
            if target.shape != (n,):
                raise ValueError("target_power must align with times")
        object.__setattr__(self, "weather", weather)
        object.__setattr__(self, "dummies", dummies)
        object.__setattr__(self, "lag24_power", lag)
        object.__setattr__(self, "target_power", target)
        object.__setattr__(self, "weather_names", tuple(self.weather_names))
        object.__setattr__(self, "dummy_names", tuple(self.dummy_names))

    def __len__(self) -> int:
        return len(self.times)


@dataclass(frozen=True)
class ForecastModel:
    """A fitted regression artifact plus its feature schema."""

    kind: ModelKind
    feature_schema: tuple[str, ...]
    weather_names: tuple[str, ...]
    dummy_names: tuple[str, ...]
    uses_lag: bool
    uses_hour: bool
    payload: object
    horizon: int | None = None


# -- calendar dummies -----------------------------------------------------

_SEASON_OF_MONTH = {
    12: "winter", 1: "winter", 2: "winter",
    3: "spring", 4: "spring", 5: "spring",
    6: "summer", 7: "summer", 8: "summer",
    9: "autumn", 10: "autumn", 11: "autumn",
}


def _months(times: np.ndarray) -> np.ndarray:
    t = np.asarray(times, dtype="datetime64[s]")
    return (t.astype("datetime64[M]") - t.astype("datetime64[Y]")).astype(int) + 1


def _years(times: np.ndarray) -> np.ndarray:
    t = np.asarray(times, dtype="datetime64[s]")
    return t.astype("datetime64[Y]").astype(int) + 1970


def hour_of_day(times: np.ndarray) -> np.ndarray:
    t = np.asarray(times, dtype="datetime64[s]")
    return (t.astype("datetime64[h]") - t.astype("datetime64[D]")).astype(float)


def make_calendar_dummies(
    times: np.ndarray, rank_rows: np.ndarray | None = None
) -> tuple[np.ndarray, tuple[str, ...]]:
    """Month, year, and season indicators with collinear columns dropped.

    January, the first year, and winter are the reference levels. Because
    season is a function of month, the season columns are redundant once
    a full year of months is present; a greedy rank check keeps only
    columns that add information relative to an intercept. ``rank_rows``
    restricts that check to the rows a model will actually be fitted on,
    so levels unseen in training are dropped from the schema.
    """
    months = _months(times)
    years = _years(times)
    seasons = np.array([_SEASON_OF_MONTH[m] for m in months])
    mask = np.ones(len(months), dtype=bool) if rank_rows is None else np.asarray(rank_rows)

    candidates: list[tuple[str, np.ndarray]] = []
    for m in range(2, 13):
        candidates.append((f"month_{m:02d}", (months == m).astype(float)))
    for yr in sorted(set(years.tolist()))[1:]:
        candidates.append((f"year_{yr}", (years == yr).astype(float)))
    for name in ("spring", "summer", "autumn"):
        candidates.append((f"season_{name}", (seasons == name).astype(float)))

    kept = np.ones((int(mask.sum()), 1))
    names: list[str] = []
    cols: list[np.ndarray] = []
    for name, col in candidates:
        trial = np.column_stack([kept, col[mask]])
        if np.linalg.matrix_rank(trial) > kept.shape[1]:
            kept = trial
            names.append(name)
            cols.append(col)
    matrix = np.column_stack(cols) if cols else np.zeros((len(months), 0))
    return matrix, tuple(names)


# -- design matrices -------------------------------------------------------

def _check_finite(X: np.ndarray, y: np.ndarray) -> None:
    if not np.all(np.isfinite(X)) or not np.all(np.isfinite(y)):
        raise ValueError("fitting rows must not contain missing values")


def _assert_full_rank(X: np.ndarray, names: Sequence[str]) -> None:
    _, r, pivots = linalg.qr(X, mode="economic", pivoting=True)
    diag = np.abs(np.diag(r))
    tol = diag.max() * max(X.shape) * np.finfo(float).eps if diag.size else 0.0
    rank = int(np.sum(diag > tol))
    if rank < X.shape[1]:
        raise RankDeficientError([names[p] for p in pivots[rank:]])


def _linear_design(
    frame: FeatureFrame, include_weather: bool
) -> tuple[np.ndarray, tuple[str, ...]]:
    cols = [np.ones(len(frame)), frame.lag24_power]
    names = ["intercept", "lag24_power"]
    if include_weather:
        cols.append(frame.weather)
        names.extend(frame.weather_names)
    cols.append(frame.dummies)
    names.extend(frame.dummy_names)
    return np.column_stack(cols), tuple(names)


_FOURIER_SCHEMA = (
    "intercept", "speed", "speed_sq", "speed_cu",
    "hour_cos_1", "hour_sin_1", "hour_cos_2", "hour_sin_2",
)


def _fourier_design(speed: np.ndarray, hours: np.ndarray) -> np.ndarray:
    w = 2.0 * math.pi / 24.0
    return np.column_stack([
        np.ones_like(speed), speed, speed**2, speed**3,
        np.cos(w * hours), np.sin(w * hours),
        np.cos(2.0 * w * hours), np.sin(2.0 * w * hours),
    ])


def _raw_design(frame: FeatureFrame) -> tuple[np.ndarray, tuple[str, ...]]:
    X = np.column_stack([frame.lag24_power[:, None], frame.weather, frame.dummies])
    names = ("lag24_power",) + frame.weather_names + frame.dummy_names
    return X, names


# -- ordinary least squares -------------------------------------------------

@dataclass(frozen=True)
class _LinearPayload:
    coefficients: np.ndarray

    def predict(self, X: np.ndarray) -> np.ndarray:
        return X @ self.coefficients


def _require_target(frame: FeatureFrame) -> np.ndarray:
    if frame.target_power is None:
        raise ValueError("fitting requires target_power")
    return frame.target_power


def _ols(X: np.ndarray, y: np.ndarray, names: Sequence[str]) -> np.ndarray:
    _check_finite(X, y)
    if X.shape[0] < X.shape[1]:
        raise ValueError(
            f"need at least {X.shape[1]} training rows, got {X.shape[0]}"
        )
    _assert_full_rank(X, names)
    coeffs, *_ = np.linalg.lstsq(X, y, rcond=None)
    return coeffs


def fit_linear(frame: FeatureFrame, horizon: int | None = None) -> ForecastModel:
    """Ordinary least squares on lagged power, weather, and dummies."""
    y = _require_target(frame)
    X, names = _linear_design(frame, include_weather=True)
    coeffs = _ols(X, y, names)
    return ForecastModel(
        kind=ModelKind.LINEAR,
        feature_schema=names,
        weather_names=frame.weather_names,
        dummy_names=frame.dummy_names,
        uses_lag=True,
        uses_hour=False,
        payload=_LinearPayload(coeffs),
        horizon=horizon,
    )


def fit_no_weather(frame: FeatureFrame, horizon: int | None = None) -> ForecastModel:
    """Linear fit on lagged power and dummies only."""
    y = _require_target(frame)
    X, names = _linear_design(frame, include_weather=False)
    coeffs = _ols(X, y, names)
    return ForecastModel(
        kind=ModelKind.LINEAR,
        feature_schema=names,
        weather_names=(),
        dummy_names=frame.dummy_names,
        uses_lag=True,
        uses_hour=False,
        payload=_LinearPayload(coeffs),
        horizon=horizon,
    )


def fit_fourier_linear(frame: FeatureFrame, horizon: int | None = None) -> ForecastModel:
    """Cubic polynomial in wind speed plus diurnal harmonics of the hour."""
    y = _require_target(frame)
    if "speed" not in frame.weather_names:
        raise SchemaError("fourier model requires a 'speed' weather column")
    speed = frame.weather[:, frame.weather_names.index("speed")]
    X = _fourier_design(speed, hour_of_day(frame.times))
    coeffs = _ols(X, y, _FOURIER_SCHEMA)
    return ForecastModel(
        kind=ModelKind.FOURIER_LINEAR,
        feature_schema=_FOURIER_SCHEMA,
        weather_names=("speed",),
        dummy_names=(),
        uses_lag=False,
        uses_hour=True,
        payload=_LinearPayload(coeffs),
        horizon=horizon,
    )


# -- random forest ----------------------------------------------------------

@dataclass(frozen=True)
class _ForestPayload:
    forest: RandomForestRegressor

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.forest.predict(X)


def fit_random_forest(
    frame: FeatureFrame,
    n_trees: int = 500,
    seed: int = 0,
    horizon: int | None = None,
) -> ForecastModel:
    """Bagged regression trees; prediction is the average over all trees.

    Hyperparameters beyond the tree count follow regression defaults of
    the classic implementation: a third of the features tried per split,
    leaves of at least 5 rows, bootstrap resampling, unlimited depth.
    """
    y = _require_target(frame)
    if len(frame) < 50:
        raise ValueError(f"random forest needs at least 50 training rows, got {len(frame)}")
    X, names = _raw_design(frame)
    _check_finite(X, y)
    forest = RandomForestRegressor(
        n_estimators=n_trees,
        max_features=max(1, math.ceil(X.shape[1] / 3)),
        min_samples_leaf=5,
        bootstrap=True,
        random_state=int(seed),
        n_jobs=1,
    )
    forest.fit(X, y)
    return ForecastModel(
        kind=ModelKind.RANDOM_FOREST,
        feature_schema=names,
        weather_names=frame.weather_names,
        dummy_names=frame.dummy_names,
        uses_lag=True,
        uses_hour=False,
        payload=_ForestPayload(forest),
        horizon=horizon,
    )


# -- multilayer perceptron ----------------------------------------------------

_HIDDEN_1 = 10
_HIDDEN_2 = 7

_RPROP_INCREASE = 1.2
_RPROP_DECREASE = 0.5
_RPROP_STEP_INIT = 0.1
_RPROP_STEP_MAX = 50.0
_RPROP_STEP_MIN = 1e-6


def _mlp_shapes(n_in: int) -> list[tuple[int, ...]]:
    return [
        (n_in, _HIDDEN_1), (_HIDDEN_1,),
        (_HIDDEN_1, _HIDDEN_2), (_HIDDEN_2,),
        (_HIDDEN_2, 1), (1,),
    ]


def _unpack(weights: np.ndarray, n_in: int) -> list[np.ndarray]:
    parts, offset = [], 0
    for shape in _mlp_shapes(n_in):
        size = int(np.prod(shape))
        parts.append(weights[offset : offset + size].reshape(shape))
        offset += size
    return parts


def _mlp_forward(weights: np.ndarray, X: np.ndarray) -> np.ndarray:
    w1, b1, w2, b2, w3, b3 = _unpack(weights, X.shape[1])
    a1 = np.tanh(X @ w1 + b1)
    a2 = np.tanh(a1 @ w2 + b2)
    return (a2 @ w3 + b3)[:, 0]


def mlp_loss_and_grad(
    weights: np.ndarray, X: np.ndarray, y: np.ndarray
) -> tuple[float, np.ndarray]:
    """Half mean squared error and its gradient for the 10-7-1 tanh net."""
    w1, b1, w2, b2, w3, b3 = _unpack(weights, X.shape[1])
    a1 = np.tanh(X @ w1 + b1)
    a2 = np.tanh(a1 @ w2 + b2)
    out = (a2 @ w3 + b3)[:, 0]
    resid = out - y
    n = X.shape[0]
    loss = 0.5 * float(np.mean(resid**2))

    d_out = (resid / n)[:, None]
    g_w3 = a2.T @ d_out
    g_b3 = d_out.sum(axis=0)
    d_a2 = d_out @ w3.T
    d_z2 = d_a2 * (1.0 - a2**2)
    g_w2 = a1.T @ d_z2
    g_b2 = d_z2.sum(axis=0)
    d_a1 = d_z2 @ w2.T
    d_z1 = d_a1 * (1.0 - a1**2)
    g_w1 = X.T @ d_z1
    g_b1 = d_z1.sum(axis=0)
    grad = np.concatenate(
        [g.ravel() for g in (g_w1, g_b1, g_w2, g_b2, g_w3, g_b3)]
    )
    return loss, grad


def mlp_init_weights(n_in: int, rng: np.random.Generator) -> np.ndarray:
    parts = []
    for shape in _mlp_shapes(n_in):
        if len(shape) == 2:
            limit = math.sqrt(6.0 / (shape[0] + shape[1]))
            parts.append(rng.uniform(-limit, limit, size=shape).ravel())
        else:
            parts.append(np.zeros(shape))
    return np.concatenate(parts)


@dataclass(frozen=True)
class _MlpPayload:
    weights: np.ndarray
    x_mean: np.ndarray
    x_std: np.ndarray
    y_mean: float
    y_std: float

    def predict(self, X: np.ndarray) -> np.ndarray:
        Xs = (X - self.x_mean) / self.x_std
        return _mlp_forward(self.weights, Xs) * self.y_std + self.y_mean


def fit_mlp(
    frame: FeatureFrame,
    seed: int = 0,
    max_epochs: int = 2000,
    patience: int = 25,
    horizon: int | None = None,
) -> ForecastModel:
    """Feed-forward 10-7-1 tanh network trained with resilient backprop.

    Features and target are standardized internally. Training runs
    full-batch Rprop until the loss on a held-out 10% validation split
    has not improved for ``patience`` epochs, restoring the best weights.
    """
    y = _require_target(frame)
    if len(frame) < 100:
        raise ValueError(f"MLP needs at least 100 training rows, got {len(frame)}")
    X, _ = _raw_design(frame)
    _check_finite(X, y)

    x_mean = X.mean(axis=0)
    x_std = X.std(axis=0)
    x_std[x_std == 0.0] = 1.0
    y_mean, y_std = float(y.mean()), float(y.std())
    if y_std == 0.0:
        y_std = 1.0
    Xs = (X - x_mean) / x_std
    ys = (y - y_mean) / y_std

    rng = np.random.default_rng(seed)
    order = rng.permutation(len(ys))
    n_val = max(1, len(ys) // 10)
    val_idx, train_idx = order[:n_val], order[n_val:]
    X_tr, y_tr = Xs[train_idx], ys[train_idx]
    X_val, y_val = Xs[val_idx], ys[val_idx]

    weights = mlp_init_weights(X.shape[1], rng)
    step = np.full_like(weights, _RPROP_STEP_INIT)
    prev_grad = np.zeros_like(weights)
    best_weights = weights.copy()
    best_val = np.inf
    stalled = 0

    for _ in range(max_epochs):
        loss, grad = mlp_loss_and_grad(weights, X_tr, y_tr)
        if not np.isfinite(loss):
            raise ValueError("MLP training diverged to a non-finite loss")
        sign_change = prev_grad * grad
        step = np.where(
            sign_change > 0.0,
            np.minimum(step * _RPROP_INCREASE, _RPROP_STEP_MAX),
            np.where(
                sign_change < 0.0,
                np.maximum(step * _RPROP_DECREASE, _RPROP_STEP_MIN),
                step,
            ),
        )
        grad_eff = np.where(sign_change < 0.0, 0.0, grad)
        weights = weights - np.sign(grad_eff) * step
        prev_grad = grad_eff

        val_loss = 0.5 * float(np.mean((_mlp_forward(weights, X_val) - y_val) ** 2))
        if val_loss < best_val - 1e-12:
            best_val = val_loss
            best_weights = weights.copy()
            stalled = 0
        else:
            stalled += 1
            if stalled >= patience:
                break

    _, names = _raw_design(frame)
    return ForecastModel(
        kind=ModelKind.MLP,
        feature_schema=names,
        weather_names=frame.weather_names,
        dummy_names=frame.dummy_names,
        uses_lag=True,
        uses_hour=False,
        payload=_MlpPayload(best_weights, x_mean, x_std, y_mean, y_std),
        horizon=horizon,
    )


# -- prediction ---------------------------------------------------------------

def _prediction_matrix(
    model: ForecastModel,
    weather_members: Mapping[str, np.ndarray],
    lag24: float,
    dummies: Mapping[str, float],
    hour: float | None,
) -> np.ndarray:
    if set(weather_members) != set(model.weather_names):
        raise SchemaError(
            f"weather features {sorted(weather_members)} do not match schema "
            f"{sorted(model.weather_names)}"
        )
    if set(dummies) != set(model.dummy_names):
        raise SchemaError(
            f"dummy features {sorted(dummies)} do not match schema "
            f"{sorted(model.dummy_names)}"
        )
    columns = [np.asarray(weather_members[name], dtype=float) for name in model.weather_names]
    sizes = {c.shape for c in columns}
    if len(sizes) > 1:
        raise SchemaError("weather member vectors must share their length")
    m = columns[0].shape[0] if columns else 1

    if model.kind is ModelKind.FOURIER_LINEAR:
        if hour is None:
            raise SchemaError("fourier model requires the hour of day")
        speed = columns[0]
        return _fourier_design(speed, np.full(m, float(hour)))

    parts = []
    if model.kind is ModelKind.LINEAR:
        parts.append(np.ones(m))
    parts.append(np.full(m, float(lag24)))
    parts.extend(columns)
    parts.extend(np.full(m, float(dummies[name])) for name in model.dummy_names)
    return np.column_stack(parts)


def predict_ensemble(
    model: ForecastModel,
    weather_members: Mapping[str, np.ndarray],
    lag24: float,
    dummies: Mapping[str, float],
    hour: float | None = None,
) -> np.ndarray:
    """Power prediction for each ensemble member.

    Member ``i`` sees only its own weather row; the lagged power, the
    dummies, and (for the fourier model) the hour are shared. Output
    order matches member order.
    """
    X = _prediction_matrix(model, weather_members, lag24, dummies, hour)
    return model.payload.predict(X)


def predict(
    model: ForecastModel,
    weather: Mapping[str, float],
    lag24: float,
    dummies: Mapping[str, float],
    hour: float | None = None,
) -> float:
    """Scalar prediction; equivalent to a one-member ensemble."""
    members = {name: np.array([value], dtype=float) for name, value in weather.items()}
    return float(predict_ensemble(model, members, lag24, dummies, hour)[0])


def predict_ensemble_series(
    model: ForecastModel,
    weather_members: Mapping[str, np.ndarray],
    lag24: np.ndarray,
    dummies: Mapping[str, np.ndarray],
    hours: np.ndarray | None = None,
    n_members: int | None = None,
) -> np.ndarray:
    """Batched :func:`predict_ensemble` over ``n`` timesteps.

    ``weather_members`` maps variable name to an ``[n, M]`` matrix and the
    shared inputs are per-timestep vectors. Returns an ``[n, M]`` power
    matrix in one underlying model call, which matters for tree ensembles.
    ``n_members`` must be given when the model uses no weather at all.
    """
    if set(weather_members) != set(model.weather_names):
        raise SchemaError(
            f"weather features {sorted(weather_members)} do not match schema "
            f"{sorted(model.weather_names)}"
        )
    if set(dummies) != set(model.dummy_names):
        raise SchemaError(
            f"dummy features {sorted(dummies)} do not match schema "
            f"{sorted(model.dummy_names)}"
        )
    lag24 = np.asarray(lag24, dtype=float)
    n = lag24.shape[0]
    mats = [np.asarray(weather_members[v], dtype=float) for v in model.weather_names]
    if mats:
        shapes = {mat.shape for mat in mats}
        if len(shapes) > 1 or mats[0].shape[0] != n:
            raise SchemaError("weather member matrices must share shape [n, M]")
        m = mats[0].shape[1]
    else:
        if n_members is None:
            raise SchemaError("n_members is required for weather-free models")
        m = int(n_members)

    if model.kind is ModelKind.FOURIER_LINEAR:
        if hours is None:
            raise SchemaError("fourier model requires hours of day")
        hours_flat = np.repeat(np.asarray(hours, dtype=float), m)
        X = _fourier_design(mats[0].ravel(), hours_flat)
        return model.payload.predict(X).reshape(n, m)

    parts = []
    if model.kind is ModelKind.LINEAR:
        parts.append(np.ones(n * m))
    parts.append(np.repeat(lag24, m))
    parts.extend(mat.ravel() for mat in mats)
    parts.extend(
        np.repeat(np.asarray(dummies[name], dtype=float), m)
        for name in model.dummy_names
    )
    X = np.column_stack(parts)
    return model.payload.predict(X).reshape(n, m)


def predict_frame(model: ForecastModel, frame: FeatureFrame) -> np.ndarray:
    """Predictions over the rows of a feature frame (for diagnostics)."""
    if model.kind is ModelKind.FOURIER_LINEAR:
        speed = frame.weather[:, frame.weather_names.index("speed")]
        X = _fourier_design(speed, hour_of_day(frame.times))
    elif model.kind is ModelKind.LINEAR:
        include_weather = bool(model.weather_names)
        X, _ = _linear_design(frame, include_weather=include_weather)
    else:
        X, _ = _raw_design(frame)
    return model.payload.predict(X)


def model_summary_csv_lines(model: ForecastModel) -> list[str]:
    """Coefficients, or a split-count importance proxy for forests."""
    lines = ["feature,value"]
    if isinstance(model.payload, _LinearPayload):
        for name, coef in zip(model.feature_schema, model.payload.coefficients):
            lines.append(f"{name},{coef!r}")
    elif isinstance(model.payload, _ForestPayload):
        counts = np.zeros(len(model.feature_schema))
        for tree in model.payload.forest.estimators_:
            feats = tree.tree_.feature
            for f in feats[feats >= 0]:
                counts[f] += 1
        for name, count in zip(model.feature_schema, counts):
            lines.append(f"{name},{int(count)}")
    else:
        lines.append(f"n_weights,{model.payload.weights.size}")
    return lines
