"""End-to-end orchestration of the four post-processing strategies.

Every strategy starts from the same raw weather ensembles and the same
fitted forecasting model for a given horizon, so score differences are
attributable to the post-processing alone:

* raw          -- members through the model, scored with the sample CRPS
* one_step_p   -- raw power ensemble calibrated with rolling EMOS
* one_step_w   -- weather calibrated per variable, resampled, then the model
* two_step_wp  -- one_step_w followed by calibration of its power ensemble
"""

from __future__ import annotations

import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Mapping

import numpy as np

from .dataio import WEATHER_VARIABLES, DatasetBundle
from .distributions import DistributionKind
from .emos import EmosParameters, EnsembleSeries, rolling_calibrate
from .models import (
    FeatureFrame,
    ForecastModel,
    fit_fourier_linear,
    fit_linear,
    fit_mlp,
    fit_no_weather,
    fit_random_forest,
    hour_of_day,
    make_calendar_dummies,
    predict_ensemble_series,
)
from .scoring import (
    HistogramCounts,
    HistogramKind,
    ScoreReport,
    build_histogram,
    crpss,
    pit_value,
    sample_crps_series,
    verification_rank,
)

_HOUR = np.timedelta64(1, "h")

MODEL_NAMES = ("linear", "fourier", "random_forest", "mlp", "no_weather")


class StrategyId(Enum):
    RAW = "raw"
    ONE_STEP_P = "one_step_p"
    ONE_STEP_W = "one_step_w"
    TWO_STEP_WP = "two_step_wp"


@dataclass(frozen=True)
class StrategySpec:
    """One strategy run: which pipeline, distributions, and context."""

    id: StrategyId
    power_dist_kind: DistributionKind = DistributionKind.TRUNCATED_NORMAL
    wind_speed_dist_kind: DistributionKind = DistributionKind.TRUNCATED_NORMAL
    window_days: int = 40
    sample_count: int | None = None
    model_name: str = "linear"
    seed: int = 0


@dataclass(frozen=True)
class RunConfig:
    """Full experiment grid: strategies x models x horizons."""

    strategies: tuple[StrategyId, ...]
    model_names: tuple[str, ...] = ("linear",)
    horizons: tuple[int, ...] = (12,)
    power_dist_kind: DistributionKind = DistributionKind.TRUNCATED_NORMAL
    wind_speed_dist_kind: DistributionKind = DistributionKind.TRUNCATED_NORMAL
    window_days: int = 40
    sample_count: int | None = None
    pit_bins: int = 20
    seed: int = 0
    jobs: int = 1


@dataclass(frozen=True)
class ExperimentResult:
    """Reports and diagnostics for every grid cell that completed."""

    reports: dict[tuple[str, str, int], ScoreReport]
    crps_details: dict[tuple[str, str, int], tuple[tuple[object, float], ...]]
    weather_histograms: dict[tuple[str, int, str, str], HistogramCounts]
    parameter_traces: tuple[tuple[str, str, int, object, EmosParameters], ...]
    failures: dict[tuple[str, str, int], str]
    warnings: tuple[str, ...]


def validate_run(bundle: DatasetBundle, config: RunConfig) -> list[str]:
    """Configuration problems as human-readable messages; empty when valid."""
    problems: list[str] = []
    if not config.strategies:
        problems.append("strategies: at least one strategy is required")
    if len(set(config.strategies)) != len(config.strategies):
        problems.append("strategies: duplicate entries")
    non_raw = [s for s in config.strategies if s is not StrategyId.RAW]
    if non_raw and StrategyId.RAW not in config.strategies:
        problems.append(
            "strategies: the raw strategy is required as the CRPSS benchmark"
        )
    for name in config.model_names:
        if name not in MODEL_NAMES:
            problems.append(f"models: unknown model {name!r}")
    if not config.model_names:
        problems.append("models: at least one model is required")
    if not config.horizons:
        problems.append("horizons: at least one horizon is required")
    for h in config.horizons:
        for variable in bundle.variables:
            if h not in bundle.weather_ensembles[variable]:
                problems.append(
                    f"horizons: horizon {h} not available for variable {variable}"
                )
    if config.window_days < 1:
        problems.append("window_days: must be at least 1")
    if config.sample_count is not None and config.sample_count < 1:
        problems.append("sample_count: must be at least 1")
    if config.pit_bins < 1:
        problems.append("pit_bins: must be at least 1")
    if config.jobs < 1:
        problems.append("jobs: must be at least 1")
    if bundle.metadata.train_end is None:
        problems.append("dataset: train_end split is required to define test days")
    return problems


def _derive_seed(*parts) -> int:
    entropy = [
        int(p) & 0xFFFFFFFF
        if isinstance(p, (int, np.integer))
        else zlib.crc32(str(p).encode())
        for p in parts
    ]
    return int(np.random.SeedSequence(entropy).generate_state(1)[0])


def _ordered_variables(bundle: DatasetBundle) -> tuple[str, ...]:
    known = [v for v in WEATHER_VARIABLES if v in bundle.variables]
    extra = sorted(set(bundle.variables) - set(WEATHER_VARIABLES))
    return tuple(known + extra)


@dataclass(frozen=True)
class _HorizonData:
    """Per-horizon view of the bundle, aligned across weather variables."""

    horizon: int
    times: np.ndarray
    hours: np.ndarray
    weather_members: dict[str, np.ndarray]
    weather_obs: dict[str, np.ndarray]
    power_obs: np.ndarray
    lag24: np.ndarray
    dummies: np.ndarray
    dummy_names: tuple[str, ...]
    test_mask: np.ndarray
    n_members: int
    variables: tuple[str, ...]


def _align_horizon(bundle: DatasetBundle, horizon: int) -> _HorizonData:
    variables = _ordered_variables(bundle)
    series = {}
    for variable in variables:
        per_h = bundle.weather_ensembles[variable]
        if horizon not in per_h:
            raise ValueError(f"horizon {horizon} not available for variable {variable}")
        series[variable] = per_h[horizon]

    times = series[variables[0]].times
    for variable in variables[1:]:
        times = np.intersect1d(times, series[variable].times)
    if times.size == 0:
        raise ValueError(f"no common timestamps across variables at horizon {horizon}")

    member_counts = {series[v].n_members for v in variables}
    if len(member_counts) != 1:
        raise ValueError("ensemble member count differs across variables")

    weather_members, weather_obs = {}, {}
    for variable in variables:
        s = series[variable]
        idx = np.searchsorted(s.times, times)
        weather_members[variable] = s.members[idx]
        weather_obs[variable] = (
            s.observations[idx] if s.observations is not None
            else np.full(times.size, np.nan)
        )

    power_obs = bundle.power_observed.at(times)
    lag24 = bundle.power_observed.at(times - 24 * _HOUR)
    test_mask = times > bundle.metadata.train_end
    dummies, dummy_names = make_calendar_dummies(times, rank_rows=~test_mask)
    return _HorizonData(
        horizon=horizon,
        times=times,
        hours=hour_of_day(times),
        weather_members=weather_members,
        weather_obs=weather_obs,
        power_obs=power_obs,
        lag24=lag24,
        dummies=dummies,
        dummy_names=dummy_names,
        test_mask=test_mask,
        n_members=member_counts.pop(),
        variables=variables,
    )


def _training_frame(data: _HorizonData) -> FeatureFrame:
    weather = np.column_stack([data.weather_obs[v] for v in data.variables])
    mask = (
        ~data.test_mask
        & np.isfinite(data.power_obs)
        & np.isfinite(data.lag24)
        & np.all(np.isfinite(weather), axis=1)
    )
    if not np.any(mask):
        raise ValueError(f"no complete training rows at horizon {data.horizon}")
    return FeatureFrame(
        times=data.times[mask],
        weather=weather[mask],
        weather_names=data.variables,
        lag24_power=data.lag24[mask],
        dummies=data.dummies[mask],
        dummy_names=data.dummy_names,
        target_power=data.power_obs[mask],
    )


def _fourier_training_frame(bundle: DatasetBundle) -> FeatureFrame:
    """Training rows pooled over all horizons so the hour of day varies."""
    rows = []
    for horizon in bundle.horizons:
        data = _align_horizon(bundle, horizon)
        speed = data.weather_obs.get("speed")
        if speed is None:
            raise ValueError("fourier model requires the speed variable")
        mask = (
            ~data.test_mask
            & np.isfinite(data.power_obs)
            & np.isfinite(data.lag24)
            & np.isfinite(speed)
        )
        for i in np.flatnonzero(mask):
            rows.append(
                (data.times[i], speed[i], data.lag24[i], data.power_obs[i])
            )
    if not rows:
        raise ValueError("no complete training rows for the fourier model")
    rows.sort(key=lambda r: r[0])
    times = np.array([r[0] for r in rows], dtype="datetime64[s]")
    return FeatureFrame(
        times=times,
        weather=np.array([[r[1]] for r in rows]),
        weather_names=("speed",),
        lag24_power=np.array([r[2] for r in rows]),
        dummies=np.zeros((len(rows), 0)),
        dummy_names=(),
        target_power=np.array([r[3] for r in rows]),
    )


def _fit_model(
    name: str, bundle: DatasetBundle, data: _HorizonData, seed: int
) -> ForecastModel:
    if name == "fourier":
        return fit_fourier_linear(_fourier_training_frame(bundle), horizon=data.horizon)
    frame = _training_frame(data)
    if name == "linear":
        return fit_linear(frame, horizon=data.horizon)
    if name == "no_weather":
        return fit_no_weather(frame, horizon=data.horizon)
    if name == "random_forest":
        return fit_random_forest(frame, seed=seed, horizon=data.horizon)
    if name == "mlp":
        return fit_mlp(frame, seed=seed, horizon=data.horizon)
    raise ValueError(f"unknown model {name!r}")


def _power_matrix(
    model: ForecastModel,
    data: _HorizonData,
    weather: Mapping[str, np.ndarray],
    n_members: int,
) -> np.ndarray:
    """Model predictions per member; NaN rows where inputs are incomplete."""
    needed = [np.asarray(weather[v]) for v in model.weather_names]
    valid = np.isfinite(data.lag24)
    for mat in needed:
        valid &= np.all(np.isfinite(mat), axis=1)
    out = np.full((data.times.size, n_members), np.nan)
    if not np.any(valid):
        return out
    column = {name: j for j, name in enumerate(data.dummy_names)}
    dummies = {
        name: data.dummies[valid, column[name]] for name in model.dummy_names
    }
    picked = {v: np.asarray(weather[v])[valid] for v in model.weather_names}
    out[valid] = predict_ensemble_series(
        model,
        picked,
        data.lag24[valid],
        dummies,
        hours=data.hours[valid],
        n_members=n_members,
    )
    return out


def _matched_crpss(times, crps_values, raw_lookup) -> float:
    """Skill vs the raw benchmark restricted to the same scored days."""
    benchmark = float(np.mean([raw_lookup[t] for t in times]))
    return crpss(float(np.mean(crps_values)), benchmark)


@dataclass
class _CellOutput:
    reports: dict[StrategyId, ScoreReport] = field(default_factory=dict)
    crps_details: dict[StrategyId, tuple] = field(default_factory=dict)
    weather_histograms: dict[tuple[str, str], HistogramCounts] = field(default_factory=dict)
    parameter_traces: list = field(default_factory=list)
    strategy_failures: dict[StrategyId, str] = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)


def _run_cell(
    bundle: DatasetBundle, config: RunConfig, model_name: str, horizon: int
) -> _CellOutput:
    out = _CellOutput()
    data = _align_horizon(bundle, horizon)
    model = _fit_model(
        model_name, bundle, data, _derive_seed(config.seed, "model", model_name, horizon)
    )
    m_raw = data.n_members
    m_samples = config.sample_count or m_raw
    wanted = set(config.strategies)

    raw_power = _power_matrix(model, data, data.weather_members, m_raw)
    finite_rows = np.all(np.isfinite(raw_power), axis=1)
    eval_mask = data.test_mask & np.isfinite(data.power_obs) & finite_rows
    if not np.any(eval_mask):
        raise ValueError(f"no evaluable test days at horizon {horizon}")
    eval_idx = np.flatnonzero(eval_mask)
    raw_times = data.times[eval_idx]
    raw_crps = sample_crps_series(raw_power[eval_idx], data.power_obs[eval_idx])
    raw_lookup = {t: v for t, v in zip(raw_times, raw_crps)}

    def record(strategy, times, crps_values, histogram, method):
        values = tuple(float(v) for v in crps_values)
        skill = 0.0 if strategy is StrategyId.RAW else _matched_crpss(
            times, values, raw_lookup
        )
        out.reports[strategy] = ScoreReport(
            strategy_id=strategy.value,
            horizon=horizon,
            crps_values=values,
            histogram=histogram,
            crps_method=method,
            crpss_vs_raw=skill,
        )
        out.crps_details[strategy] = tuple(zip(times, values))

    # raw weather calibration diagnostics (stage: before post-processing)
    for variable in data.variables:
        obs = data.weather_obs[variable]
        ok = np.flatnonzero(data.test_mask & np.isfinite(obs))
        if ok.size == 0:
            continue
        ranks = [
            verification_rank(
                data.weather_members[variable][i],
                obs[i],
                _derive_seed(config.seed, "wrank", model_name, horizon, variable, int(i)),
            )
            for i in ok
        ]
        out.weather_histograms[("weather_raw", variable)] = build_histogram(
            ranks, HistogramKind.VERIFICATION_RANK, m_raw + 1
        )

    if StrategyId.RAW in wanted:
        ranks = [
            verification_rank(
                raw_power[i],
                data.power_obs[i],
                _derive_seed(config.seed, "prank", model_name, horizon, int(i)),
            )
            for i in eval_idx
        ]
        hist = build_histogram(ranks, HistogramKind.VERIFICATION_RANK, m_raw + 1)
        record(StrategyId.RAW, raw_times, raw_crps, hist, "sample")

    def calibrated_power_report(strategy, power_matrix_full, row_mask):
        """Rolling EMOS on a power ensemble, scored with closed-form CRPS."""
        rows = np.flatnonzero(row_mask)
        series = EnsembleSeries(
            variable="power",
            horizon=horizon,
            times=data.times[rows],
            members=power_matrix_full[rows],
            observations=data.power_obs[rows],
        )
        rolling = rolling_calibrate(series, config.window_days, config.power_dist_kind)
        out.warnings.extend(rolling.warnings)
        for t, params in zip(rolling.times, rolling.parameters):
            out.parameter_traces.append(("power", t, params))
        obs_ok = np.isfinite(data.power_obs)
        obs_at = {t: v for t, v in zip(data.times[obs_ok], data.power_obs[obs_ok])}
        test_set = set(data.times[data.test_mask])
        times_scored, crps_scored, pits = [], [], []
        for t, dist in zip(rolling.times, rolling.distributions):
            if t not in test_set or t not in obs_at or t not in raw_lookup:
                continue
            y = obs_at[t]
            times_scored.append(t)
            crps_scored.append(dist.crps(y))
            pits.append(pit_value(dist, y))
        if not times_scored:
            raise ValueError(
                f"{strategy.value}: no evaluable test days after calibration "
                f"(window {config.window_days})"
            )
        hist = build_histogram(pits, HistogramKind.PIT, config.pit_bins)
        record(strategy, np.array(times_scored, dtype="datetime64[s]"),
               np.array(crps_scored), hist, "closed_form")
        return pits

    if StrategyId.ONE_STEP_P in wanted:
        try:
            calibrated_power_report(StrategyId.ONE_STEP_P, raw_power, finite_rows)
        except ValueError as exc:
            out.strategy_failures[StrategyId.ONE_STEP_P] = str(exc)

    need_w = wanted & {StrategyId.ONE_STEP_W, StrategyId.TWO_STEP_WP}
    if need_w:
        try:
            w_power, w_mask = _one_step_w_power(
                bundle, config, model_name, horizon, data, model, m_samples, out
            )
            if StrategyId.ONE_STEP_W in wanted:
                w_eval = np.flatnonzero(
                    w_mask & data.test_mask & np.isfinite(data.power_obs)
                )
                w_eval = np.array(
                    [i for i in w_eval if data.times[i] in raw_lookup], dtype=int
                )
                if w_eval.size == 0:
                    raise ValueError("one_step_w: no evaluable test days")
                times_w = data.times[w_eval]
                crps_w = sample_crps_series(w_power[w_eval], data.power_obs[w_eval])
                ranks = [
                    verification_rank(
                        w_power[i],
                        data.power_obs[i],
                        _derive_seed(config.seed, "wrankp", model_name, horizon, int(i)),
                    )
                    for i in w_eval
                ]
                hist = build_histogram(
                    ranks, HistogramKind.VERIFICATION_RANK, m_samples + 1
                )
                record(StrategyId.ONE_STEP_W, times_w, crps_w, hist, "sample")
        except ValueError as exc:
            out.strategy_failures[StrategyId.ONE_STEP_W] = str(exc)
            if StrategyId.TWO_STEP_WP in wanted:
                out.strategy_failures[StrategyId.TWO_STEP_WP] = str(exc)
            w_power = None

        if StrategyId.TWO_STEP_WP in wanted and w_power is not None:
            try:
                calibrated_power_report(
                    StrategyId.TWO_STEP_WP,
                    w_power,
                    w_mask & np.all(np.isfinite(w_power), axis=1),
                )
            except ValueError as exc:
                out.strategy_failures[StrategyId.TWO_STEP_WP] = str(exc)

    return out


def _one_step_w_power(
    bundle, config, model_name, horizon, data, model, m_samples, out
):
    """Calibrate each weather variable, resample, and run the model.

    Returns the power matrix over all aligned times plus the row mask of
    days where every variable was calibrated.
    """
    per_var_dists: dict[str, dict] = {}
    for variable in data.variables:
        kind = (
            config.wind_speed_dist_kind
            if variable == "speed"
            else DistributionKind.NORMAL
        )
        series = EnsembleSeries(
            variable=variable,
            horizon=horizon,
            times=data.times,
            members=data.weather_members[variable],
            observations=data.weather_obs[variable],
        )
        rolling = rolling_calibrate(series, config.window_days, kind)
        out.warnings.extend(rolling.warnings)
        for t, params in zip(rolling.times, rolling.parameters):
            out.parameter_traces.append((variable, t, params))
        per_var_dists[variable] = dict(zip(rolling.times, rolling.distributions))

        obs = data.weather_obs[variable]
        pits = []
        for t, dist in zip(rolling.times, rolling.distributions):
            i = int(np.searchsorted(data.times, t))
            if data.test_mask[i] and np.isfinite(obs[i]):
                pits.append(pit_value(dist, obs[i]))
        if pits:
            out.weather_histograms[("weather_calibrated", variable)] = build_histogram(
                pits, HistogramKind.PIT, config.pit_bins
            )

    common = set.intersection(*(set(d) for d in per_var_dists.values()))
    if not common:
        raise ValueError("one_step_w: no commonly calibrated days across variables")
    common_times = np.array(sorted(common), dtype="datetime64[s]")
    pos = np.searchsorted(data.times, common_times)

    sampled: dict[str, np.ndarray] = {}
    for variable in model.weather_names:
        draws = np.empty((common_times.size, m_samples))
        for row, t in enumerate(common_times):
            dist = per_var_dists[variable][t]
            draws[row] = dist.sample(
                m_samples,
                _derive_seed(
                    config.seed, "sample", model_name, horizon, variable, int(row)
                ),
            )
        sampled[variable] = draws

    full_sampled = {
        v: np.full((data.times.size, m_samples), np.nan) for v in model.weather_names
    }
    for v in model.weather_names:
        full_sampled[v][pos] = sampled[v]
    w_power = _power_matrix(model, data, full_sampled, m_samples)

    w_mask = np.zeros(data.times.size, dtype=bool)
    w_mask[pos] = True
    w_mask &= np.all(np.isfinite(w_power), axis=1)
    return w_power, w_mask


def _run_cell_safe(args):
    bundle, config, model_name, horizon = args
    try:
        return model_name, horizon, _run_cell(bundle, config, model_name, horizon), None
    except Exception as exc:  # noqa: BLE001 - failed cells are reported, not fatal
        return model_name, horizon, None, f"{type(exc).__name__}: {exc}"


def run_experiment(bundle: DatasetBundle, config: RunConfig) -> ExperimentResult:
    """Execute the full grid; failures are recorded per cell, not raised."""
    problems = validate_run(bundle, config)
    if problems:
        raise ValueError("; ".join(problems))

    cells = [(m, h) for m in config.model_names for h in config.horizons]
    args = [(bundle, config, m, h) for m, h in cells]
    if config.jobs > 1 and len(cells) > 1:
        with ProcessPoolExecutor(max_workers=config.jobs) as pool:
            outcomes = list(pool.map(_run_cell_safe, args))
    else:
        outcomes = [_run_cell_safe(a) for a in args]

    reports, details, weather_hists, failures = {}, {}, {}, {}
    traces: list = []
    warnings: list[str] = []
    for model_name, horizon, cell, error in outcomes:
        if error is not None:
            for strategy in config.strategies:
                failures[(model_name, strategy.value, horizon)] = error
            continue
        for strategy in config.strategies:
            if strategy in cell.reports:
                key = (model_name, strategy.value, horizon)
                reports[key] = cell.reports[strategy]
                details[key] = cell.crps_details[strategy]
            elif strategy in cell.strategy_failures:
                failures[(model_name, strategy.value, horizon)] = (
                    cell.strategy_failures[strategy]
                )
        for (stage, variable), hist in cell.weather_histograms.items():
            weather_hists[(model_name, horizon, stage, variable)] = hist
        for variable, t, params in cell.parameter_traces:
            traces.append((model_name, variable, horizon, t, params))
        warnings.extend(cell.warnings)

    return ExperimentResult(
        reports=reports,
        crps_details=details,
        weather_histograms=weather_hists,
        parameter_traces=tuple(traces),
        failures=failures,
        warnings=tuple(warnings),
    )


def run_strategy(
    bundle: DatasetBundle, spec: StrategySpec, horizons
) -> dict[int, ScoreReport]:
    """Run one strategy (plus its raw benchmark) and return reports by horizon."""
    strategies = (StrategyId.RAW,)
    if spec.id is not StrategyId.RAW:
        strategies = (StrategyId.RAW, spec.id)
    config = RunConfig(
        strategies=strategies,
        model_names=(spec.model_name,),
        horizons=tuple(horizons),
        power_dist_kind=spec.power_dist_kind,
        wind_speed_dist_kind=spec.wind_speed_dist_kind,
        window_days=spec.window_days,
        sample_count=spec.sample_count,
        seed=spec.seed,
    )
    result = run_experiment(bundle, config)
    if result.failures:
        key, message = next(iter(sorted(result.failures.items())))
        raise RuntimeError(f"{key}: {message}")
    return {
        h: result.reports[(spec.model_name, spec.id.value, h)] for h in horizons
    }
