"""Dataset ingestion, grid aggregation, and a synthetic scenario generator.

The CSV bundle layout is one file per (variable, horizon) with columns
``time, obs, m01..mM``, a ``power.csv`` with columns ``time, power_mw``,
and an optional ``meta.json`` carrying site name, capacity, and the
train/test split. Timestamps are ISO-8601 UTC. Missing observations are
empty cells, never sentinel numbers.
"""

from __future__ import annotations

import csv
import json
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .emos import EnsembleSeries

WEATHER_VARIABLES = ("speed", "u", "v", "temperature", "pressure")

_HOUR = np.timedelta64(1, "h")


class BundleError(ValueError):
    """Raised when a CSV bundle violates its schema."""


def parse_time(text: str) -> np.datetime64:
    cleaned = text.strip()
    if cleaned.endswith("Z"):
        cleaned = cleaned[:-1]
    try:
        return np.datetime64(cleaned, "s")
    except ValueError as exc:
        raise BundleError(f"unparseable timestamp {text!r}") from exc


def format_time(t: np.datetime64) -> str:
    return str(np.datetime64(t, "s")) + "Z"


@dataclass(frozen=True)
class TimeSeries:
    """A single aligned scalar series; NaN marks missing values."""

    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        times = np.asarray(self.times, dtype="datetime64[s]")
        values = np.asarray(self.values, dtype=float)
        if times.shape != values.shape or times.ndim != 1:
            raise ValueError("times and values must be aligned 1-D arrays")
        if times.size > 1 and not np.all(times[1:] > times[:-1]):
            raise ValueError("times must be strictly increasing")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)

    def at(self, query: np.ndarray) -> np.ndarray:
        """Values at the queried times; NaN where a time is absent."""
        query = np.asarray(query, dtype="datetime64[s]")
        idx = np.searchsorted(self.times, query)
        idx_clipped = np.minimum(idx, self.times.size - 1)
        hit = self.times[idx_clipped] == query
        out = np.full(query.shape, np.nan)
        out[hit] = self.values[idx_clipped[hit]]
        return out

    def __len__(self) -> int:
        return self.times.size


@dataclass(frozen=True)
class BundleMetadata:
    site: str = "unknown"
    capacity_mw: float | None = None
    train_end: np.datetime64 | None = None


@dataclass(frozen=True, eq=False)
class DatasetBundle:
    """Ensembles, ground-truth series, and metadata for one site."""

    weather_ensembles: dict[str, dict[int, EnsembleSeries]]
    weather_observed: dict[str, TimeSeries]
    power_observed: TimeSeries
    metadata: BundleMetadata
    warnings: tuple[str, ...] = field(default=())

    def __post_init__(self):
        cap = self.metadata.capacity_mw
        if cap is not None:
            values = self.power_observed.values
            ok = np.isnan(values) | ((values >= 0.0) & (values <= cap * 1.05))
            if not np.all(ok):
                bad = values[~ok][0]
                raise BundleError(
                    f"power observation {bad} outside [0, {cap * 1.05}]"
                )

    @property
    def variables(self) -> tuple[str, ...]:
        return tuple(sorted(self.weather_ensembles))

    @property
    def horizons(self) -> tuple[int, ...]:
        hs = set()
        for per_h in self.weather_ensembles.values():
            hs.update(per_h)
        return tuple(sorted(hs))


# -- grid aggregation --------------------------------------------------------

@dataclass(frozen=True)
class GridField:
    """Values on grid points, each point carrying an aggregation weight."""

    points: tuple[tuple[float, float, float], ...]
    values: np.ndarray

    def __post_init__(self):
        if not self.points:
            raise ValueError("a grid field needs at least one point")
        coords = [(lat, lon) for lat, lon, _ in self.points]
        if len(set(coords)) != len(coords):
            raise ValueError("grid points must be unique")
        if any(w <= 0.0 for _, _, w in self.points):
            raise ValueError("grid weights must be positive")
        values = np.asarray(self.values, dtype=float).reshape(-1, len(self.points))
        object.__setattr__(self, "values", values)


def weighted_zone_average(field: GridField) -> np.ndarray:
    """Per-timestep weighted mean over the grid points."""
    weights = np.array([w for _, _, w in field.points])
    return field.values @ weights / weights.sum()


# -- synthetic scenarios -----------------------------------------------------

# hourly AR(1) truth processes: (base level, seasonal amp, diurnal amp,
# persistence, innovation sd)
_TRUTH_PROCESS = {
    "speed": (8.0, 1.5, 0.8, 0.97, 0.50),
    "u": (2.0, 1.0, 0.3, 0.97, 0.70),
    "v": (-1.0, 1.0, 0.3, 0.97, 0.70),
    "temperature": (283.0, 6.0, 1.5, 0.98, 0.40),
    "pressure": (101300.0, 300.0, 20.0, 0.98, 120.0),
}

# baseline ensemble error scale per variable, grown with the horizon
_ENSEMBLE_ERROR_SCALE = {
    "speed": 1.2,
    "u": 1.5,
    "v": 1.5,
    "temperature": 1.2,
    "pressure": 250.0,
}


@dataclass(frozen=True)
class SyntheticSpec:
    """Configuration of a self-contained synthetic scenario."""

    days: int = 130
    members: int = 20
    horizons: tuple[int, ...] = (6, 12, 24)
    train_days: int = 70
    capacity_mw: float = 100.0
    cut_in: float = 3.0
    rated: float = 12.0
    cut_out: float = 25.0
    bias: Mapping[str, float] = field(default_factory=dict)
    dispersion: float = 1.0
    noise_sd_mw: float = 2.0
    # scales the forecast error of the ensemble centre together with the
    # member spread; small values give sharp, nearly ideal ensembles
    ensemble_error_scale: float = 1.0
    site: str = "synthetic"
    start: np.datetime64 = np.datetime64("2017-01-01T00:00:00", "s")

    def __post_init__(self):
        if self.capacity_mw <= 0.0:
            raise ValueError("capacity must be positive")
        if self.cut_in > self.rated:
            raise ValueError("cut-in speed cannot exceed rated speed")
        if self.rated > self.cut_out:
            raise ValueError("rated speed cannot exceed cut-out speed")
        if self.members < 2:
            raise ValueError("at least 2 ensemble members are required")
        if self.dispersion < 0.0 or self.ensemble_error_scale <= 0.0:
            raise ValueError("dispersion and ensemble_error_scale must be positive")
        if self.days < 2 or not 0 < self.train_days < self.days:
            raise ValueError("train_days must split the simulated days")
        if not self.horizons or any(
            not 1 <= h <= 24 or h != int(h) for h in self.horizons
        ):
            raise ValueError("horizons must be whole hours in 1..24")
        unknown = set(self.bias) - set(WEATHER_VARIABLES)
        if unknown:
            raise ValueError(f"bias for unknown variables: {sorted(unknown)}")
        object.__setattr__(self, "horizons", tuple(sorted(set(self.horizons))))
        object.__setattr__(self, "bias", dict(self.bias))


def power_curve(speed: np.ndarray, spec: SyntheticSpec) -> np.ndarray:
    """Cubic ramp between cut-in and rated speed, zero above cut-out."""
    s = np.asarray(speed, dtype=float)
    ramp = np.clip((s - spec.cut_in) / (spec.rated - spec.cut_in), 0.0, 1.0) ** 3
    return np.where(s > spec.cut_out, 0.0, spec.capacity_mw * ramp)


def _truth_path(
    rng: np.random.Generator, variable: str, hours: np.ndarray
) -> np.ndarray:
    base, seasonal, diurnal, persistence, innovation_sd = _TRUTH_PROCESS[variable]
    n = hours.size
    seasonal_part = seasonal * np.sin(2.0 * math.pi * hours / (24.0 * 365.0))
    diurnal_part = diurnal * np.sin(2.0 * math.pi * (hours % 24) / 24.0)
    ar = np.empty(n)
    stationary_sd = innovation_sd / math.sqrt(1.0 - persistence**2)
    ar[0] = rng.normal(0.0, stationary_sd)
    shocks = rng.normal(0.0, innovation_sd, n - 1)
    for i in range(1, n):
        ar[i] = persistence * ar[i - 1] + shocks[i - 1]
    path = base + seasonal_part + diurnal_part + ar
    if variable == "speed":
        path = np.maximum(path, 0.0)
    return path


def generate_synthetic(spec: SyntheticSpec, seed: int) -> DatasetBundle:
    """Build a bundle from a known stochastic process, bit-identical per seed.

    The ensemble for a target time is centred on the observed value plus a
    per-day forecast error; members scatter around that centre with the
    configured dispersion, so dispersion 1 and zero bias yield calibrated
    ensembles by construction.
    """
    rng = np.random.default_rng(seed)
    # hourly grid padded 24h back so the earliest targets have lagged power
    n_hours = spec.days * 24 + 25
    hour_index = np.arange(n_hours) - 24
    times_hourly = spec.start + hour_index * _HOUR

    truth = {
        v: _truth_path(rng, v, hour_index.astype(float)) for v in WEATHER_VARIABLES
    }
    power_noise = rng.normal(0.0, spec.noise_sd_mw, n_hours)
    power = np.clip(
        power_curve(truth["speed"], spec) + power_noise, 0.0, spec.capacity_mw
    )

    weather_ensembles: dict[str, dict[int, EnsembleSeries]] = {}
    day_offsets = np.arange(spec.days)
    for variable in WEATHER_VARIABLES:
        per_horizon: dict[int, EnsembleSeries] = {}
        for horizon in spec.horizons:
            grid_pos = day_offsets * 24 + horizon + 24
            target_times = times_hourly[grid_pos]
            observed = truth[variable][grid_pos]
            sigma = (
                spec.ensemble_error_scale
                * _ENSEMBLE_ERROR_SCALE[variable]
                * math.sqrt(0.5 + horizon / 12.0)
            )
            centre_error = rng.normal(0.0, sigma, spec.days)
            member_noise = rng.normal(0.0, sigma, (spec.days, spec.members))
            members = (
                observed[:, None]
                - centre_error[:, None]
                + spec.bias.get(variable, 0.0)
                + spec.dispersion * member_noise
            )
            if variable == "speed":
                members = np.maximum(members, 0.0)
            per_horizon[horizon] = EnsembleSeries(
                variable=variable,
                horizon=horizon,
                times=target_times,
                members=members,
                observations=observed,
            )
        weather_ensembles[variable] = per_horizon

    metadata = BundleMetadata(
        site=spec.site,
        capacity_mw=spec.capacity_mw,
        train_end=np.datetime64(spec.start + spec.train_days * 24 * _HOUR, "s"),
    )
    return DatasetBundle(
        weather_ensembles=weather_ensembles,
        weather_observed={
            v: TimeSeries(times_hourly, truth[v]) for v in WEATHER_VARIABLES
        },
        power_observed=TimeSeries(times_hourly, power),
        metadata=metadata,
    )


# -- CSV bundle i/o ----------------------------------------------------------

SCHEMA_VERSION = 1

_ENSEMBLE_FILE = re.compile(r"^(?P<variable>[a-z]+)_h(?P<horizon>\d{2})\.csv$")


def _format_value(x: float) -> str:
    return "" if np.isnan(x) else repr(float(x))


def write_csv_bundle(bundle: DatasetBundle, directory) -> None:
    """Serialize a bundle into the CSV layout read by :func:`load_csv_bundle`."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for variable in bundle.variables:
        for horizon, series in sorted(bundle.weather_ensembles[variable].items()):
            path = directory / f"{variable}_h{horizon:02d}.csv"
            m = series.n_members
            with open(path, "w", newline="") as fh:
                writer = csv.writer(fh)
                writer.writerow(["time", "obs"] + [f"m{i + 1:02d}" for i in range(m)])
                obs = (
                    series.observations
                    if series.observations is not None
                    else np.full(len(series), np.nan)
                )
                for t, o, row in zip(series.times, obs, series.members):
                    writer.writerow(
                        [format_time(t), _format_value(o)]
                        + [repr(float(x)) for x in row]
                    )
    with open(directory / "power.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["time", "power_mw"])
        for t, p in zip(bundle.power_observed.times, bundle.power_observed.values):
            writer.writerow([format_time(t), _format_value(p)])
    meta = {
        "schema_version": SCHEMA_VERSION,
        "site": bundle.metadata.site,
        "capacity_mw": bundle.metadata.capacity_mw,
        "train_end": (
            None
            if bundle.metadata.train_end is None
            else format_time(bundle.metadata.train_end)
        ),
    }
    with open(directory / "meta.json", "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _read_rows(path: Path, expected_header: Sequence[str] | None):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise BundleError(f"{path.name}: file is empty") from None
        if expected_header is not None and header != list(expected_header):
            raise BundleError(
                f"{path.name}: header {header} does not match schema {list(expected_header)}"
            )
        return header, list(reader)


def _parse_series_file(
    path: Path, variable: str, horizon: int, warnings: list[str]
) -> EnsembleSeries:
    header, rows = _read_rows(path, None)
    if len(header) < 4 or header[:2] != ["time", "obs"]:
        raise BundleError(
            f"{path.name}: header must be time, obs, m01..mM with at least 2 members"
        )
    m = len(header) - 2
    if header[2:] != [f"m{i + 1:02d}" for i in range(m)]:
        raise BundleError(f"{path.name}: member columns must be named m01..m{m:02d}")

    times, obs, members = [], [], []
    for line_no, row in enumerate(rows, start=2):
        if len(row) != m + 2:
            raise BundleError(
                f"{path.name}:{line_no}: expected {m + 2} cells, got {len(row)} "
                "(member count must not vary across rows)"
            )
        try:
            t = parse_time(row[0])
            o = np.nan if row[1] == "" else float(row[1])
            vals = [float(x) for x in row[2:]]
        except (BundleError, ValueError):
            warnings.append(f"{path.name}:{line_no}: rejected row with unparseable cell")
            continue
        times.append(t)
        obs.append(o)
        members.append(vals)
    if not times:
        raise BundleError(f"{path.name}: no valid data rows")
    times_arr = np.array(times, dtype="datetime64[s]")
    dup = np.flatnonzero(times_arr[1:] == times_arr[:-1])
    if dup.size:
        raise BundleError(f"{path.name}: duplicate timestamp {times_arr[dup[0]]}")
    if not np.all(times_arr[1:] > times_arr[:-1]):
        bad = np.flatnonzero(times_arr[1:] < times_arr[:-1])[0]
        raise BundleError(f"{path.name}: non-monotone time at {times_arr[bad + 1]}")
    return EnsembleSeries(
        variable=variable,
        horizon=horizon,
        times=times_arr,
        members=np.array(members),
        observations=np.array(obs),
    )


def _parse_power_file(path: Path, warnings: list[str]) -> TimeSeries:
    _, rows = _read_rows(path, ["time", "power_mw"])
    times, values = [], []
    for line_no, row in enumerate(rows, start=2):
        if len(row) != 2:
            raise BundleError(f"{path.name}:{line_no}: expected 2 cells")
        try:
            t = parse_time(row[0])
            v = np.nan if row[1] == "" else float(row[1])
        except (BundleError, ValueError):
            warnings.append(f"{path.name}:{line_no}: rejected row with unparseable cell")
            continue
        times.append(t)
        values.append(v)
    if not times:
        raise BundleError(f"{path.name}: no valid data rows")
    times_arr = np.array(times, dtype="datetime64[s]")
    if np.any(times_arr[1:] == times_arr[:-1]):
        dup = np.flatnonzero(times_arr[1:] == times_arr[:-1])[0]
        raise BundleError(f"{path.name}: duplicate timestamp {times_arr[dup]}")
    if not np.all(times_arr[1:] > times_arr[:-1]):
        bad = np.flatnonzero(times_arr[1:] < times_arr[:-1])[0]
        raise BundleError(f"{path.name}: non-monotone time at {times_arr[bad + 1]}")
    return TimeSeries(times_arr, np.array(values))


def _observed_union(series_list: list[EnsembleSeries]) -> TimeSeries:
    pairs: dict[np.datetime64, float] = {}
    for series in series_list:
        if series.observations is None:
            continue
        for t, o in zip(series.times, series.observations):
            if np.isfinite(o):
                pairs.setdefault(t, o)
    times = np.array(sorted(pairs), dtype="datetime64[s]")
    values = np.array([pairs[t] for t in times])
    return TimeSeries(times, values)


def load_csv_bundle(
    directory, schema_version: int = SCHEMA_VERSION, train_end=None
) -> DatasetBundle:
    """Load a CSV bundle directory.

    ``train_end`` overrides the split recorded in ``meta.json``. Rows with
    unparseable cells are rejected and reported in the bundle warnings with
    their line numbers; structural problems raise :class:`BundleError`.
    """
    if schema_version != SCHEMA_VERSION:
        raise BundleError(f"unsupported schema version {schema_version}")
    directory = Path(directory)
    if not directory.is_dir():
        raise BundleError(f"bundle directory {directory} does not exist")

    warnings: list[str] = []
    weather_ensembles: dict[str, dict[int, EnsembleSeries]] = {}
    for path in sorted(directory.glob("*.csv")):
        match = _ENSEMBLE_FILE.match(path.name)
        if not match:
            continue
        variable = match.group("variable")
        horizon = int(match.group("horizon"))
        series = _parse_series_file(path, variable, horizon, warnings)
        weather_ensembles.setdefault(variable, {})[horizon] = series
    if not weather_ensembles:
        raise BundleError(f"no ensemble CSV files found in {directory}")

    power_path = directory / "power.csv"
    if not power_path.exists():
        raise BundleError("power.csv is missing")
    power = _parse_power_file(power_path, warnings)

    site, capacity = "unknown", None
    meta_path = directory / "meta.json"
    if meta_path.exists():
        meta = json.loads(meta_path.read_text())
        site = meta.get("site", site)
        capacity = meta.get("capacity_mw")
        if train_end is None and meta.get("train_end"):
            train_end = parse_time(meta["train_end"])

    weather_observed = {
        v: _observed_union(list(per_h.values()))
        for v, per_h in weather_ensembles.items()
    }
    return DatasetBundle(
        weather_ensembles=weather_ensembles,
        weather_observed=weather_observed,
        power_observed=power,
        metadata=BundleMetadata(site=site, capacity_mw=capacity, train_end=train_end),
        warnings=tuple(warnings),
    )
