"""Command-line front end: run experiments from a config file.

Subcommands::

    enspost run <config.ini> [--out DIR] [--plots] [--jobs N]
    enspost validate <config.ini>
    enspost diagnose <bundle_dir> [--out DIR]

The config file is declarative INI with three sections: ``[dataset]``
(synthetic scenario or CSV bundle path), ``[experiment]`` (strategy grid
and seed), ``[output]``. Two runs with the same config produce
byte-identical CSV outputs.

Exit codes: 0 success, 1 configuration or load error, 2 partial grid
failure.
"""

from __future__ import annotations

import argparse
import configparser
import dataclasses
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dataio import (
    BundleError,
    DatasetBundle,
    SyntheticSpec,
    WEATHER_VARIABLES,
    generate_synthetic,
    load_csv_bundle,
    parse_time,
)
from .distributions import DistributionKind, PredictiveDistribution
from .scoring import HistogramKind, build_histogram, ks_distance, verification_rank
from .strategies import (
    MODEL_NAMES,
    ExperimentResult,
    RunConfig,
    StrategyId,
    run_experiment,
    validate_run,
    _derive_seed,
)

_POWER_KINDS = {
    "truncated_normal": DistributionKind.TRUNCATED_NORMAL,
    "gamma": DistributionKind.GAMMA,
}


class ConfigError(ValueError):
    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")


@dataclass(frozen=True)
class ExperimentConfig:
    """A fully validated experiment description."""

    dataset_kind: str
    synthetic: SyntheticSpec | None
    csv_path: Path | None
    csv_train_end: np.datetime64 | None
    run: RunConfig
    out_dir: Path
    plots: bool


def _section(parser: configparser.ConfigParser, name: str) -> configparser.SectionProxy:
    if not parser.has_section(name):
        raise ConfigError(name, "section is missing")
    return parser[name]


def _get(section, key, cast, *, required=False, default=None):
    field = f"{section.name}.{key}"
    raw = section.get(key)
    if raw is None or raw.strip() == "":
        if required:
            raise ConfigError(field, "is required")
        return default
    try:
        return cast(raw.strip())
    except (ValueError, TypeError) as exc:
        raise ConfigError(field, f"invalid value {raw.strip()!r} ({exc})") from exc


def _int_list(raw: str) -> tuple[int, ...]:
    return tuple(int(x.strip()) for x in raw.split(",") if x.strip())


def _str_list(raw: str) -> tuple[str, ...]:
    return tuple(x.strip() for x in raw.split(",") if x.strip())


def _bool(raw: str) -> bool:
    lowered = raw.strip().lower()
    if lowered in ("true", "yes", "1", "on"):
        return True
    if lowered in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"expected a boolean, got {raw!r}")


def parse_experiment_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError("config", f"file {path} does not exist")
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        parser.read(path)
    except configparser.Error as exc:
        raise ConfigError("config", f"cannot parse {path}: {exc}") from exc

    exp = _section(parser, "experiment")
    seed = _get(exp, "seed", int, required=True)

    strategy_names = _get(exp, "strategies", _str_list, required=True)
    strategies = []
    by_value = {s.value: s for s in StrategyId}
    for name in strategy_names:
        if name not in by_value:
            raise ConfigError("experiment.strategies", f"unknown strategy {name!r}")
        strategies.append(by_value[name])

    models = _get(exp, "models", _str_list, default=("linear",))
    for name in models:
        if name not in MODEL_NAMES:
            raise ConfigError("experiment.models", f"unknown model {name!r}")

    horizons = _get(exp, "horizons", _int_list, required=True)
    for h in horizons:
        if h < 1:
            raise ConfigError("experiment.horizons", f"horizon {h} must be positive")

    def dist_kind(key):
        name = _get(exp, key, str, default="truncated_normal")
        if name not in _POWER_KINDS:
            raise ConfigError(
                f"experiment.{key}",
                f"unknown distribution {name!r} (choose truncated_normal or gamma)",
            )
        return _POWER_KINDS[name]

    out_section = parser["output"] if parser.has_section("output") else None
    out_dir = Path(out_section.get("dir", "out")) if out_section else Path("out")
    plots = _bool(out_section.get("plots", "false")) if out_section else False
    jobs = int(out_section.get("jobs", "1")) if out_section else 1

    run = RunConfig(
        strategies=tuple(strategies),
        model_names=tuple(models),
        horizons=tuple(sorted(set(horizons))),
        power_dist_kind=dist_kind("power_distribution"),
        wind_speed_dist_kind=dist_kind("speed_distribution"),
        window_days=_get(exp, "window_days", int, default=40),
        sample_count=_get(exp, "sample_count", int, default=None),
        pit_bins=_get(exp, "pit_bins", int, default=20),
        seed=seed,
        jobs=jobs,
    )

    ds = _section(parser, "dataset")
    kind = _get(ds, "kind", str, required=True)
    synthetic, csv_path, csv_train_end = None, None, None
    if kind == "synthetic":
        dataset_horizons = _get(ds, "horizons", _int_list, default=run.horizons)
        missing = sorted(set(run.horizons) - set(dataset_horizons))
        if missing:
            raise ConfigError(
                "experiment.horizons",
                f"horizon {missing[0]} not generated by the dataset "
                f"(dataset horizons: {sorted(dataset_horizons)})",
            )
        bias = {}
        for variable in WEATHER_VARIABLES:
            value = _get(ds, f"{variable}_bias", float, default=None)
            if value is not None:
                bias[variable] = value
        try:
            synthetic = SyntheticSpec(
                days=_get(ds, "days", int, default=130),
                members=_get(ds, "members", int, default=20),
                horizons=tuple(dataset_horizons),
                train_days=_get(ds, "train_days", int, default=70),
                capacity_mw=_get(ds, "capacity_mw", float, default=100.0),
                cut_in=_get(ds, "cut_in", float, default=3.0),
                rated=_get(ds, "rated", float, default=12.0),
                cut_out=_get(ds, "cut_out", float, default=25.0),
                bias=bias,
                dispersion=_get(ds, "dispersion", float, default=1.0),
                noise_sd_mw=_get(ds, "noise_sd_mw", float, default=2.0),
                site=_get(ds, "site", str, default="synthetic"),
            )
        except ValueError as exc:
            raise ConfigError("dataset", str(exc)) from exc
    elif kind == "csv":
        csv_path = Path(_get(ds, "path", str, required=True))
        if not csv_path.is_dir():
            raise ConfigError("dataset.path", f"bundle directory {csv_path} does not exist")
        csv_train_end = _get(ds, "train_end", parse_time, default=None)
    else:
        raise ConfigError("dataset.kind", f"unknown kind {kind!r} (synthetic or csv)")

    return ExperimentConfig(
        dataset_kind=kind,
        synthetic=synthetic,
        csv_path=csv_path,
        csv_train_end=csv_train_end,
        run=run,
        out_dir=out_dir,
        plots=plots,
    )


def build_bundle(config: ExperimentConfig) -> DatasetBundle:
    if config.dataset_kind == "synthetic":
        return generate_synthetic(
            config.synthetic, seed=_derive_seed(config.run.seed, "data")
        )
    return load_csv_bundle(config.csv_path, train_end=config.csv_train_end)


# -- output writers ----------------------------------------------------------

def _pct(value: float | None) -> str:
    return "" if value is None else repr(round(100.0 * value, 2))


def _report_rows(result: ExperimentResult, config: RunConfig):
    for model in config.model_names:
        for strategy in config.strategies:
            for horizon in config.horizons:
                report = result.reports.get((model, strategy.value, horizon))
                if report is not None:
                    yield model, strategy.value, horizon, report


def write_outputs(result: ExperimentResult, config: RunConfig, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)

    lines = ["model,strategy,horizon_h,mean_crps,crpss_pct,n"]
    for model, sid, horizon, r in _report_rows(result, config):
        lines.append(
            f"{model},{sid},{horizon},{r.mean_crps!r},{_pct(r.crpss_vs_raw)},{r.n}"
        )
    (out_dir / "scores.csv").write_text("\n".join(lines) + "\n")

    lines = ["model,strategy,horizon_h,crpss_pct"]
    for model, sid, horizon, r in _report_rows(result, config):
        lines.append(f"{model},{sid},{horizon},{_pct(r.crpss_vs_raw)}")
    (out_dir / "crpss.csv").write_text("\n".join(lines) + "\n")

    lines = ["model,strategy,horizon_h,stage,variable,kind,bin_index,count"]
    weather_keys = sorted(result.weather_histograms)
    for model, horizon, stage, variable in weather_keys:
        hist = result.weather_histograms[(model, horizon, stage, variable)]
        for b, count in enumerate(hist.bins):
            lines.append(
                f"{model},,{horizon},{stage},{variable},{hist.kind.value},{b},{count}"
            )
    for model, sid, horizon, r in _report_rows(result, config):
        for b, count in enumerate(r.histogram.bins):
            lines.append(
                f"{model},{sid},{horizon},power,power,{r.histogram.kind.value},{b},{count}"
            )
    (out_dir / "histograms.csv").write_text("\n".join(lines) + "\n")

    lines = ["model,strategy,horizon_h,time,crps"]
    for model, sid, horizon, _ in _report_rows(result, config):
        for t, value in result.crps_details[(model, sid, horizon)]:
            lines.append(f"{model},{sid},{horizon},{t}Z,{value!r}")
    (out_dir / "crps_detail.csv").write_text("\n".join(lines) + "\n")

    lines = ["model,variable,horizon_h,date,a,b,c,d,kind"]
    traces = sorted(
        result.parameter_traces, key=lambda row: (row[0], row[1], row[2], row[3])
    )
    for model, variable, horizon, date, p in traces:
        lines.append(
            f"{model},{variable},{horizon},{date}Z,"
            f"{p.a!r},{p.b!r},{p.c!r},{p.d!r},{p.kind.value}"
        )
    (out_dir / "emos_params.csv").write_text("\n".join(lines) + "\n")


# -- minimal SVG charts -------------------------------------------------------

_PALETTE = ("#1b6ca8", "#d1495b", "#66a182", "#edae49", "#775dd0")


def _svg_header(width: int, height: int, title: str) -> list[str]:
    return [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<text x="{width / 2}" y="20" text-anchor="middle" font-size="14" '
        f'font-family="sans-serif">{title}</text>',
    ]


def _svg_line_chart(path: Path, title: str, series: dict[str, list[tuple[float, float]]]) -> None:
    width, height, margin = 640, 400, 60
    xs = [x for pts in series.values() for x, _ in pts]
    ys = [y for pts in series.values() for _, y in pts]
    if not xs:
        return
    x_lo, x_hi = min(xs), max(xs)
    y_lo, y_hi = min(ys + [0.0]), max(ys + [0.0])
    x_span = (x_hi - x_lo) or 1.0
    y_span = (y_hi - y_lo) or 1.0

    def sx(x):
        return margin + (x - x_lo) / x_span * (width - 2 * margin)

    def sy(y):
        return height - margin - (y - y_lo) / y_span * (height - 2 * margin)

    parts = _svg_header(width, height, title)
    parts.append(
        f'<line x1="{margin}" y1="{sy(0)}" x2="{width - margin}" y2="{sy(0)}" '
        'stroke="#999" stroke-dasharray="4 3"/>'
    )
    for i, (name, pts) in enumerate(sorted(series.items())):
        color = _PALETTE[i % len(_PALETTE)]
        coords = " ".join(f"{sx(x):.1f},{sy(y):.1f}" for x, y in sorted(pts))
        parts.append(
            f'<polyline points="{coords}" fill="none" stroke="{color}" stroke-width="2"/>'
        )
        parts.append(
            f'<text x="{width - margin + 4}" y="{30 + 16 * i}" font-size="11" '
            f'font-family="sans-serif" fill="{color}">{name}</text>'
        )
    parts.append(
        f'<text x="{width / 2}" y="{height - 12}" text-anchor="middle" font-size="11" '
        f'font-family="sans-serif">forecast horizon (h)</text>'
    )
    parts.append(f"<text x=\"14\" y=\"{height / 2}\" font-size=\"11\" "
                 f"font-family=\"sans-serif\" transform=\"rotate(-90 14 {height / 2})\" "
                 f"text-anchor=\"middle\">CRPSS (%)</text>")
    parts.append("</svg>")
    path.write_text("\n".join(parts) + "\n")


def _svg_bar_chart(path: Path, title: str, counts) -> None:
    width, height, margin = 640, 400, 60
    n = len(counts)
    peak = max(max(counts), 1)
    bar_w = (width - 2 * margin) / n
    parts = _svg_header(width, height, title)
    for i, count in enumerate(counts):
        bar_h = count / peak * (height - 2 * margin)
        x = margin + i * bar_w
        y = height - margin - bar_h
        parts.append(
            f'<rect x="{x:.1f}" y="{y:.1f}" width="{bar_w * 0.9:.1f}" '
            f'height="{bar_h:.1f}" fill="#1b6ca8"/>'
        )
    parts.append(
        f'<line x1="{margin}" y1="{height - margin}" x2="{width - margin}" '
        f'y2="{height - margin}" stroke="#333"/>'
    )
    parts.append("</svg>")
    path.write_text("\n".join(parts) + "\n")


def write_plots(result: ExperimentResult, config: RunConfig, out_dir: Path) -> None:
    for model in config.model_names:
        series: dict[str, list[tuple[float, float]]] = {}
        for strategy in config.strategies:
            if strategy is StrategyId.RAW:
                continue
            pts = []
            for horizon in config.horizons:
                report = result.reports.get((model, strategy.value, horizon))
                if report is not None and report.crpss_vs_raw is not None:
                    pts.append((float(horizon), 100.0 * report.crpss_vs_raw))
            if pts:
                series[strategy.value] = pts
        if series:
            _svg_line_chart(
                out_dir / f"crpss_{model}.svg", f"CRPSS vs horizon ({model})", series
            )
    for model, sid, horizon, r in _report_rows(result, config):
        _svg_bar_chart(
            out_dir / f"hist_{model}_{sid}_h{horizon:02d}.svg",
            f"{sid} h{horizon} ({r.histogram.kind.value})",
            r.histogram.bins,
        )


# -- subcommands ---------------------------------------------------------------

def cmd_validate(config_path) -> int:
    try:
        config = parse_experiment_config(config_path)
        bundle = build_bundle(config)
        problems = validate_run(bundle, config.run)
    except (ConfigError, BundleError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    if problems:
        for problem in problems:
            print(f"config error: {problem}", file=sys.stderr)
        return 1
    run = config.run
    print(f"dataset: {config.dataset_kind} ({bundle.metadata.site})")
    print(f"variables: {', '.join(bundle.variables)}")
    print(f"strategies: {', '.join(s.value for s in run.strategies)}")
    print(f"models: {', '.join(run.model_names)}")
    print(f"horizons: {', '.join(str(h) for h in run.horizons)}")
    print(
        f"window_days: {run.window_days}  sample_count: "
        f"{run.sample_count or 'ensemble size'}  seed: {run.seed}"
    )
    cells = len(run.model_names) * len(run.horizons)
    print(f"grid: {cells} cells x {len(run.strategies)} strategies")
    return 0


def cmd_run(config_path, out_override=None, plots_override=False, jobs_override=None) -> int:
    try:
        config = parse_experiment_config(config_path)
        bundle = build_bundle(config)
        problems = validate_run(bundle, config.run)
        if problems:
            for problem in problems:
                print(f"config error: {problem}", file=sys.stderr)
            return 1
    except (ConfigError, BundleError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1

    run_cfg = config.run
    if jobs_override is not None:
        run_cfg = dataclasses.replace(run_cfg, jobs=jobs_override)
    out_dir = Path(out_override) if out_override else config.out_dir
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        print(f"config error: output.dir: {exc}", file=sys.stderr)
        return 1

    result = run_experiment(bundle, run_cfg)
    write_outputs(result, run_cfg, out_dir)
    if config.plots or plots_override:
        write_plots(result, run_cfg, out_dir)

    for warning in result.warnings:
        print(f"warning: {warning}", file=sys.stderr)
    if result.failures:
        for key, message in sorted(result.failures.items()):
            print(f"failed: {key}: {message}", file=sys.stderr)
        print(f"wrote partial results to {out_dir}", file=sys.stderr)
        return 2
    print(f"wrote results to {out_dir}")
    return 0


def _moment_fits(values: np.ndarray) -> dict[str, PredictiveDistribution]:
    mean = float(np.mean(values))
    sd = float(np.std(values))
    if sd == 0.0:
        return {}
    fits = {"normal": PredictiveDistribution(DistributionKind.NORMAL, mean, sd)}
    if np.all(values >= 0.0) and mean > 0.0:
        fits["truncated_normal"] = PredictiveDistribution(
            DistributionKind.TRUNCATED_NORMAL, mean, sd
        )
        fits["gamma"] = PredictiveDistribution(DistributionKind.GAMMA, mean, sd)
    return fits


def cmd_diagnose(bundle_path, out_dir="out") -> int:
    try:
        bundle = load_csv_bundle(bundle_path)
    except BundleError as exc:
        print(f"load error: {exc}", file=sys.stderr)
        return 1
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    print("variable moment summaries and KS distances to moment-fitted candidates")
    targets = {v: bundle.weather_observed[v].values for v in bundle.variables}
    power = bundle.power_observed.values
    targets["power"] = power[np.isfinite(power)]
    for name in list(bundle.variables) + ["power"]:
        values = targets[name]
        values = values[np.isfinite(values)]
        if values.size == 0:
            print(f"  {name}: no observations")
            continue
        line = (
            f"  {name}: n={values.size} mean={np.mean(values):.3f} "
            f"sd={np.std(values):.3f} min={np.min(values):.3f} max={np.max(values):.3f}"
        )
        for fit_name, dist in sorted(_moment_fits(values).items()):
            line += f" ks[{fit_name}]={ks_distance(values, dist.cdf):.4f}"
        print(line)

    lines = ["variable,horizon_h,bin_index,count,chi_square"]
    for variable in bundle.variables:
        for horizon, series in sorted(bundle.weather_ensembles[variable].items()):
            if series.observations is None:
                continue
            ok = np.flatnonzero(np.isfinite(series.observations))
            if ok.size == 0:
                continue
            ranks = [
                verification_rank(
                    series.members[i], series.observations[i], tie_seed=int(i)
                )
                for i in ok
            ]
            hist = build_histogram(
                ranks, HistogramKind.VERIFICATION_RANK, series.n_members + 1
            )
            chi2 = hist.chi_square()
            for b, count in enumerate(hist.bins):
                lines.append(f"{variable},{horizon},{b},{count},{chi2!r}")
            print(
                f"  rank histogram {variable} h{horizon}: chi_square={chi2:.2f} "
                f"over {len(hist.bins)} bins"
            )
    (out / "raw_rank_histograms.csv").write_text("\n".join(lines) + "\n")
    print(f"wrote rank histograms to {out / 'raw_rank_histograms.csv'}")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="enspost",
        description="EMOS post-processing strategies for wind power ensembles",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run an experiment from a config file")
    p_run.add_argument("config")
    p_run.add_argument("--out", default=None, help="override the output directory")
    p_run.add_argument("--plots", action="store_true", help="also write SVG charts")
    p_run.add_argument("--jobs", type=int, default=None, help="parallel grid cells")

    p_val = sub.add_parser("validate", help="validate a config without running")
    p_val.add_argument("config")

    p_diag = sub.add_parser("diagnose", help="summarize a CSV bundle")
    p_diag.add_argument("bundle")
    p_diag.add_argument("--out", default="out", help="output directory for CSVs")

    args = parser.parse_args(argv)
    if args.command == "run":
        return cmd_run(args.config, args.out, args.plots, args.jobs)
    if args.command == "validate":
        return cmd_validate(args.config)
    return cmd_diagnose(args.bundle, args.out)


if __name__ == "__main__":
    sys.exit(main())
