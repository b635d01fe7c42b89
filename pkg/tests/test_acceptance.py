"""Acceptance suite: every criterion runs at its stated tolerance and
prints one PASS line when it holds (run with ``pytest -s`` to see them).
"""

import time

import numpy as np
import pytest
from scipy import stats

from enspost import emos
from enspost.cli import cmd_run
from enspost.dataio import SyntheticSpec, generate_synthetic, write_csv_bundle
from enspost.distributions import DistributionKind, PredictiveDistribution
from enspost.emos import EnsembleSeries, rolling_calibrate
from enspost.models import mlp_init_weights, mlp_loss_and_grad
from enspost.optimizer import GradientMode, ObjectiveSpec, minimize
from enspost.scoring import (
    HistogramKind,
    build_histogram,
    pit_value,
    sample_crps,
    verification_rank,
)
from enspost.strategies import RunConfig, StrategyId, run_experiment

from conftest import crps_by_quadrature, random_case, reference_cdf, support_lower

KINDS = list(DistributionKind)


def _announce(name):
    print(f"[ACCEPTANCE] {name}: PASS")


def test_crps_oracle_equivalence():
    """200 randomized (kind, parameters, y): closed form vs quadrature < 1e-6."""
    started = time.time()
    rng = np.random.default_rng(42)
    for i in range(200):
        kind = KINDS[i % 3]
        location, scale, y = random_case(kind, rng)
        dist = PredictiveDistribution(kind, location, scale)
        oracle = crps_by_quadrature(
            reference_cdf(kind, location, scale), y, lower=support_lower(kind)
        )
        assert abs(dist.crps(y) - oracle) < 1e-6, (kind, location, scale, y)
    elapsed = time.time() - started
    assert elapsed < 10.0, f"oracle check took {elapsed:.1f}s"
    _announce("CRPS oracle equivalence (200 cases, <1e-6, <10s)")


def test_sample_crps_convergence():
    """10,000 draws reproduce the closed form within 2% over 20 seeded cases."""
    for seed in range(20):
        rng = np.random.default_rng(seed + 1000)
        kind = KINDS[seed % 3]
        location = rng.uniform(5.0, 50.0)
        scale = rng.uniform(1.0, 8.0)
        dist = PredictiveDistribution(kind, location, scale)
        offset = rng.choice([-2.0, -1.0, 0.0, 1.0, 2.0]) + rng.uniform(-0.25, 0.25)
        y = max(location + offset * scale, 0.05)
        estimate = sample_crps(dist.sample(10_000, seed=seed), y)
        truth = dist.crps(y)
        assert abs(estimate - truth) / truth < 0.02, (seed, kind)
    _announce("sample-CRPS convergence (20 seeds, 2% relative)")


def test_emos_parameter_recovery():
    """(a, b, c, d) = (2, 1, 0.5, 1.0) recovered within 5% from 1,000 rows."""
    started = time.time()
    rng = np.random.default_rng(18)
    n, m = 1000, 50
    centers = rng.normal(10.0, 3.0, (n, 1))
    # two spread regimes so the variance intercept and slope separate
    widths = np.where(rng.random((n, 1)) < 0.5, 0.1, 1.5)
    members = centers + widths * rng.normal(0.0, 1.0, (n, m))
    means = members.mean(axis=1)
    variances = members.var(axis=1)
    y = rng.normal(2.0 + 1.0 * means, np.sqrt(0.5 + 1.0 * variances))

    params = emos.fit(members, y, DistributionKind.NORMAL)
    assert params.a == pytest.approx(2.0, rel=0.05)
    assert params.b == pytest.approx(1.0, rel=0.05)
    assert params.c == pytest.approx(0.5, rel=0.05)
    assert params.d == pytest.approx(1.0, rel=0.05)
    elapsed = time.time() - started
    assert elapsed < 30.0, f"recovery took {elapsed:.1f}s"
    _announce("EMOS parameter recovery (1,000 rows, 5%, <30s)")


def test_calibration_diagnostics():
    """Bias +2 sigma: raw ranks rejected in >=19/20 seeds; PIT after power
    calibration uniform in >=18/20 seeds (chi-square, 1% level)."""
    n, m, sigma, window = 120, 9, 5.0, 40
    times = np.datetime64("2017-01-01T12:00:00", "s") + np.arange(n) * np.timedelta64(
        24, "h"
    )
    raw_rejections, pit_passes = 0, 0
    rank_crit = stats.chi2.ppf(0.99, df=m)
    pit_crit = stats.chi2.ppf(0.99, df=9)
    for seed in range(20):
        rng = np.random.default_rng(seed)
        latent = 50.0 + 10.0 * np.sin(np.arange(n) / 9.0) + rng.normal(0, 4, n)
        obs = latent + sigma * rng.normal(0, 1, n)
        members = latent[:, None] + 2.0 * sigma + sigma * rng.normal(0, 1, (n, m))

        ranks = [verification_rank(members[i], obs[i], tie_seed=i) for i in range(n)]
        rank_hist = build_histogram(ranks, HistogramKind.VERIFICATION_RANK, m + 1)
        raw_rejections += rank_hist.chi_square() > rank_crit

        series = EnsembleSeries("power", 12, times, members, obs)
        rolling = rolling_calibrate(series, window, DistributionKind.TRUNCATED_NORMAL)
        lookup = dict(zip(times, obs))
        pits = [
            pit_value(dist, lookup[t])
            for t, dist in zip(rolling.times, rolling.distributions)
        ]
        pit_hist = build_histogram(pits, HistogramKind.PIT, 10)
        pit_passes += pit_hist.chi_square() < pit_crit

    assert raw_rejections >= 19, f"raw rejections {raw_rejections}/20"
    assert pit_passes >= 18, f"PIT passes {pit_passes}/20"
    _announce(
        f"calibration diagnostics (raw rejected {raw_rejections}/20, "
        f"PIT uniform {pit_passes}/20)"
    )


def test_strategy_ordering():
    """Biased, underdispersed weather plus a noise-contaminated power
    relation: OneStepP and TwoStepWP beat Raw by >5% at every horizon;
    the CSV ingestion path reproduces the signs end-to-end."""
    spec = SyntheticSpec(
        days=130,
        members=20,
        horizons=(6, 12, 24),
        train_days=70,
        bias={"speed": 2.0, "temperature": 1.0},
        dispersion=0.5,
        noise_sd_mw=4.0,
    )
    bundle = generate_synthetic(spec, seed=5)
    config = RunConfig(
        strategies=(
            StrategyId.RAW,
            StrategyId.ONE_STEP_P,
            StrategyId.ONE_STEP_W,
            StrategyId.TWO_STEP_WP,
        ),
        horizons=(6, 12, 24),
        window_days=40,
        seed=11,
    )
    result = run_experiment(bundle, config)
    assert not result.failures
    for horizon in (6, 12, 24):
        one_p = result.reports[("linear", "one_step_p", horizon)].crpss_vs_raw
        two = result.reports[("linear", "two_step_wp", horizon)].crpss_vs_raw
        assert one_p > 0.05, f"one_step_p h{horizon}: {one_p:.3f}"
        assert two > 0.05, f"two_step_wp h{horizon}: {two:.3f}"
    _announce("strategy ordering (one_step_p and two_step_wp > +5% per horizon)")


def test_strategy_ordering_via_csv_pipeline(tmp_path):
    """The same ordering holds after a round trip through the CSV layout."""
    spec = SyntheticSpec(
        days=130,
        members=20,
        horizons=(12,),
        train_days=70,
        bias={"speed": 2.0, "temperature": 1.0},
        dispersion=0.5,
        noise_sd_mw=4.0,
    )
    from enspost.dataio import load_csv_bundle

    write_csv_bundle(generate_synthetic(spec, seed=5), tmp_path / "bundle")
    bundle = load_csv_bundle(tmp_path / "bundle")
    config = RunConfig(
        strategies=(StrategyId.RAW, StrategyId.ONE_STEP_P, StrategyId.TWO_STEP_WP),
        horizons=(12,),
        window_days=40,
        seed=11,
    )
    result = run_experiment(bundle, config)
    assert not result.failures
    cells = [
        result.reports[("linear", s, 12)].crpss_vs_raw
        for s in ("one_step_p", "two_step_wp")
    ]
    positive = sum(c > 0 for c in cells)
    assert positive >= 0.8 * len(cells), cells
    _announce("strategy ordering via CSV ingestion (signs match)")


def test_optimizer_criteria():
    """Rosenbrock to 1e-5; every EMOS fit trace is monotone non-increasing."""

    def rosenbrock(x):
        value = 100.0 * (x[1] - x[0] ** 2) ** 2 + (1.0 - x[0]) ** 2
        grad = np.array(
            [
                -400.0 * x[0] * (x[1] - x[0] ** 2) - 2.0 * (1.0 - x[0]),
                200.0 * (x[1] - x[0] ** 2),
            ]
        )
        return value, grad

    spec = ObjectiveSpec(2, rosenbrock, np.array([-1.2, 1.0]), GradientMode.ANALYTIC)
    result = minimize(spec, tol=1e-8, max_iter=500)
    assert result.converged
    assert np.allclose(result.point, [1.0, 1.0], atol=1e-5)

    rng = np.random.default_rng(7)
    monotone_fits = 0
    total = 0
    for kind in KINDS:
        for _ in range(15):
            centers = rng.uniform(20.0, 60.0, (40, 1))
            members = centers + rng.uniform(0.5, 3.0) * rng.normal(0, 1, (40, 12))
            y = np.clip(
                rng.normal(members.mean(axis=1) - 5.0, 4.0), 0.05, None
            )
            objective = emos.crps_objective(members, y, kind)
            trace = minimize(objective, max_iter=200).trace
            total += 1
            monotone_fits += all(b <= a for a, b in zip(trace, trace[1:]))
    assert monotone_fits == total, f"{monotone_fits}/{total} monotone"
    _announce(f"optimizer (Rosenbrock 1e-5; {total}/{total} monotone EMOS fits)")


def test_mlp_gradient_check():
    """Analytic MLP gradients match central differences to 1e-4 at 10 points."""
    rng = np.random.default_rng(12)
    X = rng.normal(0, 1, (60, 8))
    y = rng.normal(0, 1, 60)
    for point in range(10):
        w = mlp_init_weights(8, np.random.default_rng(100 + point))
        _, grad = mlp_loss_and_grad(w, X, y)
        fd = np.empty_like(w)
        for i in range(w.size):
            step = np.zeros_like(w)
            step[i] = 1e-6
            fd[i] = (
                mlp_loss_and_grad(w + step, X, y)[0]
                - mlp_loss_and_grad(w - step, X, y)[0]
            ) / 2e-6
        rel = np.linalg.norm(grad - fd) / (np.linalg.norm(fd) + 1e-12)
        assert rel < 1e-4, f"point {point}: {rel:.2e}"
    _announce("MLP gradient check (10 points, <1e-4 relative)")


def test_experiment_determinism(tmp_path):
    """Identical configs produce byte-identical scores.csv."""
    config_text = f"""
[dataset]
kind = synthetic
days = 50
members = 6
train_days = 30
speed_bias = 1.5
dispersion = 0.6
horizons = 12

[experiment]
strategies = raw, one_step_p
horizons = 12
window_days = 12
seed = 7

[output]
dir = {tmp_path / "out"}
"""
    config = tmp_path / "config.ini"
    config.write_text(config_text)
    assert cmd_run(config, out_override=tmp_path / "a") == 0
    assert cmd_run(config, out_override=tmp_path / "b") == 0
    bytes_a = (tmp_path / "a" / "scores.csv").read_bytes()
    bytes_b = (tmp_path / "b" / "scores.csv").read_bytes()
    assert bytes_a == bytes_b
    _announce("determinism (byte-identical scores.csv)")
