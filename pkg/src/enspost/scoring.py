"""Forecast verification: CRPS, skill scores, PIT, and rank histograms."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Sequence

import numpy as np

from .distributions import PredictiveDistribution


class HistogramKind(Enum):
    PIT = "pit"
    VERIFICATION_RANK = "verification_rank"


def sample_crps(members: Sequence[float], y: float) -> float:
    """CRPS of an ensemble against a scalar observation.

    Evaluates ``mean(|X_i - y|) - sum_ij |X_i - X_j| / (2 M^2)``. The
    double sum is computed from the sorted members, which is algebraically
    identical and O(M log M).
    """
    x = np.asarray(members, dtype=float)
    if x.ndim != 1 or x.size == 0:
        raise ValueError("ensemble must be a non-empty 1-D sequence")
    m = x.size
    term1 = float(np.mean(np.abs(x - y)))
    xs = np.sort(x)
    i = np.arange(1, m + 1)
    term2 = float(np.sum((2.0 * i - m - 1.0) * xs)) / (m * m)
    return term1 - term2


def sample_crps_series(members: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Row-wise :func:`sample_crps` for a ``[n, M]`` ensemble matrix."""
    x = np.asarray(members, dtype=float)
    ys = np.asarray(ys, dtype=float)
    if x.ndim != 2 or x.shape[0] != ys.shape[0]:
        raise ValueError("members must be [n, M] aligned with n observations")
    m = x.shape[1]
    term1 = np.mean(np.abs(x - ys[:, None]), axis=1)
    xs = np.sort(x, axis=1)
    weights = 2.0 * np.arange(1, m + 1) - m - 1.0
    term2 = xs @ weights / (m * m)
    return term1 - term2


def crpss(crps_model: float, crps_benchmark: float) -> float:
    """Skill score ``1 - crps_model / crps_benchmark``.

    Positive values mean the model improves on the benchmark.
    """
    if not crps_benchmark > 0.0:
        raise ValueError(f"benchmark CRPS must be positive, got {crps_benchmark}")
    return 1.0 - crps_model / crps_benchmark


def verification_rank(members: Sequence[float], y: float, tie_seed: int) -> int:
    """Rank of the observation within the ensemble, in ``1..M+1``.

    Ties are broken by placing the observation uniformly at random among
    the tied positions, seeded for reproducibility.
    """
    x = np.asarray(members, dtype=float)
    if x.ndim != 1 or x.size == 0:
        raise ValueError("ensemble must be a non-empty 1-D sequence")
    below = int(np.sum(x < y))
    ties = int(np.sum(x == y))
    if ties == 0:
        return below + 1
    rng = np.random.default_rng(tie_seed)
    return below + 1 + int(rng.integers(0, ties + 1))


def pit_value(dist: PredictiveDistribution, y: float) -> float:
    """Probability integral transform, i.e. the predictive CDF at ``y``."""
    return dist.cdf(y)


@dataclass(frozen=True)
class HistogramCounts:
    """Binned PIT values or verification ranks."""

    kind: HistogramKind
    bins: tuple[int, ...]
    total: int

    def __post_init__(self):
        if any(b < 0 for b in self.bins):
            raise ValueError("bin counts must be non-negative")
        if sum(self.bins) != self.total:
            raise ValueError("bin counts must sum to total")

    def chi_square(self) -> float:
        """Chi-square statistic against the uniform histogram."""
        counts = np.asarray(self.bins, dtype=float)
        expected = self.total / len(self.bins)
        if expected == 0.0:
            return 0.0
        return float(np.sum((counts - expected) ** 2 / expected))


def build_histogram(values, kind: HistogramKind, n_bins: int) -> HistogramCounts:
    """Bin PIT values over [0, 1] or ranks over ``1..n_bins``.

    For the rank kind, ``n_bins`` must be ``M + 1`` and each rank gets its
    own bin. Out-of-domain inputs are rejected.
    """
    vals = np.asarray(list(values), dtype=float)
    if n_bins < 1:
        raise ValueError("n_bins must be at least 1")
    if kind is HistogramKind.PIT:
        if vals.size and (vals.min() < 0.0 or vals.max() > 1.0):
            raise ValueError("PIT values must lie in [0, 1]")
        idx = np.minimum((vals * n_bins).astype(int), n_bins - 1)
    else:
        if vals.size and (
            vals.min() < 1 or vals.max() > n_bins or np.any(vals != np.round(vals))
        ):
            raise ValueError(f"ranks must be integers in 1..{n_bins}")
        idx = vals.astype(int) - 1
    counts = np.bincount(idx, minlength=n_bins) if vals.size else np.zeros(n_bins, int)
    return HistogramCounts(kind=kind, bins=tuple(int(c) for c in counts), total=int(vals.size))


def merge_histograms(a: HistogramCounts, b: HistogramCounts) -> HistogramCounts:
    """Combine two partial histograms; associative and commutative."""
    if a.kind is not b.kind or len(a.bins) != len(b.bins):
        raise ValueError("histograms must share kind and bin layout")
    bins = tuple(x + y for x, y in zip(a.bins, b.bins))
    return HistogramCounts(kind=a.kind, bins=bins, total=a.total + b.total)


def ks_distance(sample: Sequence[float], cdf) -> float:
    """Kolmogorov-Smirnov distance between a sample and a CDF callable."""
    x = np.sort(np.asarray(sample, dtype=float))
    n = x.size
    if n == 0:
        raise ValueError("sample must be non-empty")
    f = np.array([cdf(v) for v in x])
    upper = np.arange(1, n + 1) / n
    lower = np.arange(0, n) / n
    return float(max(np.max(np.abs(upper - f)), np.max(np.abs(f - lower))))


@dataclass(frozen=True)
class ScoreReport:
    """Per-strategy, per-horizon verification summary.

    ``crps_method`` records whether the strategy was scored with the
    ensemble formula ("sample") or an analytic CRPS ("closed_form").
    """

    strategy_id: str
    horizon: int
    crps_values: tuple[float, ...]
    histogram: HistogramCounts
    crps_method: str
    crpss_vs_raw: float | None = None
    mean_crps: float = field(init=False)

    def __post_init__(self):
        if any(v < 0.0 for v in self.crps_values):
            raise ValueError("CRPS values must be non-negative")
        if self.crps_method not in ("sample", "closed_form"):
            raise ValueError(f"unknown crps_method {self.crps_method!r}")
        object.__setattr__(self, "mean_crps", float(np.mean(self.crps_values)))

    @property
    def n(self) -> int:
        return len(self.crps_values)

    def with_crpss(self, benchmark_mean_crps: float) -> "ScoreReport":
        return ScoreReport(
            strategy_id=self.strategy_id,
            horizon=self.horizon,
            crps_values=self.crps_values,
            histogram=self.histogram,
            crps_method=self.crps_method,
            crpss_vs_raw=crpss(self.mean_crps, benchmark_mean_crps),
        )


def score_csv_lines(reports: Iterable[ScoreReport]) -> list[str]:
    """Rows of the score table: strategy, horizon_h, mean_crps, crpss_pct, n."""
    lines = ["strategy,horizon_h,mean_crps,crpss_pct,n"]
    for r in reports:
        pct = "" if r.crpss_vs_raw is None else repr(round(100.0 * r.crpss_vs_raw, 2))
        lines.append(f"{r.strategy_id},{r.horizon},{r.mean_crps!r},{pct},{r.n}")
    return lines


def write_score_csv(reports: Iterable[ScoreReport], path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write("\n".join(score_csv_lines(reports)) + "\n")
