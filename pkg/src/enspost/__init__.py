"""Ensemble post-processing strategies for probabilistic wind power forecasts."""

from .distributions import DistributionKind, PredictiveDistribution
from .emos import EmosParameters, EnsembleSeries, calibrate, fit, rolling_calibrate
from .scoring import HistogramKind, ScoreReport, crpss, sample_crps
from .strategies import RunConfig, StrategyId, StrategySpec, run_experiment

__all__ = [
    "DistributionKind",
    "PredictiveDistribution",
    "EmosParameters",
    "EnsembleSeries",
    "calibrate",
    "fit",
    "rolling_calibrate",
    "HistogramKind",
    "ScoreReport",
    "crpss",
    "sample_crps",
    "RunConfig",
    "StrategyId",
    "StrategySpec",
    "run_experiment",
]

__version__ = "0.1.0"
