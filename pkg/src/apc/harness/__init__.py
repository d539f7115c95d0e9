"""Experiment harness: configuration, runs, sweeps, matchups, plot data."""

from apc.harness.config import AgentSpec, ConfigError, ExperimentConfig, load_config, parse_config
from apc.harness.experiment import (
    COARSE_GRID,
    FULL_GRID,
    OPPONENTS,
    ExperimentResult,
    MatchupResult,
    SweepResult,
    emit_plot_data,
    evaluate_matchup,
    intensity_probe,
    run_experiment,
    sweep_cd,
)
from apc.harness.runner import METRIC_COLUMNS, WINDOW_COLUMNS, MetricRow, RunResult, prepare, run_seed, train

__all__ = [
    "COARSE_GRID",
    "FULL_GRID",
    "METRIC_COLUMNS",
    "OPPONENTS",
    "WINDOW_COLUMNS",
    "AgentSpec",
    "ConfigError",
    "ExperimentConfig",
    "ExperimentResult",
    "MatchupResult",
    "MetricRow",
    "RunResult",
    "SweepResult",
    "emit_plot_data",
    "evaluate_matchup",
    "intensity_probe",
    "load_config",
    "parse_config",
    "prepare",
    "run_experiment",
    "run_seed",
    "sweep_cd",
    "train",
]
