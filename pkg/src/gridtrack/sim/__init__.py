"""Closed-loop simulation: scenario bundles, the day loop and metrics."""

from .harness import (
    MODES,
    Metrics,
    RunRecord,
    RunRecordError,
    SimulationError,
    compare,
    compute_metrics,
    metrics_from_errors,
    run_chain,
    run_day,
)
from .scenario import Scenario, ScenarioError, load_chain, load_scenario

__all__ = [
    "MODES",
    "Metrics",
    "RunRecord",
    "RunRecordError",
    "Scenario",
    "ScenarioError",
    "SimulationError",
    "compare",
    "compute_metrics",
    "load_chain",
    "load_scenario",
    "metrics_from_errors",
    "run_chain",
    "run_day",
]
