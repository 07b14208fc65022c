"""Cooperative UWB positioning: TDOA from synchronized anchors fused with inter-tag ranging in per-tag EKFs."""

from importlib.resources import files

from .engine import Estimator, run_monte_carlo, run_scenario, simulate_measurements
from .geometry import AnchorSet, Point2, Room, Scenario
from .metrics import accuracy, cdf, cep, compare_algorithms

__all__ = [
    "AnchorSet", "Estimator", "Point2", "Room", "Scenario", "accuracy", "cdf", "cep",
    "compare_algorithms", "reference_scenario_path", "run_monte_carlo", "run_scenario",
    "simulate_measurements",
]


def reference_scenario_path():
    """Path of the bundled 10 x 10 m, 5-anchor, 3-tag reference scenario."""
    return files(__package__) / "scenarios" / "paper_sec5.json"
