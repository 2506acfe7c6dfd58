from redsolve.sim.config import BUNDLED_SCENARIOS, RuntimeScenario, instantiate, load_scenario
from redsolve.sim.runner import Metrics, SimLog, metrics, run_experiment
from redsolve.sim.trajectory import Circle, HoldOrientation, HoldPoint, Line, StarPath, sample_trajectory

__all__ = [
    "BUNDLED_SCENARIOS", "RuntimeScenario", "instantiate", "load_scenario",
    "Metrics", "SimLog", "metrics", "run_experiment",
    "Circle", "HoldOrientation", "HoldPoint", "Line", "StarPath", "sample_trajectory",
]
