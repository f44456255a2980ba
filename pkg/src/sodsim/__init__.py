"""Discrete-event simulator for fleets and swarms of cooperating drones."""

from .engine import InvariantViolation, RunReport, Simulation, run_scenario
from .kernel import EventKind, Kernel
from .membership import challenge_importance, dump_matrix, importance_matrix
from .replay import Divergence, Verified, VersionMismatch, replay
from .scenario import ParseError, ScenarioSpec, dump_scenario, load_scenario, parse_scenario

__version__ = "0.1.0"

__all__ = [
    "Divergence", "EventKind", "InvariantViolation", "Kernel", "ParseError", "RunReport",
    "ScenarioSpec", "Simulation", "Verified", "VersionMismatch", "challenge_importance",
    "dump_matrix", "dump_scenario", "importance_matrix", "load_scenario", "parse_scenario",
    "replay", "run_scenario",
]
