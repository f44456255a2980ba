"""Deterministic replay: re-run a scenario and compare telemetry record by record."""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Union

from .engine import Simulation
from .kernel import TELEMETRY_VERSION, TelemetryRecord
from .scenario import ScenarioSpec


class VersionMismatch(ValueError):
    pass


@dataclass(frozen=True)
class Verified:
    records: int


@dataclass(frozen=True)
class Divergence:
    index: int
    expected: Optional[TelemetryRecord]
    actual: Optional[TelemetryRecord]


def parse_log(text: str) -> List[TelemetryRecord]:
    lines = text.splitlines()
    if not lines or lines[0].strip() != f"# {TELEMETRY_VERSION}":
        found = lines[0].strip() if lines else "<empty>"
        raise VersionMismatch(f"expected '# {TELEMETRY_VERSION}', found {found!r}")
    return [TelemetryRecord.from_line(l) for l in lines[1:] if l.strip()]


def replay(log_text: str, spec: ScenarioSpec, store_path=None) -> Union[Verified, Divergence]:
    """Re-execute ``spec`` and report the first record that differs from the log."""
    expected = parse_log(log_text)
    sim = Simulation(spec, store_path)
    sim.run()
    actual = sim.kernel.telemetry
    for i, (e, a) in enumerate(zip(expected, actual)):
        if e != a:
            return Divergence(i, e, a)
    if len(expected) != len(actual):
        i = min(len(expected), len(actual))
        return Divergence(i, expected[i] if i < len(expected) else None,
                          actual[i] if i < len(actual) else None)
    return Verified(len(actual))
