"""Deterministic discrete-event kernel.

Events fire in ``(fire_time, seq)`` order where ``seq`` is the insertion
counter, so simultaneous events keep their scheduling order. Every processed
event appends one telemetry record; two runs of the same scenario with the
same root seed produce byte-identical telemetry.

Randomness is only available through :meth:`Kernel.fork_rng`, which hands out
one reproducible substream per entity.
"""

from __future__ import annotations

import enum
import hashlib
import heapq
import itertools
import json
import random
from collections import Counter
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional

TELEMETRY_VERSION = "sodsim-telemetry/1"


class PastEvent(ValueError):
    """Raised when an event is scheduled before the current clock."""


class EventKind(str, enum.Enum):
    MESSAGE_DELIVERY = "message_delivery"
    SENSOR_DETECTION = "sensor_detection"
    JAMMING_START = "jamming_start"
    JAMMING_STOP = "jamming_stop"
    ENROL_REQUEST = "enrol_request"
    DRONE_CAPTURE = "drone_capture"
    PERIODIC_REPORT = "periodic_report"
    OBSTACLE_APPEAR = "obstacle_appear"
    AIRSPACE_INJUNCTION = "airspace_injunction"
    LEAVE_REQUEST = "leave_request"
    FLIGHT_STEP = "flight_step"
    WINDOW_CLOSE = "window_close"
    MISSION_START = "mission_start"


@dataclass(order=True)
class SimEvent:
    fire_time: int
    seq: int
    kind: EventKind = field(compare=False)
    target: str = field(compare=False)
    payload: Dict[str, Any] = field(default_factory=dict, compare=False)
    period: int = field(default=0, compare=False)


class RngStream:
    """Per-entity random substream derived from the root seed.

    The stream is a :class:`random.Random` seeded from a SHA-256 of
    ``(root_seed, entity)``; ``draws`` counts how many values were taken.
    """

    def __init__(self, root_seed: int, entity: str):
        self.root_seed = int(root_seed)
        self.entity = str(entity)
        self.draws = 0
        material = f"{self.root_seed}:{self.entity}".encode()
        self._rng = random.Random(int.from_bytes(hashlib.sha256(material).digest()[:8], "big"))

    def random(self) -> float:
        self.draws += 1
        return self._rng.random()

    def uniform(self, a: float, b: float) -> float:
        return a + (b - a) * self.random()

    def randrange(self, n: int) -> int:
        self.draws += 1
        return self._rng.randrange(n)

    def choice(self, seq):
        return seq[self.randrange(len(seq))]

    def token(self, nbytes: int = 8) -> str:
        self.draws += 1
        return self._rng.getrandbits(8 * nbytes).to_bytes(nbytes, "big").hex()

    def __repr__(self) -> str:
        return f"RngStream(seed={self.root_seed}, entity={self.entity!r}, draws={self.draws})"


def payload_digest(data: Any) -> str:
    blob = json.dumps(data, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


@dataclass(frozen=True)
class TelemetryRecord:
    tick: int
    seq: int
    entity: str
    kind: str
    digest: str

    def to_line(self) -> str:
        return f"{self.tick}\t{self.seq}\t{self.entity}\t{self.kind}\t{self.digest}"

    @classmethod
    def from_line(cls, line: str) -> "TelemetryRecord":
        tick, seq, entity, kind, digest = line.rstrip("\n").split("\t")
        return cls(int(tick), int(seq), entity, kind, digest)


@dataclass
class MetricsSummary:
    clock: int = 0
    events: int = 0
    by_kind: Dict[str, int] = field(default_factory=dict)
    counters: Dict[str, Any] = field(default_factory=dict)

    def as_dict(self) -> Dict[str, Any]:
        flat: Dict[str, Any] = {"clock": self.clock, "events": self.events}
        for kind, n in self.by_kind.items():
            flat[f"events.{kind}"] = n
        for key, value in self.counters.items():
            flat[key] = value
        return flat

    def to_text(self) -> str:
        return "".join(f"{k}={v}\n" for k, v in sorted(self.as_dict().items()))

    @staticmethod
    def parse_text(text: str) -> Dict[str, str]:
        out = {}
        for line in text.splitlines():
            if line.strip():
                key, _, value = line.partition("=")
                out[key] = value
        return out


Handler = Callable[[SimEvent], Optional[Dict[str, Any]]]


class Kernel:
    """Virtual clock, ordered event queue and telemetry log."""

    def __init__(self, seed: int = 0, tick_seconds: float = 1.0):
        if tick_seconds <= 0:
            raise ValueError("tick_seconds must be positive")
        self.seed = int(seed)
        self.tick_seconds = float(tick_seconds)
        self.now = 0
        self.telemetry: List[TelemetryRecord] = []
        self.counters: Counter = Counter()
        self._queue: List[SimEvent] = []
        self._seq = itertools.count()
        self._handlers: Dict[EventKind, Handler] = {}
        self._streams: Dict[str, RngStream] = {}
        self._by_kind: Counter = Counter()
        self._stopped = False

    def on(self, kind: EventKind, handler: Handler) -> None:
        self._handlers[EventKind(kind)] = handler

    def schedule(self, fire_time: int, kind: EventKind, target: str,
                 payload: Optional[Dict[str, Any]] = None, period: int = 0) -> SimEvent:
        fire_time = int(fire_time)
        if fire_time < self.now:
            raise PastEvent(f"event at t={fire_time} scheduled when now={self.now}")
        event = SimEvent(fire_time, next(self._seq), EventKind(kind), str(target),
                         dict(payload or {}), int(period))
        heapq.heappush(self._queue, event)
        return event

    def every(self, interval: int, kind: EventKind, target: str,
              payload: Optional[Dict[str, Any]] = None, start: Optional[int] = None) -> SimEvent:
        """Schedule a periodic event, first firing at ``start`` (default now + interval)."""
        if interval < 1:
            raise ValueError("interval must be >= 1")
        first = self.now + interval if start is None else start
        return self.schedule(first, kind, target, payload, period=interval)

    def fork_rng(self, entity: str) -> RngStream:
        stream = self._streams.get(entity)
        if stream is None:
            stream = self._streams[entity] = RngStream(self.seed, entity)
        return stream

    def stop(self) -> None:
        self._stopped = True

    @property
    def stopped(self) -> bool:
        return self._stopped

    def pending(self) -> int:
        return len(self._queue)

    def run_until(self, t_end: int) -> MetricsSummary:
        t_end = int(t_end)
        if t_end < self.now:
            raise PastEvent(f"run_until({t_end}) with now={self.now}")
        while self._queue and self._queue[0].fire_time <= t_end and not self._stopped:
            event = heapq.heappop(self._queue)
            self.now = event.fire_time
            handler = self._handlers.get(event.kind)
            result = handler(event) if handler is not None else None
            digest = payload_digest({"payload": event.payload, "result": result})
            self.telemetry.append(TelemetryRecord(event.fire_time, event.seq, event.target,
                                                  event.kind.value, digest))
            self._by_kind[event.kind.value] += 1
            if event.period and not self._stopped:
                self.schedule(event.fire_time + event.period, event.kind, event.target,
                              event.payload, period=event.period)
        if not self._stopped:
            self.now = t_end
        return self.summary()

    def summary(self) -> MetricsSummary:
        return MetricsSummary(clock=self.now, events=len(self.telemetry),
                              by_kind=dict(sorted(self._by_kind.items())),
                              counters=dict(sorted(self.counters.items())))

    def telemetry_lines(self) -> List[str]:
        return [rec.to_line() for rec in self.telemetry]

    def telemetry_text(self) -> str:
        body = "".join(line + "\n" for line in self.telemetry_lines())
        return f"# {TELEMETRY_VERSION}\n" + body

    def telemetry_digest(self) -> str:
        return hashlib.sha256(self.telemetry_text().encode()).hexdigest()
