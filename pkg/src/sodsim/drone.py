"""Individual drone operations: flight, energy, monitoring, avoidance, self-preservation."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, Iterable, List, Optional, Sequence, Set, Tuple

from .policy import PolicySet

Vec3 = Tuple[float, float, float]

HOVER = "hover"
CRUISE = "cruise"
COMPUTE = "compute"
RADIO = "radio"
ACTIVITIES = (HOVER, CRUISE, COMPUTE, RADIO)
TIME_BASED = frozenset({HOVER, CRUISE})


class Depleted(RuntimeError):
    """The requested activity needs more energy than the battery holds."""


class Role(str, enum.Enum):
    CORE = "core"
    EXTENDED = "extended"
    MASTER = "master"
    CLUSTER_HEAD = "cluster-head"


@dataclass(frozen=True)
class EnergyModel:
    p_hover: float = 100.0      # W
    p_cruise: float = 20.0      # W per m/s
    e_compute: float = 0.01     # J per work unit
    e_radio: float = 1e-5       # J per byte

    def coefficient(self, activity: str) -> float:
        return {HOVER: self.p_hover, CRUISE: self.p_cruise,
                COMPUTE: self.e_compute, RADIO: self.e_radio}[activity]

    def flight_power(self, speed: float) -> float:
        return self.p_hover + self.p_cruise * speed


@dataclass
class EnergyState:
    capacity: float
    reserve: float = 0.0
    remaining: float = -1.0
    ledger: Dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if self.capacity <= 0:
            raise ValueError("battery capacity must be positive")
        if self.remaining < 0:
            self.remaining = float(self.capacity)
        for activity in ACTIVITIES:
            self.ledger.setdefault(activity, 0.0)
        if not 0 <= self.remaining <= self.capacity:
            raise ValueError("remaining energy outside [0, capacity]")

    @property
    def consumed(self) -> float:
        return math.fsum(self.ledger.values())

    def conservation_error(self) -> float:
        """Relative |capacity - remaining - sum(ledger)|."""
        return abs(self.capacity - self.remaining - self.consumed) / self.capacity

    @property
    def ratio(self) -> float:
        return self.remaining / self.capacity


@dataclass
class DroneState:
    drone_id: str
    organisation: str = "org"
    position: Vec3 = (0.0, 0.0, 0.0)
    velocity: Vec3 = (0.0, 0.0, 0.0)
    energy: EnergyState = field(default_factory=lambda: EnergyState(100_000.0))
    compute: float = 10.0
    load: float = 0.0
    health: float = 1.0
    sensors: FrozenSet[str] = frozenset()
    sensor_range: float = 50.0
    max_speed: float = 10.0
    policy: PolicySet = field(default_factory=PolicySet)
    roles: Set[Role] = field(default_factory=lambda: {Role.CORE})
    home: Vec3 = (0.0, 0.0, 0.0)

    def __post_init__(self):
        self.position = tuple(float(c) for c in self.position)
        self.home = tuple(float(c) for c in self.home)
        self.sensors = frozenset(self.sensors)
        if not 0.0 <= self.health <= 1.0:
            raise ValueError("health must be in [0, 1]")
        if self.compute < 0:
            raise ValueError("compute capacity must be >= 0")
        self.check_roles()

    def check_roles(self) -> None:
        if Role.MASTER in self.roles and Role.CLUSTER_HEAD in self.roles:
            raise ValueError(f"{self.drone_id} cannot be both master and cluster head")

    @property
    def headroom(self) -> float:
        return max(0.0, self.compute - self.load)

    @property
    def airborne(self) -> bool:
        return self.energy.remaining > 0 and self.health > 0


def consume(state: DroneState, activity: str, amount: float, dt: float = 1,
            model: EnergyModel = EnergyModel(), tick_seconds: float = 1.0) -> float:
    """Debit energy for an activity and return the Joules taken.

    Time-based classes (hover, cruise) cost ``coefficient * amount * seconds``;
    per-unit classes (compute, radio) cost ``coefficient * amount``. When the
    battery cannot cover the debit, whatever is left is drained into the
    ledger, the drone is grounded (health 0) and :class:`Depleted` is raised.
    """
    if activity not in ACTIVITIES:
        raise ValueError(f"unknown activity {activity!r}")
    if amount < 0 or dt < 0:
        raise ValueError("amount and dt must be non-negative")
    joules = model.coefficient(activity) * amount
    if activity in TIME_BASED:
        joules *= dt * tick_seconds
    energy = state.energy
    if joules > energy.remaining:
        drained = energy.remaining
        energy.ledger[activity] += drained
        energy.remaining = 0.0
        state.health = 0.0
        state.velocity = (0.0, 0.0, 0.0)
        raise Depleted(f"{state.drone_id} needs {joules:.3f} J, has {drained:.3f} J")
    energy.ledger[activity] += joules
    energy.remaining -= joules
    return joules


def step_flight(state: DroneState, waypoint: Sequence[float], dt: int = 1,
                model: EnergyModel = EnergyModel(), tick_seconds: float = 1.0) -> DroneState:
    """Move toward ``waypoint`` for ``dt`` ticks at min(max speed, required speed)."""
    if dt < 1:
        raise ValueError("dt must be >= 1")
    if not state.airborne:
        raise Depleted(f"{state.drone_id} is grounded")
    seconds = dt * tick_seconds
    target = tuple(float(c) for c in waypoint)
    gap = math.dist(state.position, target)
    speed = min(state.max_speed, gap / seconds) if gap > 0 else 0.0
    consume(state, HOVER, 1.0, dt, model, tick_seconds)
    if speed > 0:
        consume(state, CRUISE, speed, dt, model, tick_seconds)
    travel = speed * seconds
    if gap - travel <= 0.5 * state.max_speed * tick_seconds:
        new_pos = target
    else:
        f = travel / gap
        new_pos = tuple(p + f * (t - p) for p, t in zip(state.position, target))
    state.velocity = tuple((n - p) / seconds for n, p in zip(new_pos, state.position))
    state.position = new_pos
    return state


def energy_to_reach(state: DroneState, destination: Sequence[float],
                    model: EnergyModel = EnergyModel()) -> float:
    """Joules to fly to ``destination`` at max speed."""
    gap = math.dist(state.position, destination)
    if gap == 0 or state.max_speed <= 0:
        return 0.0
    return gap / state.max_speed * model.flight_power(state.max_speed)


@dataclass(frozen=True)
class PowerReport:
    drone_id: str
    tick: int
    energy_ratio: float
    headroom: float
    health: float
    severe: bool

    def payload(self) -> dict:
        return {"drone": self.drone_id, "tick": self.tick, "energy_ratio": self.energy_ratio,
                "headroom": self.headroom, "health": self.health, "severe": self.severe}


def is_severe(state: DroneState, model: EnergyModel = EnergyModel()) -> bool:
    return state.energy.remaining - state.energy.reserve < energy_to_reach(state, state.home, model)


def power_report(state: DroneState, tick: int, model: EnergyModel = EnergyModel()) -> PowerReport:
    return PowerReport(state.drone_id, tick, state.energy.ratio, state.headroom,
                       state.health, is_severe(state, model))


def report_ticks(interval: int, t_end: int, start: int = 0) -> List[int]:
    if interval < 1:
        raise ValueError("interval must be >= 1")
    return list(range(start + interval, t_end + 1, interval))


@dataclass(frozen=True)
class Obligation:
    task_id: str
    work: float
    deadline: int


@dataclass(frozen=True)
class ServiceStatus:
    ok: bool
    lagging: Tuple[str, ...] = ()


def service_level_check(state: DroneState, obligations: Iterable[Obligation],
                        now: int = 0) -> ServiceStatus:
    """Project completion of each obligation at the current headroom.

    Obligations run earliest-deadline-first; a task lags when the cumulative
    work up to and including it cannot finish by its deadline.
    """
    rate = state.headroom
    done = 0.0
    lagging = []
    for ob in sorted(obligations, key=lambda o: (o.deadline, o.task_id)):
        done += ob.work
        available = rate * max(0, ob.deadline - now)
        if done > available:
            lagging.append(ob.task_id)
    return ServiceStatus(not lagging, tuple(lagging))


@dataclass(frozen=True)
class Obstacle:
    obstacle_id: str
    position: Vec3
    radius: float
    detected_by: str = ""
    tick: int = 0

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("obstacle radius must be positive")


@dataclass(frozen=True)
class Avoidance:
    waypoint: Optional[Vec3] = None
    obstacle: Optional[Obstacle] = None
    broadcast: Optional[Obstacle] = None

    @property
    def maneuver(self) -> bool:
        return self.waypoint is not None


def _segment_distance(p: Sequence[float], a: Sequence[float], b: Sequence[float]) -> float:
    ab = [bi - ai for ai, bi in zip(a, b)]
    denom = sum(c * c for c in ab)
    t = 0.0 if denom == 0 else max(0.0, min(1.0, sum((pi - ai) * c for pi, ai, c in zip(p, a, ab)) / denom))
    return math.dist(p, [ai + t * c for ai, c in zip(a, ab)])


def _threat(position, goal, obstacle: Obstacle, margin: float) -> Optional[Tuple[float, float, tuple, tuple]]:
    """Along/cross-track geometry of an obstacle threatening the leg, or None."""
    heading = [g - p for p, g in zip(position, goal)]
    length = math.hypot(heading[0], heading[1])
    if length == 0:
        return None
    u = (heading[0] / length, heading[1] / length, 0.0)
    n = (-u[1], u[0], 0.0)
    rel = [o - p for o, p in zip(obstacle.position, position)]
    along = rel[0] * u[0] + rel[1] * u[1]
    cross = rel[0] * n[0] + rel[1] * n[1]
    clear = obstacle.radius + margin
    if along <= 0 or along - clear > length:
        return None
    if _segment_distance(obstacle.position, position, goal) >= clear:
        return None
    return along, cross, u, n


def _detour(position, obstacle: Obstacle, margin: float, along: float, cross: float, u, n) -> Vec3:
    clear = obstacle.radius + margin
    if cross != 0:
        side = -1.0 if cross > 0 else 1.0
    elif n[0] != 0:
        side = 1.0 if n[0] > 0 else -1.0
    else:
        side = 1.0 if n[1] > 0 else -1.0
    # Abeam point at lateral offset h: grow h until the leg to it clears the obstacle.
    h = cross + side * clear
    z = position[2]

    def point(offset):
        return (position[0] + along * u[0] + offset * n[0],
                position[1] + along * u[1] + offset * n[1], z)

    for _ in range(64):
        if _segment_distance(obstacle.position, position, point(h)) >= clear:
            break
        h += side * clear * 0.25
    return point(h)


def detect_and_avoid(state: DroneState, goal: Sequence[float], obstacles: Iterable[Obstacle],
                     known: Iterable[Obstacle] = (), margin: float = 5.0, tick: int = 0) -> Avoidance:
    """Avoid the nearest obstacle threatening the leg toward ``goal``.

    Obstacles seen by the drone's own sensors are broadcast; obstacles already
    reported by peers trigger the same pre-emptive maneuver without a local
    detection.
    """
    known = {o.obstacle_id: o for o in known}
    candidates = []
    for ob in obstacles:
        in_range = math.dist(state.position, ob.position) - ob.radius <= state.sensor_range
        if in_range or ob.obstacle_id in known:
            threat = _threat(state.position, goal, ob, margin)
            if threat is not None:
                candidates.append((threat[0], ob.obstacle_id, ob, threat, in_range))
    for ob in known.values():
        if ob.obstacle_id not in {c[1] for c in candidates}:
            threat = _threat(state.position, goal, ob, margin)
            if threat is not None:
                candidates.append((threat[0], ob.obstacle_id, ob, threat, False))
    if not candidates:
        return Avoidance()
    _, oid, ob, (along, cross, u, n), in_range = min(candidates, key=lambda c: (c[0], c[1]))
    waypoint = _detour(state.position, ob, margin, along, cross, u, n)
    broadcast = None
    if in_range and oid not in known:
        broadcast = Obstacle(oid, ob.position, ob.radius, state.drone_id, tick)
    return Avoidance(waypoint, ob, broadcast)


CONTINUE = "continue"
DISENGAGE = "disengage"
SACRIFICE = "sacrifice"


@dataclass(frozen=True)
class SelfPreservationOutcome:
    verdict: str
    reason: str


@dataclass(frozen=True)
class PreservationThresholds:
    disengage: float = 0.3
    sacrifice: float = 0.8


def evaluate_self_preservation(drone_id: str, health: float, severe: bool, criticality: float,
                               recommendation: str, sacrifice_set: Iterable[str] = (),
                               thresholds: PreservationThresholds = PreservationThresholds()
                               ) -> SelfPreservationOutcome:
    """Pure rule table choosing between selfish survival and altruism."""
    if recommendation == "altruistic" and drone_id in set(sacrifice_set) \
            and criticality >= thresholds.sacrifice:
        return SelfPreservationOutcome(SACRIFICE, "altruistic-assessment")
    if (health < thresholds.disengage or severe) and criticality < thresholds.sacrifice:
        return SelfPreservationOutcome(DISENGAGE, "low-health" if health < thresholds.disengage
                                       else "severe-power")
    return SelfPreservationOutcome(CONTINUE, "nominal")
