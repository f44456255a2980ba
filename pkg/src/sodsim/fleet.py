"""Fleet-level operations: route planning, congestion, secure channels, trust, load balancing."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Set, Tuple

from .drone import EnergyModel
from .policy import PolicySet, check_airspace, harmonise_policy
from .radio import NetMessage, Network

Vec3 = Tuple[float, float, float]


class NoCompliantRoute(RuntimeError):
    pass


class HandshakeFailed(RuntimeError):
    pass


class Unreachable(RuntimeError):
    pass


class TrustDenied(RuntimeError):
    pass


class InfeasibleTask(RuntimeError):
    pass


@dataclass
class Route:
    waypoints: List[Vec3]
    speed: float = 10.0
    energy: float = 0.0

    def __post_init__(self):
        if not self.waypoints:
            raise ValueError("a route needs at least one waypoint")
        self.waypoints = [tuple(float(c) for c in wp) for wp in self.waypoints]

    @property
    def length(self) -> float:
        return path_length(self.waypoints)

    def leg_times(self, start_tick: float = 0.0) -> List[Tuple[float, float]]:
        out, t = [], float(start_tick)
        for a, b in zip(self.waypoints, self.waypoints[1:]):
            dt = math.dist(a, b) / self.speed
            out.append((t, t + dt))
            t += dt
        return out


def path_length(points: Sequence[Sequence[float]]) -> float:
    return math.fsum(math.dist(a, b) for a, b in zip(points, points[1:]))


def _nearest_neighbor_order(start: Vec3, areas: List[Vec3], first: int) -> List[Vec3]:
    remaining = list(areas)
    order = [remaining.pop(first)]
    while remaining:
        here = order[-1]
        nxt = min(range(len(remaining)), key=lambda i: (math.dist(here, remaining[i]), remaining[i]))
        order.append(remaining.pop(nxt))
    return order


def plan_route(start: Sequence[float], areas: Iterable[Sequence[float]], airspace: PolicySet,
               speed: float = 10.0, model: EnergyModel = EnergyModel()) -> Route:
    """Nearest-neighbour tour over the areas of interest, filtered for compliance.

    One candidate is built per choice of first area; the shortest compliant
    candidate wins, ties broken by lexicographic waypoint order.
    """
    start = tuple(float(c) for c in start)
    areas = sorted(tuple(float(c) for c in a) for a in areas)
    if not areas:
        raise ValueError("need at least one area of interest")
    candidates = []
    for first in range(len(areas)):
        waypoints = [start] + _nearest_neighbor_order(start, areas, first)
        if not check_airspace(waypoints, airspace):
            candidates.append((path_length(waypoints), waypoints))
    if not candidates:
        raise NoCompliantRoute("every candidate route violates the airspace")
    length, best = min(candidates)
    energy = length / speed * model.flight_power(speed) if speed > 0 else 0.0
    return Route(best, speed, energy)


@dataclass(frozen=True)
class TimedWaypoint:
    position: Vec3
    tick: float


def segment_distance(p1, q1, p2, q2) -> float:
    """Minimum distance between 3D segments p1-q1 and p2-q2."""
    d1 = [b - a for a, b in zip(p1, q1)]
    d2 = [b - a for a, b in zip(p2, q2)]
    r = [a - b for a, b in zip(p1, p2)]
    dot = lambda u, v: sum(x * y for x, y in zip(u, v))
    a, e, f = dot(d1, d1), dot(d2, d2), dot(d2, r)
    eps = 1e-12
    if a <= eps and e <= eps:
        return math.dist(p1, p2)
    if a <= eps:
        s, t = 0.0, min(1.0, max(0.0, f / e))
    else:
        c = dot(d1, r)
        if e <= eps:
            t, s = 0.0, min(1.0, max(0.0, -c / a))
        else:
            b = dot(d1, d2)
            denom = a * e - b * b
            s = min(1.0, max(0.0, (b * f - c * e) / denom)) if denom > eps else 0.0
            t = (b * s + f) / e
            if t < 0.0:
                t, s = 0.0, min(1.0, max(0.0, -c / a))
            elif t > 1.0:
                t, s = 1.0, min(1.0, max(0.0, (b - c) / a))
    c1 = [x + s * d for x, d in zip(p1, d1)]
    c2 = [x + t * d for x, d in zip(p2, d2)]
    return math.dist(c1, c2)


@dataclass
class CongestionReport:
    counts: List[int]
    flagged: List[int] = field(default_factory=list)

    @property
    def replan(self) -> bool:
        return bool(self.flagged)


def detect_congestion(feed: Iterable[Sequence[TimedWaypoint]], route: Route, threshold: int = 3,
                      d_congest: float = 200.0, start_tick: float = 0.0) -> CongestionReport:
    """Count foreign routes passing near each leg during overlapping time windows.

    A leg is flagged when its count exceeds ``threshold``.
    """
    feed = [list(r) for r in feed]
    windows = route.leg_times(start_tick)
    counts = []
    for i, (a, b) in enumerate(zip(route.waypoints, route.waypoints[1:])):
        t0, t1 = windows[i]
        n = 0
        for foreign in feed:
            for u, v in zip(foreign, foreign[1:]):
                if u.tick <= t1 and t0 <= v.tick and \
                        segment_distance(a, b, u.position, v.position) <= d_congest:
                    n += 1
                    break
        counts.append(n)
    return CongestionReport(counts, [i for i, n in enumerate(counts) if n > threshold])


TRUSTED = "trusted"
CONDITIONAL = "conditional"
UNTRUSTED = "untrusted"
_TRUST_RANK = {UNTRUSTED: 0, CONDITIONAL: 1, TRUSTED: 2}


@dataclass(frozen=True)
class Attestation:
    drone_id: str
    valid_until: int
    revoked: bool = False

    def valid(self, tick: int) -> bool:
        return not self.revoked and tick <= self.valid_until


@dataclass(frozen=True)
class TrustVerdict:
    subject: str
    level: str
    token_valid: bool
    same_org: bool
    compatible: bool

    def at_least(self, level: str) -> bool:
        return _TRUST_RANK[self.level] >= _TRUST_RANK[level]


def verify_trust(subject: str, organisation: str, policy: PolicySet, swarm_org: str,
                 baseline: PolicySet, attestations: Mapping[str, Attestation],
                 tick: int = 0) -> TrustVerdict:
    token = attestations.get(subject)
    token_valid = token is not None and token.valid(tick)
    same_org = organisation == swarm_org
    compatible = harmonise_policy(policy, baseline).compatible
    if token_valid and compatible:
        level = TRUSTED if same_org else CONDITIONAL
    else:
        level = UNTRUSTED
    return TrustVerdict(subject, level, token_valid, same_org, compatible)


ACTIVE = "active"
COMPROMISED = "compromised"
CLOSED = "closed"

HANDSHAKE_MESSAGES = 3
HANDSHAKE_RETRIES = 3
HANDSHAKE_BYTES = 256


@dataclass
class SecureSession:
    session_id: str
    endpoints: Tuple[str, str]
    key_id: str
    established: int
    state: str = ACTIVE


class SessionTable:
    """Simulated secure channels; at most one Active session per endpoint pair."""

    def __init__(self):
        self.sessions: Dict[str, SecureSession] = {}
        self._counter = itertools.count(1)
        self.messages_sent = 0

    @staticmethod
    def pair(a: str, b: str) -> Tuple[str, str]:
        return (a, b) if a <= b else (b, a)

    def active(self, a: str, b: str) -> Optional[SecureSession]:
        key = self.pair(a, b)
        for s in self.sessions.values():
            if s.endpoints == key and s.state == ACTIVE:
                return s
        return None

    def active_pairs(self) -> Set[Tuple[str, str]]:
        return {s.endpoints for s in self.sessions.values() if s.state == ACTIVE}

    def establish(self, a: str, b: str, network: Network, tick: int, rng,
                  trust_a: Optional[TrustVerdict] = None, trust_b: Optional[TrustVerdict] = None,
                  retries: int = HANDSHAKE_RETRIES) -> SecureSession:
        """Run the 3-message handshake, retrying after any lost message."""
        for verdict in (trust_a, trust_b):
            if verdict is not None and not verdict.at_least(CONDITIONAL):
                raise TrustDenied(f"{verdict.subject} is {verdict.level}")
        existing = self.active(a, b)
        if existing is not None:
            return existing
        if network.route(a, b, tick) is None:
            raise Unreachable(f"no path {a} -> {b}")
        for _ in range(retries + 1):
            ok = True
            for i in range(HANDSHAKE_MESSAGES):
                src, dst = (a, b) if i % 2 == 0 else (b, a)
                self.messages_sent += 1
                outcome = network.deliver(NetMessage(src, dst, "handshake", HANDSHAKE_BYTES), tick, rng)
                if not outcome.delivered:
                    ok = False
                    break
            if ok:
                sid = f"s{next(self._counter)}"
                session = SecureSession(sid, self.pair(a, b), rng.token() if rng else sid, tick)
                self.sessions[sid] = session
                return session
        raise HandshakeFailed(f"handshake {a} <-> {b} failed after {retries} retries")

    def compromise(self, node: str) -> List[str]:
        hit = []
        for s in self.sessions.values():
            if node in s.endpoints and s.state != CLOSED:
                s.state = COMPROMISED
                hit.append(s.session_id)
        return hit

    def close(self, node: str) -> List[str]:
        hit = []
        for s in self.sessions.values():
            if node in s.endpoints and s.state == ACTIVE:
                s.state = CLOSED
                hit.append(s.session_id)
        return hit


def handshake_success_probability(p_loss: float, hops: int = 1,
                                  retries: int = HANDSHAKE_RETRIES) -> float:
    per_attempt = (1.0 - p_loss) ** (HANDSHAKE_MESSAGES * hops)
    return 1.0 - (1.0 - per_attempt) ** (retries + 1)


@dataclass(frozen=True)
class Task:
    task_id: str
    work: float
    capability: str = ""


@dataclass
class FleetMember:
    """What the load balancer needs to know about one drone."""
    drone_id: str
    compute: float
    capabilities: frozenset = frozenset()
    healthy: bool = True
    severe: bool = False
    trusted: bool = True
    free_rider: bool = False
    spare_energy: float = math.inf  # Joules above reserve


def balance_load(tasks: Iterable[Task], fleet: Iterable[FleetMember],
                 model: EnergyModel = EnergyModel(), strict: bool = True) -> Dict[str, str]:
    """Longest-processing-time-first greedy assignment.

    Each task goes to the eligible drone with the most remaining normalised
    headroom (lowest projected finish time), ties to the lowest drone id.
    SEVERE, unhealthy and untrusted drones are never used; free riders only
    when nobody else can take the task; drones whose spare energy cannot pay
    for the extra compute are skipped. With ``strict=False`` a task nobody can
    take is left out of the map instead of raising :class:`InfeasibleTask`.
    """
    fleet = sorted(fleet, key=lambda m: m.drone_id)
    load = {m.drone_id: 0.0 for m in fleet}
    out: Dict[str, str] = {}
    for task in sorted(tasks, key=lambda t: (-t.work, t.task_id)):
        capable = [m for m in fleet if m.healthy and not m.severe and m.trusted and m.compute > 0
                   and (not task.capability or task.capability in m.capabilities)]
        if not capable:
            if not strict:
                continue
            raise InfeasibleTask(f"no eligible drone for task {task.task_id}")
        feasible = [m for m in capable
                    if (load[m.drone_id] + task.work) * model.e_compute <= m.spare_energy]
        pool = [m for m in feasible if not m.free_rider] or feasible
        if not pool:
            if not strict:
                continue
            raise InfeasibleTask(f"no drone has energy for task {task.task_id}")
        best = min(pool, key=lambda m: (load[m.drone_id] / m.compute, m.drone_id))
        load[best.drone_id] += task.work
        out[task.task_id] = best.drone_id
    return out


def makespan(assignment: Mapping[str, str], tasks: Iterable[Task],
             compute: Mapping[str, float]) -> float:
    work = {t.task_id: t.work for t in tasks}
    per_drone: Dict[str, float] = {}
    for task_id, drone in assignment.items():
        per_drone[drone] = per_drone.get(drone, 0.0) + work[task_id]
    return max((w / compute[d] for d, w in per_drone.items()), default=0.0)
