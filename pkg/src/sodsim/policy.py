"""Policy sets: numeric interval rules plus allowed/forbidden geofence regions.

Interval rules are keyed by name (``altitude`` constrains the z coordinate of
any position; other keys constrain the same-named numeric parameter of an
action). Allowed regions form a union a position must lie in; forbidden
regions form a union it must stay out of. Geometry is delegated to shapely.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

from shapely.geometry import LineString, Point, Polygon
from shapely.geometry.base import BaseGeometry
from shapely.ops import unary_union

Interval = Tuple[float, float]

ALTITUDE = "altitude"
GEOFENCE = "geofence"

# Action kinds a drone knows how to check; anything else is escalated.
ACTION_KINDS = frozenset({"move", "hover", "sense", "transmit", "compute", "land"})


def _region(polygons: Iterable[Sequence[Sequence[float]]]) -> Optional[BaseGeometry]:
    shapes = [Polygon([(float(x), float(y)) for x, y, *_ in poly]) for poly in polygons]
    for shape in shapes:
        if not shape.is_valid or shape.area <= 0:
            raise ValueError("geofence polygons must be simple with positive area")
    return unary_union(shapes) if shapes else None


def _same_geometry(a: Optional[BaseGeometry], b: Optional[BaseGeometry]) -> bool:
    if a is None or b is None:
        return a is b
    return a.equals(b)


@dataclass(eq=False)
class PolicySet:
    intervals: Dict[str, Interval] = field(default_factory=dict)
    allowed: Optional[BaseGeometry] = None
    forbidden: Optional[BaseGeometry] = None

    def __post_init__(self):
        for key, (lo, hi) in self.intervals.items():
            if lo > hi:
                raise ValueError(f"interval {key!r} is empty: [{lo}, {hi}]")
        self.intervals = {k: (float(lo), float(hi)) for k, (lo, hi) in self.intervals.items()}

    @classmethod
    def build(cls, intervals: Optional[Dict[str, Sequence[float]]] = None,
              allowed: Iterable = (), forbidden: Iterable = ()) -> "PolicySet":
        return cls({k: tuple(v) for k, v in (intervals or {}).items()},
                   _region(allowed), _region(forbidden))

    def __eq__(self, other):
        if not isinstance(other, PolicySet):
            return NotImplemented
        return (self.intervals == other.intervals
                and _same_geometry(self.allowed, other.allowed)
                and _same_geometry(self.forbidden, other.forbidden))

    @property
    def empty(self) -> bool:
        return not self.intervals and self.allowed is None and self.forbidden is None

    def point_violations(self, position: Sequence[float]) -> List[str]:
        """Rule ids violated by standing at ``position``."""
        out = []
        if ALTITUDE in self.intervals:
            lo, hi = self.intervals[ALTITUDE]
            if not lo <= position[2] <= hi:
                out.append(ALTITUDE)
        pt = Point(position[0], position[1])
        if (self.allowed is not None and not self.allowed.covers(pt)) or \
                (self.forbidden is not None and self.forbidden.covers(pt)):
            out.append(GEOFENCE)
        return out

    def leg_violations(self, a: Sequence[float], b: Sequence[float]) -> List[str]:
        """Rule ids violated anywhere along the straight leg ``a -> b``."""
        out = []
        if ALTITUDE in self.intervals:
            lo, hi = self.intervals[ALTITUDE]
            if not (lo <= a[2] <= hi and lo <= b[2] <= hi):
                out.append(ALTITUDE)
        if (a[0], a[1]) == (b[0], b[1]):
            seg = Point(a[0], a[1])
        else:
            seg = LineString([(a[0], a[1]), (b[0], b[1])])
        if (self.allowed is not None and not self.allowed.covers(seg)) or \
                (self.forbidden is not None and self.forbidden.intersects(seg)):
            out.append(GEOFENCE)
        return out

    def param_violations(self, params: Dict[str, float]) -> List[str]:
        out = []
        for key, value in sorted(params.items()):
            if key in self.intervals and key != ALTITUDE:
                lo, hi = self.intervals[key]
                if not lo <= value <= hi:
                    out.append(key)
        return out


@dataclass(frozen=True)
class Violation:
    rule: str
    where: str  # "waypoint 3" or "leg 2-3"


def check_airspace(waypoints: Sequence[Sequence[float]], airspace: PolicySet) -> List[Violation]:
    """Every violation along a route; an empty list means compliant.

    A leg is only reported for rules its endpoints do not already break, so a
    single bad waypoint yields one violation rather than three.
    """
    out = []
    at_point = [airspace.point_violations(wp) for wp in waypoints]
    for i, rules in enumerate(at_point):
        out.extend(Violation(rule, f"waypoint {i}") for rule in rules)
    for i in range(len(waypoints) - 1):
        seen = set(at_point[i]) | set(at_point[i + 1])
        out.extend(Violation(rule, f"leg {i}-{i + 1}")
                   for rule in airspace.leg_violations(waypoints[i], waypoints[i + 1])
                   if rule not in seen)
    return out


@dataclass
class Harmonisation:
    compatible: bool
    merged: Optional[PolicySet] = None
    conflicts: List[str] = field(default_factory=list)


def harmonise_policy(candidate: PolicySet, baseline: PolicySet) -> Harmonisation:
    """Merge two policy sets into the most restrictive common set.

    Shared interval keys intersect, allowed regions intersect and forbidden
    regions union. An empty interval or allowed-region intersection is a
    conflict.
    """
    conflicts = []
    merged: Dict[str, Interval] = {}
    for key in sorted(set(candidate.intervals) | set(baseline.intervals)):
        if key in candidate.intervals and key in baseline.intervals:
            lo = max(candidate.intervals[key][0], baseline.intervals[key][0])
            hi = min(candidate.intervals[key][1], baseline.intervals[key][1])
            if lo > hi:
                conflicts.append(key)
            else:
                merged[key] = (lo, hi)
        else:
            merged[key] = candidate.intervals.get(key) or baseline.intervals[key]

    if candidate.allowed is None or baseline.allowed is None:
        allowed = candidate.allowed if baseline.allowed is None else baseline.allowed
    elif candidate.allowed.equals(baseline.allowed):
        allowed = baseline.allowed
    else:
        allowed = candidate.allowed.intersection(baseline.allowed)
        if allowed.area <= 0:
            conflicts.append(GEOFENCE)

    if candidate.forbidden is None or baseline.forbidden is None:
        forbidden = candidate.forbidden if baseline.forbidden is None else baseline.forbidden
    elif candidate.forbidden.equals(baseline.forbidden):
        forbidden = baseline.forbidden
    else:
        forbidden = unary_union([candidate.forbidden, baseline.forbidden])

    if conflicts:
        return Harmonisation(False, None, conflicts)
    return Harmonisation(True, PolicySet(merged, allowed, forbidden), [])


@dataclass(frozen=True)
class Action:
    kind: str
    position: Optional[Tuple[float, float, float]] = None
    params: Tuple[Tuple[str, float], ...] = ()


@dataclass(frozen=True)
class PolicyVerdict:
    verdict: str  # "allowed" | "violation" | "escalate"
    rule: Optional[str] = None

    @property
    def allowed(self) -> bool:
        return self.verdict == "allowed"


def local_policy_check(policy: PolicySet, action: Action) -> PolicyVerdict:
    """Check one action against a drone's loaded policy.

    Unknown action kinds are never silently allowed: they come back as
    ``escalate`` so the swarm can take a collaborative decision.
    """
    if action.kind not in ACTION_KINDS:
        return PolicyVerdict("escalate")
    if action.position is not None:
        rules = policy.point_violations(action.position)
        if rules:
            return PolicyVerdict("violation", rules[0])
    rules = policy.param_violations(dict(action.params))
    if rules:
        return PolicyVerdict("violation", rules[0])
    return PolicyVerdict("allowed")
