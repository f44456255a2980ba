"""Ground flight management: mission briefs, roster selection, the pre-mission
phase machine, debrief and knowledge consolidation."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, List, Mapping, Optional, Sequence, Set, Tuple

from .knowledge import KnowledgeStore, PrecedentRecord
from .membership import Election, Topology
from .policy import PolicySet
from .swarm import KnowledgeShards, Objective, Principle


class PhaseError(RuntimeError):
    pass


class MissionPhase(enum.IntEnum):
    DRAFT = 0
    BRIEF_GENERATED = 1
    ROSTER_SELECTED = 2
    BRIEF_UPLOADED = 3
    CHANNELS_ESTABLISHED = 4
    COMMENCED = 5
    RETURNED = 6
    DEBRIEFED = 7
    CONSOLIDATED = 8


@dataclass
class MissionBrief:
    mission_id: str
    objectives: List[Objective]
    per_drone_objectives: Dict[str, List[str]] = field(default_factory=dict)
    airspace: PolicySet = field(default_factory=PolicySet)
    principles: List[Principle] = field(default_factory=list)
    security: PolicySet = field(default_factory=PolicySet)
    commitments: Tuple[str, ...] = ()
    baseline: Dict[str, object] = field(default_factory=dict)
    knowledge: List[PrecedentRecord] = field(default_factory=list)

    def validate(self, vocabulary: Optional[Iterable[str]] = None) -> None:
        vocab = set(vocabulary) if vocabulary is not None else None
        for obj in self.objectives:
            if not 0.0 <= obj.criticality <= 1.0:
                raise ValueError(f"objective {obj.objective_id}: criticality outside [0, 1]")
            if vocab is not None and obj.capability not in vocab:
                raise ValueError(f"objective {obj.objective_id}: unknown capability {obj.capability!r}")

    def requirements(self) -> Dict[str, float]:
        req: Dict[str, float] = {}
        for obj in self.objectives:
            req[obj.capability] = req.get(obj.capability, 0.0) + obj.capacity
        return req

    @property
    def criticality(self) -> float:
        return max((o.criticality for o in self.objectives), default=0.0)


@dataclass(frozen=True)
class InventoryItem:
    drone_id: str
    capabilities: frozenset
    compute: float
    available: bool = True


class Inventory:
    """Drones on the ground; each drone serves at most one active mission."""

    def __init__(self, items: Iterable[InventoryItem] = ()):
        self.items: Dict[str, InventoryItem] = {i.drone_id: i for i in items}
        self.assigned: Dict[str, str] = {}

    def available(self) -> List[InventoryItem]:
        return [i for _, i in sorted(self.items.items())
                if i.available and i.drone_id not in self.assigned]

    def reserve(self, mission_id: str, roster: Iterable[str]) -> None:
        roster = list(roster)
        busy = [d for d in roster if d in self.assigned]
        if busy:
            raise PhaseError(f"drones already on a mission: {busy}")
        for d in roster:
            self.assigned[d] = mission_id

    def release(self, mission_id: str) -> None:
        self.assigned = {d: m for d, m in self.assigned.items() if m != mission_id}


@dataclass(frozen=True)
class Selection:
    roster: Tuple[str, ...]
    feasible: bool
    uncovered: Tuple[str, ...] = ()


def select_drones(requirements: Mapping[str, float], inventory: Iterable[InventoryItem],
                  preferences: Sequence[str] = ()) -> Selection:
    """Greedy set cover of required capability capacity.

    Each drone supplies its compute capacity to every capability it carries.
    The drone covering the most still-uncovered capacity is picked next; ties
    go to the earlier preference, then the lowest id.
    """
    need = {c: float(v) for c, v in requirements.items() if v > 0}
    rank = {d: i for i, d in enumerate(preferences)}
    pool = [i for i in inventory if i.available]
    roster: List[str] = []

    def gain(item: InventoryItem) -> float:
        return sum(min(need[c], item.compute) for c in item.capabilities if c in need)

    while need:
        scored = [(gain(i), i) for i in pool if i.drone_id not in roster]
        scored = [(g, i) for g, i in scored if g > 0]
        if not scored:
            return Selection(tuple(roster), False, tuple(sorted(need)))
        _, best = min(scored, key=lambda gi: (-gi[0], rank.get(gi[1].drone_id, len(rank)),
                                              gi[1].drone_id))
        roster.append(best.drone_id)
        for c in best.capabilities:
            if c in need:
                need[c] -= min(need[c], best.compute)
                if need[c] <= 1e-12:
                    del need[c]
    return Selection(tuple(roster), True)


@dataclass(frozen=True)
class UploadResult:
    acks: Tuple[str, ...]
    dropped: Tuple[str, ...]


def upload_brief(roster: Iterable[str], reachable: Callable[[str], bool],
                 retries: int = 2) -> UploadResult:
    """Push the brief to every roster drone; drones that never ACK are dropped."""
    acks, dropped = [], []
    for drone in roster:
        if any(reachable(drone) for _ in range(retries + 1)):
            acks.append(drone)
        else:
            dropped.append(drone)
    return UploadResult(tuple(acks), tuple(dropped))


def required_sessions(topology: Topology, roster: Iterable[str],
                      election: Election) -> Optional[Set[Tuple[str, str]]]:
    """Session pairs a topology needs before take-off; None means 'any connected graph'."""
    roster = sorted(roster)
    pair = lambda a, b: (a, b) if a <= b else (b, a)
    topology = Topology(topology)
    if topology is Topology.CENTRALISED:
        master = election.master or roster[0]
        return {pair(master, d) for d in roster if d != master}
    if topology is Topology.DECENTRALISED:
        heads = list(election.heads) or roster[:1]
        out = {pair(a, b) for i, a in enumerate(heads) for b in heads[i + 1:]}
        for d in roster:
            head = election.attachment.get(d, heads[0])
            if d != head:
                out.add(pair(d, head))
        return out
    return None


def _connected(nodes: Iterable[str], pairs: Iterable[Tuple[str, str]]) -> bool:
    nodes = set(nodes)
    if len(nodes) <= 1:
        return True
    adj: Dict[str, Set[str]] = {n: set() for n in nodes}
    for a, b in pairs:
        if a in adj and b in adj:
            adj[a].add(b)
            adj[b].add(a)
    start = min(nodes)
    seen, stack = {start}, [start]
    while stack:
        for v in adj[stack.pop()]:
            if v not in seen:
                seen.add(v)
                stack.append(v)
    return seen == nodes


@dataclass(frozen=True)
class CommenceResult:
    commenced: bool
    reason: str = ""


class MissionLifecycle:
    """Pre- and post-mission phase machine; phases only move forward one step at a time."""

    def __init__(self, mission_id: str, topology: Topology = Topology.DISTRIBUTED):
        self.mission_id = mission_id
        self.topology = Topology(topology)
        self.phase = MissionPhase.DRAFT
        self.roster: Tuple[str, ...] = ()
        self.election = Election()
        self.acks: Set[str] = set()
        self.sessions: Set[Tuple[str, str]] = set()
        self.permission = False
        self.history: List[Tuple[MissionPhase, frozenset, bool]] = []

    def _advance(self, to: MissionPhase) -> None:
        if to != self.phase + 1:
            raise PhaseError(f"cannot go from {self.phase.name} to {to.name}")
        self.phase = to
        self.history.append((to, frozenset(self.acks), self.permission))

    def generate_brief(self) -> None:
        self._advance(MissionPhase.BRIEF_GENERATED)

    def select_roster(self, roster: Iterable[str], election: Optional[Election] = None) -> None:
        self.roster = tuple(sorted(roster))
        if not self.roster:
            raise PhaseError("empty roster")
        self.election = election or Election()
        self._advance(MissionPhase.ROSTER_SELECTED)

    def drop(self, drone: str) -> None:
        if self.phase >= MissionPhase.COMMENCED:
            raise PhaseError("roster is fixed once the mission commenced")
        self.roster = tuple(d for d in self.roster if d != drone)
        self.acks.discard(drone)
        self._progress()

    def ack(self, drone: str) -> None:
        if drone in self.roster:
            self.acks.add(drone)
        self._progress()

    def session(self, a: str, b: str) -> None:
        self.sessions.add((a, b) if a <= b else (b, a))
        self._progress()

    def grant_permission(self) -> None:
        self.permission = True

    def channels_ready(self) -> bool:
        needed = required_sessions(self.topology, self.roster, self.election)
        if needed is None:
            return _connected(self.roster, self.sessions)
        return needed <= self.sessions

    def _progress(self) -> None:
        if self.phase == MissionPhase.ROSTER_SELECTED and self.roster and \
                set(self.roster) <= self.acks:
            self._advance(MissionPhase.BRIEF_UPLOADED)
        if self.phase == MissionPhase.BRIEF_UPLOADED and self.channels_ready():
            self._advance(MissionPhase.CHANNELS_ESTABLISHED)

    def commence(self) -> CommenceResult:
        if self.phase == MissionPhase.COMMENCED:
            return CommenceResult(True)
        if self.phase < MissionPhase.BRIEF_UPLOADED:
            return CommenceResult(False, "BriefNotUploaded")
        if self.phase == MissionPhase.BRIEF_UPLOADED:
            return CommenceResult(False, "ChannelsIncomplete")
        if self.phase != MissionPhase.CHANNELS_ESTABLISHED:
            return CommenceResult(False, "WrongPhase")
        if not self.permission:
            return CommenceResult(False, "NoPermission")
        self._advance(MissionPhase.COMMENCED)
        return CommenceResult(True)

    def returned(self) -> None:
        self._advance(MissionPhase.RETURNED)

    def debriefed(self) -> None:
        self._advance(MissionPhase.DEBRIEFED)

    def consolidated(self) -> None:
        self._advance(MissionPhase.CONSOLIDATED)


@dataclass
class MissionReport:
    mission_id: str
    precedents: List[PrecedentRecord]
    missing_logs: List[str]
    completion: float


def outcome_score(decision_tick: int, completions: Mapping[str, Optional[int]]) -> float:
    """Fraction of fleet objectives completed at or after the decision tick."""
    if not completions:
        return 0.0
    done = sum(1 for t in completions.values() if t is not None and t >= decision_tick)
    return done / len(completions)


def debrief(mission_id: str, roster: Iterable[str], returned: Iterable[str],
            shards: KnowledgeShards, completions: Mapping[str, Optional[int]]) -> MissionReport:
    """Merge returned drones' shards and score this mission's decisions.

    Drones that did not come back have no log; their records survive only
    through replicas held by drones that did.
    """
    roster, returned = sorted(set(roster)), set(returned)
    missing = [d for d in roster if d not in returned]
    best: Dict[Tuple[str, str, str], PrecedentRecord] = {}
    for rec in shards.merged(returned):
        if rec.mission != mission_id:
            continue
        scored = PrecedentRecord(rec.signature, rec.decision, outcome_score(rec.tick, completions),
                                 rec.mission, rec.tick)
        kept = best.get(scored.key)
        if kept is None or (scored.outcome, -scored.tick) > (kept.outcome, -kept.tick):
            best[scored.key] = scored
    completion = (sum(1 for t in completions.values() if t is not None) / len(completions)
                  if completions else 0.0)
    precedents = sorted(best.values(), key=lambda r: (r.tick, r.key))
    return MissionReport(mission_id, precedents, missing, completion)


def consolidate_knowledge(report: MissionReport, store: KnowledgeStore) -> int:
    return store.append(report.precedents)
