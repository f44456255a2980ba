"""Swarm-level services: contribution accounting, mission assessment, ethics,
precedent-based evaluation and decision, and replicated collaborative learning."""

from __future__ import annotations

import hashlib
import itertools
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, List, Mapping, Optional, Sequence, Set, Tuple

from .fleet import FleetMember
from .knowledge import KnowledgeBase, PrecedentRecord, make_signature, signature_digest


class NoViableOption(RuntimeError):
    """Every candidate option was vetoed by the ethical principles."""


# -- contributions -----------------------------------------------------------

@dataclass(frozen=True)
class ContributionReport:
    drone_id: str
    assigned: float
    delivered: float


@dataclass
class ContributionLedger:
    window: int = 100
    tau: float = 0.5
    assigned: Dict[str, float] = field(default_factory=dict)
    delivered: Dict[str, float] = field(default_factory=dict)
    counters: Dict[str, int] = field(default_factory=dict)
    history: List[Dict[str, float]] = field(default_factory=list)

    def __post_init__(self):
        if not 0.0 < self.tau <= 1.0:
            raise ValueError("tau must be in (0, 1]")
        if self.window < 1:
            raise ValueError("window must be >= 1")

    def register(self, drone_id: str) -> None:
        self.assigned.setdefault(drone_id, 0.0)
        self.delivered.setdefault(drone_id, 0.0)
        self.counters.setdefault(drone_id, 0)

    def remove(self, drone_id: str) -> None:
        for table in (self.assigned, self.delivered, self.counters):
            table.pop(drone_id, None)

    def record(self, report: ContributionReport) -> None:
        if report.assigned < 0 or report.delivered < 0:
            raise ValueError("contributions are non-negative")
        if report.delivered > report.assigned:
            raise ValueError(f"{report.drone_id} delivered more than assigned")
        self.register(report.drone_id)
        self.assigned[report.drone_id] += report.assigned
        self.delivered[report.drone_id] += report.delivered

    def close_window(self) -> Dict[str, float]:
        ratios = {}
        for drone in sorted(self.counters):
            a, d = self.assigned[drone], self.delivered[drone]
            r = 1.0 if a == 0 else d / a
            ratios[drone] = r
            self.counters[drone] = self.counters[drone] + 1 if r < self.tau else 0
            self.assigned[drone] = self.delivered[drone] = 0.0
        self.history.append(ratios)
        return ratios

    @property
    def windows_closed(self) -> int:
        return len(self.history)


def update_contributions(ledger: ContributionLedger, reports: Iterable[ContributionReport],
                         close: bool = False) -> ContributionLedger:
    for report in reports:
        ledger.record(report)
    if close:
        ledger.close_window()
    return ledger


def detect_free_riders(ledger: ContributionLedger, min_windows: int = 3) -> Set[str]:
    if min_windows < 1:
        raise ValueError("min_windows must be >= 1")
    return {d for d, n in ledger.counters.items() if n >= min_windows}


# -- mission assessment ------------------------------------------------------

@dataclass(frozen=True)
class Objective:
    objective_id: str
    capability: str
    capacity: float = 1.0          # work units per tick needed
    work: float = 100.0            # total work units
    area: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    criticality: float = 0.5
    deadline: int = 0              # 0 = none

    def __post_init__(self):
        if not 0.0 <= self.criticality <= 1.0:
            raise ValueError("criticality must be in [0, 1]")


CONTINUE = "continue"
ABORT = "abort"
ALTRUISTIC = "altruistic"


@dataclass(frozen=True)
class MissionAssessment:
    probability: float
    recommendation: str
    sacrifice: Tuple[str, ...] = ()

    def __post_init__(self):
        if self.recommendation == ALTRUISTIC and not self.sacrifice:
            raise ValueError("an altruistic recommendation needs a sacrifice set")


def success_probability(fleet: Iterable[FleetMember], objectives: Iterable[Objective],
                        sacrificed: Iterable[str] = ()) -> float:
    """Product over objectives of min(1, available / required capacity).

    Available capacity counts healthy, non-SEVERE drones holding the
    objective's capability; drones in ``sacrificed`` count even when SEVERE,
    because they spend their reserve on the mission.
    """
    sacrificed = set(sacrificed)
    fleet = list(fleet)
    p = 1.0
    for obj in objectives:
        if obj.capacity <= 0:
            continue
        available = math.fsum(m.compute for m in fleet
                              if m.healthy and obj.capability in m.capabilities
                              and (not m.severe or m.drone_id in sacrificed))
        p *= min(1.0, available / obj.capacity)
    return p


def assess_mission(fleet: Iterable[FleetMember], objectives: Sequence[Objective],
                   threshold: float = 0.6) -> MissionAssessment:
    """Continue, abort, or sacrifice the smallest set of drones that rescues the mission.

    Only SEVERE-but-healthy drones holding a capability of an under-served
    objective can change the probability when sacrificed, so the search runs
    over those in increasing subset size and lexicographic order.
    """
    if not objectives:
        raise ValueError("assessment needs at least one objective")
    fleet = sorted(fleet, key=lambda m: m.drone_id)
    p = success_probability(fleet, objectives)
    if p >= threshold:
        return MissionAssessment(p, CONTINUE)
    short = {o.capability for o in objectives if o.capacity > 0 and
             success_probability(fleet, [o]) < 1.0}
    candidates = [m.drone_id for m in fleet
                  if m.healthy and m.severe and m.capabilities & short]
    for size in range(1, len(candidates) + 1):
        for subset in itertools.combinations(candidates, size):
            if success_probability(fleet, objectives, subset) >= threshold:
                return MissionAssessment(p, ALTRUISTIC, subset)
    return MissionAssessment(p, ABORT)


# -- ethics ------------------------------------------------------------------

@dataclass(frozen=True)
class Option:
    option_id: str
    action: str = ""
    sacrifice: Tuple[str, ...] = ()


@dataclass(frozen=True)
class Principle:
    rule_id: str
    kind: str            # "max_sacrifice" | "forbid_action"
    value: object = None


@dataclass(frozen=True)
class EthicsVerdict:
    passed: bool
    rule: Optional[str] = None


def check_ethics(option: Option, principles: Iterable[Principle]) -> EthicsVerdict:
    for p in principles:
        if p.kind == "max_sacrifice" and len(option.sacrifice) > int(p.value):
            return EthicsVerdict(False, p.rule_id)
        if p.kind == "forbid_action" and option.action == p.value:
            return EthicsVerdict(False, p.rule_id)
    return EthicsVerdict(True)


# -- evaluation and decision -------------------------------------------------

def jaccard(a: Iterable[str], b: Iterable[str]) -> float:
    a, b = set(a), set(b)
    union = a | b
    return len(a & b) / len(union) if union else 1.0


def evaluate_situation(signature: Iterable[str], kb: KnowledgeBase,
                       sigma: float = 0.8) -> Optional[PrecedentRecord]:
    """Best precedent for a situation, or None when it is novel.

    Exact signature matches win over similar ones. Among the considered
    records the highest outcome score wins, then the most recent mission,
    then the lowest tick.
    """
    signature = frozenset(signature)
    exact = [r for r in kb if r.signature == signature]
    pool = exact or [r for r in kb if jaccard(signature, r.signature) >= sigma]
    if not pool:
        return None
    return min(pool, key=lambda r: (-r.outcome, -kb.mission_rank(r.mission), r.tick))


@dataclass(frozen=True)
class Decision:
    option: str
    path: str                       # "precedent" | "vote" | "default"
    record: PrecedentRecord
    ballots: Tuple[Tuple[str, str], ...] = ()


def plurality(ballots: Mapping[str, str], weights: Optional[Mapping[str, float]] = None) -> str:
    tally: Dict[str, float] = {}
    for drone, option in ballots.items():
        tally[option] = tally.get(option, 0.0) + (1.0 if weights is None else weights.get(drone, 1.0))
    return min(tally, key=lambda o: (-tally[o], o))


def ballots_from_scores(proposals: Mapping[str, Mapping[str, float]],
                        viable: Iterable[str]) -> Dict[str, str]:
    """Each drone votes its best-scored viable option; ties go to the lowest option id."""
    viable = set(viable)
    out = {}
    for drone in sorted(proposals):
        scored = [(s, o) for o, s in proposals[drone].items() if o in viable]
        if scored:
            out[drone] = min(scored, key=lambda so: (-so[0], so[1]))[1]
    return out


def formulate_decision(signature: Iterable[str], options: Sequence[Option],
                       proposals: Mapping[str, Mapping[str, float]], kb: KnowledgeBase,
                       mission: str, tick: int, principles: Iterable[Principle] = (),
                       aggregate: Callable[[Mapping[str, str]], str] = plurality,
                       sigma: float = 0.8, adopt: float = 0.5) -> Decision:
    """Adopt a strong precedent if one exists, otherwise vote among ethical options."""
    if not options:
        raise ValueError("need at least one option")
    signature = make_signature(signature)
    principles = list(principles)
    viable = {o.option_id: o for o in options if check_ethics(o, principles).passed}
    if not viable:
        raise NoViableOption("every option is vetoed")
    draft = lambda choice: PrecedentRecord(signature, choice, 0.0, mission, tick)
    precedent = evaluate_situation(signature, kb, sigma)
    if precedent is not None and precedent.outcome >= adopt and precedent.decision in viable:
        return Decision(precedent.decision, "precedent", draft(precedent.decision))
    ballots = ballots_from_scores(proposals, viable)
    if not ballots:
        choice = min(viable)
        return Decision(choice, "default", draft(choice))
    choice = aggregate(ballots)
    if choice not in viable:
        choice = plurality(ballots)
    return Decision(choice, "vote", draft(choice), tuple(sorted(ballots.items())))


# -- collaborative learning --------------------------------------------------

def replica_holders(digest: str, drone_ids: Iterable[str], k: int = 3) -> List[str]:
    """Rendezvous hashing: the k drones with the highest hash of (digest, id)."""
    ids = sorted(set(drone_ids))
    k = min(k, len(ids))

    def weight(drone: str) -> int:
        return int.from_bytes(hashlib.sha256(f"{digest}:{drone}".encode()).digest()[:8], "big")

    return sorted(ids, key=lambda d: (-weight(d), d))[:k]


@dataclass
class KnowledgeShards:
    """Per-drone precedent shards with k-way replication."""
    k: int = 3
    shards: Dict[str, KnowledgeBase] = field(default_factory=dict)
    pending: List[Tuple[PrecedentRecord, str]] = field(default_factory=list)

    def shard(self, drone: str) -> KnowledgeBase:
        return self.shards.setdefault(drone, KnowledgeBase())

    def seed(self, drone: str, records: Iterable[PrecedentRecord]) -> None:
        shard = self.shard(drone)
        for rec in records:
            shard.add(rec)

    def learn(self, record: PrecedentRecord, members: Iterable[str],
              send: Optional[Callable[[str], bool]] = None) -> List[str]:
        """Replicate ``record``; holders whose message is lost are retried via :meth:`retry`."""
        holders = replica_holders(signature_digest(record.signature), members, self.k)
        stored = []
        for holder in holders:
            if send is None or send(holder):
                self.shard(holder).add(record)
                stored.append(holder)
            else:
                self.pending.append((record, holder))
        return stored

    def retry(self, alive: Iterable[str], send: Optional[Callable[[str], bool]] = None) -> int:
        alive = set(alive)
        waiting, self.pending = self.pending, []
        done = 0
        for record, holder in waiting:
            if holder not in alive:
                continue
            if send is None or send(holder):
                self.shard(holder).add(record)
                done += 1
            else:
                self.pending.append((record, holder))
        return done

    def lookup(self, signature: Iterable[str], alive: Iterable[str]) -> List[PrecedentRecord]:
        signature = frozenset(signature)
        found = {}
        for drone in sorted(set(alive)):
            for rec in self.shards.get(drone, ()):
                if rec.signature == signature:
                    found[rec.key + (rec.tick,)] = rec
        return list(found.values())

    def merged(self, drones: Iterable[str]) -> KnowledgeBase:
        seen, out = set(), KnowledgeBase()
        for drone in sorted(set(drones)):
            for rec in self.shards.get(drone, ()):
                if (rec.key, rec.tick) not in seen:
                    seen.add((rec.key, rec.tick))
                    out.add(rec)
        return out
