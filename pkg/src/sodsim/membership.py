"""Swarm membership (static, dynamic, hybrid) and collaboration topologies."""

from __future__ import annotations

import csv
import enum
import io
import math
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from typing import Callable, Dict, Iterable, List, Mapping, Optional, Set, Tuple

from .fleet import CONDITIONAL, Attestation, SessionTable, verify_trust
from .policy import PolicySet
from .swarm import ContributionLedger, plurality


class NotMember(KeyError):
    pass


class NoHealthyMembers(RuntimeError):
    pass


class NoProposals(ValueError):
    pass


class UnknownKey(KeyError):
    pass


class SodType(str, enum.Enum):
    STATIC = "static"
    DYNAMIC_CLOSED = "dynamic-closed"
    DYNAMIC_OPEN = "dynamic-open"
    HYBRID = "hybrid"

    @property
    def family(self) -> str:
        """Granularity of the importance matrix: open and closed dynamic share a row."""
        return {"static": "Static", "hybrid": "Hybrid"}.get(self.value, "Dynamic")


class Topology(str, enum.Enum):
    CENTRALISED = "centralised"
    DECENTRALISED = "decentralised"
    DISTRIBUTED = "distributed"

    @property
    def label(self) -> str:
        return self.value.capitalize()


CORE = "core"
EXTENDED = "extended"


@dataclass(frozen=True)
class SwarmConfig:
    sod_type: SodType = SodType.STATIC
    topology: Topology = Topology.CENTRALISED
    clusters: int = 1
    w_core: float = 2.0

    def __post_init__(self):
        object.__setattr__(self, "sod_type", SodType(self.sod_type))
        object.__setattr__(self, "topology", Topology(self.topology))
        if self.clusters < 1:
            raise ValueError("cluster count must be >= 1")
        if self.sod_type is SodType.HYBRID and not self.w_core > 1:
            raise ValueError("hybrid swarms need w_core > 1")


@dataclass
class MembershipRecord:
    drone_id: str
    ring: str
    joined: int
    left: Optional[int] = None
    organisation: str = ""


@dataclass(frozen=True)
class Candidate:
    drone_id: str
    organisation: str
    policy: PolicySet = field(default_factory=PolicySet)


@dataclass(frozen=True)
class Admission:
    admitted: bool
    ring: Optional[str] = None
    reason: str = ""


@dataclass
class Election:
    master: Optional[str] = None
    heads: Tuple[str, ...] = ()
    attachment: Dict[str, str] = field(default_factory=dict)

    def roles_of(self, drone: str) -> Set[str]:
        if drone == self.master:
            return {"master"}
        if drone in self.heads:
            return {"cluster-head"}
        return set()


class Swarm:
    """Live membership state of one swarm of drones."""

    def __init__(self, config: SwarmConfig, organisation: str,
                 baseline: Optional[PolicySet] = None):
        self.config = config
        self.organisation = organisation
        self.baseline = baseline or PolicySet()
        self.members: Dict[str, MembershipRecord] = {}
        self.departed: List[MembershipRecord] = []
        self.commenced = False
        self.roster_at_commencement: frozenset = frozenset()
        self.free_riders: Set[str] = set()
        self.election = Election()

    def add(self, drone_id: str, ring: str, tick: int, organisation: str = "") -> MembershipRecord:
        if ring == EXTENDED and self.config.sod_type is not SodType.HYBRID:
            raise ValueError("only hybrid swarms have an extended ring")
        record = MembershipRecord(drone_id, ring, tick, organisation=organisation or self.organisation)
        self.members[drone_id] = record
        return record

    def commence(self) -> None:
        self.commenced = True
        self.roster_at_commencement = frozenset(self.members)

    @property
    def core(self) -> List[str]:
        return sorted(d for d, r in self.members.items() if r.ring == CORE)

    @property
    def extended(self) -> List[str]:
        return sorted(d for d, r in self.members.items() if r.ring == EXTENDED)

    def weight(self, drone_id: str) -> float:
        if drone_id in self.free_riders:
            return 0.0
        if self.config.sod_type is SodType.HYBRID and self.members[drone_id].ring == CORE:
            return self.config.w_core
        return 1.0

    def weights(self) -> Dict[str, float]:
        return {d: self.weight(d) for d in sorted(self.members)}


def enrol(swarm: Swarm, candidate: Candidate, tick: int,
          attestations: Mapping[str, Attestation],
          connect: Optional[Callable[[str], bool]] = None) -> Admission:
    """Admission verdict for a drone asking to join.

    Static swarms lock at commencement; closed dynamic swarms only take the
    swarm's own organisation; hybrid swarms put in-flight joiners in the
    extended ring. Admission always needs trust at Conditional or better, a
    compatible policy, and a secure channel with at least one member.
    """
    if candidate.drone_id in swarm.members:
        raise ValueError(f"{candidate.drone_id} is already a member")
    kind = swarm.config.sod_type
    if kind is SodType.STATIC and swarm.commenced:
        return Admission(False, reason="locked")
    if kind is SodType.DYNAMIC_CLOSED and candidate.organisation != swarm.organisation:
        return Admission(False, reason="organisation")
    verdict = verify_trust(candidate.drone_id, candidate.organisation, candidate.policy,
                           swarm.organisation, swarm.baseline, attestations, tick)
    if not verdict.token_valid:
        return Admission(False, reason="attestation")
    if not verdict.compatible:
        return Admission(False, reason="policy")
    if not verdict.at_least(CONDITIONAL):
        return Admission(False, reason="trust")
    if swarm.members and connect is not None and not connect(candidate.drone_id):
        return Admission(False, reason="channel")
    ring = EXTENDED if kind is SodType.HYBRID and swarm.commenced else CORE
    swarm.add(candidate.drone_id, ring, tick, candidate.organisation)
    return Admission(True, ring, "admitted")


@dataclass(frozen=True)
class Departure:
    drone_id: str
    ring: str
    reelect: bool
    sessions_closed: Tuple[str, ...] = ()


def leave(swarm: Swarm, drone_id: str, tick: int, sessions: Optional[SessionTable] = None,
          ledger: Optional[ContributionLedger] = None) -> Departure:
    try:
        record = swarm.members.pop(drone_id)
    except KeyError:
        raise NotMember(drone_id) from None
    record.left = tick
    swarm.departed.append(record)
    closed = tuple(sessions.close(drone_id)) if sessions is not None else ()
    if ledger is not None:
        ledger.remove(drone_id)
    swarm.free_riders.discard(drone_id)
    reelect = drone_id == swarm.election.master or drone_id in swarm.election.heads
    return Departure(drone_id, record.ring, reelect, closed)


@dataclass(frozen=True)
class MemberInfo:
    drone_id: str
    compute: float
    position: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    healthy: bool = True


def elect(topology: Topology, members: Iterable[MemberInfo], clusters: int = 1) -> Election:
    """Pick the master or cluster heads by compute capacity, lowest id on ties."""
    healthy = [m for m in members if m.healthy]
    if not healthy:
        raise NoHealthyMembers("no healthy member to elect")
    topology = Topology(topology)
    if topology is Topology.DISTRIBUTED:
        return Election()
    ranked = sorted(healthy, key=lambda m: (-m.compute, m.drone_id))
    if topology is Topology.CENTRALISED:
        return Election(master=ranked[0].drone_id)
    heads = ranked[:min(clusters, len(ranked))]
    attachment = {}
    for m in sorted(healthy, key=lambda m: m.drone_id):
        nearest = min(heads, key=lambda h: (math.dist(m.position, h.position), h.drone_id))
        attachment[m.drone_id] = m.drone_id if m in heads else nearest.drone_id
    return Election(heads=tuple(sorted(h.drone_id for h in heads)), attachment=attachment)


def aggregate_votes(topology: Topology, ballots: Mapping[str, str],
                    weights: Optional[Mapping[str, float]] = None,
                    election: Optional[Election] = None) -> str:
    """Combine per-drone ballots into one option according to the topology.

    Centralised swarms follow the master's own choice; decentralised swarms
    take a weighted plurality inside each cluster and then a plurality across
    heads weighted by cluster turnout; distributed swarms take one weighted
    plurality. Ties always go to the lowest option id.
    """
    if not ballots:
        raise NoProposals("no proposals to aggregate")
    topology = Topology(topology)
    election = election or Election()
    if topology is Topology.CENTRALISED and election.master in ballots:
        return ballots[election.master]
    if topology is Topology.DECENTRALISED and election.heads:
        clusters: Dict[str, Dict[str, str]] = {}
        for drone, option in ballots.items():
            head = election.attachment.get(drone, election.heads[0])
            clusters.setdefault(head, {})[drone] = option
        head_votes, head_weights = {}, {}
        for head, cluster in clusters.items():
            head_votes[head] = plurality(cluster, weights)
            head_weights[head] = float(len(cluster))
        return plurality(head_votes, head_weights)
    return plurality(ballots, weights)


CHALLENGES = ("SP1", "SP2", "SP3", "SP4", "PE1", "PE2")


@lru_cache(maxsize=1)
def importance_matrix() -> Dict[Tuple[str, str, str], int]:
    text = resources.files("sodsim").joinpath("data/importance_matrix.csv").read_text()
    rows = csv.DictReader(io.StringIO("".join(l for l in text.splitlines(True) if not l.startswith("#"))))
    matrix = {(r["sod_type"], r["topology"], r["challenge"]): int(r["importance"]) for r in rows}
    if len(matrix) != 54 or not all(1 <= v <= 5 for v in matrix.values()):
        raise RuntimeError("importance matrix data file is damaged")
    return matrix


def _family(sod_type) -> str:
    if isinstance(sod_type, SodType):
        return sod_type.family
    name = str(sod_type).strip().lower()
    try:
        return SodType(name).family
    except ValueError:
        return name.capitalize()


def _label(topology) -> str:
    if isinstance(topology, Topology):
        return topology.label
    return str(topology).strip().capitalize()


def challenge_importance(sod_type, topology, challenge: str) -> int:
    """Importance (1-5) of an open challenge for a swarm type and collaboration model."""
    key = (_family(sod_type), _label(topology), str(challenge).upper())
    try:
        return importance_matrix()[key]
    except KeyError:
        raise UnknownKey(key) from None


def dump_matrix() -> str:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["sod_type", "topology", "challenge", "importance"])
    for (sod, topo, ch), value in importance_matrix().items():
        writer.writerow([sod, topo, ch, value])
    return out.getvalue()
