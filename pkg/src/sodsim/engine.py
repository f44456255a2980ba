"""Scenario execution: every layer wired into one kernel loop.

A :class:`Simulation` owns the kernel, the radio medium, per-drone state, the
swarm membership, secure sessions, contribution ledger, knowledge shards and
the ground mission lifecycle. Handlers are registered per event kind; each
handler returns a small JSON-able result that the kernel digests into the
telemetry log, so anything that changes behaviour also changes the digest.
"""

from __future__ import annotations

import csv
import io
import json
import math
from collections import Counter, deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

from .drone import (COMPUTE, CRUISE, DISENGAGE, HOVER, RADIO, SACRIFICE, Depleted, DroneState,
                    EnergyModel, EnergyState, Obligation, Obstacle, PreservationThresholds, Role,
                    consume, detect_and_avoid, evaluate_self_preservation, power_report,
                    service_level_check, step_flight)
from .fleet import (Attestation, FleetMember, HandshakeFailed, NoCompliantRoute, SessionTable,
                    Task, TimedWaypoint, TrustDenied, Unreachable, balance_load,
                    detect_congestion, plan_route)
from .gfms import (Inventory, InventoryItem, MissionBrief, MissionLifecycle, consolidate_knowledge,
                   debrief, required_sessions, select_drones, upload_brief)
from .kernel import EventKind, Kernel, MetricsSummary
from .knowledge import KnowledgeStore, make_signature
from .membership import (CORE, Candidate, Election, MemberInfo, NoHealthyMembers, SodType, Swarm,
                         SwarmConfig, aggregate_votes, elect, enrol, leave)
from .policy import Action, PolicySet, harmonise_policy, local_policy_check
from .radio import JammingRegion, NetMessage, Network, RadioNode
from .scenario import ScenarioSpec
from .swarm import (ABORT, ALTRUISTIC, CONTINUE, ContributionLedger, ContributionReport,
                    KnowledgeShards, MissionAssessment, NoViableOption, Objective, Option,
                    Principle, assess_mission, check_ethics, detect_free_riders,
                    formulate_decision)

COMPLETED = "Completed"
ABORTED = "Aborted"
FAILED = "Failed"
EXIT_CODES = {COMPLETED: 0, ABORTED: 10, FAILED: 11}

# drone runtime status
PENDING = "pending"        # declared in the scenario, not yet asked to join
REJECTED = "rejected"
LANDED = "landed"
TRANSIT = "transit"
WORKING = "working"
RETURNING = "returning"
CAPTURED = "captured"
DEPLETED = "depleted"
FLYING = frozenset({TRANSIT, WORKING, RETURNING})
LOST = frozenset({CAPTURED, DEPLETED})

REL_TOL = 1e-9


class InvariantViolation(RuntimeError):
    """A broken simulator invariant: always a bug, never a scenario outcome."""

    def __init__(self, name: str, detail: str = ""):
        self.name = name
        super().__init__(f"invariant {name} violated: {detail}" if detail else f"invariant {name} violated")


@dataclass
class DroneRuntime:
    state: DroneState
    capabilities: frozenset
    delivery_ratio: float
    radio_range: float
    own_policy: PolicySet
    initial: bool
    ring: str = CORE
    status: str = LANDED
    queue: List[str] = field(default_factory=list)
    detour: Optional[Tuple[float, float, float]] = None
    known: Dict[str, Obstacle] = field(default_factory=dict)
    severe: bool = False
    sacrificed: bool = False
    disengaged: bool = False
    work_delivered: float = 0.0
    messages_sent: int = 0


@dataclass
class RunReport:
    scenario: str
    seed: int
    outcome: str
    reason: str
    end_tick: int
    completion: float
    objectives: Dict[str, Optional[int]]
    drones: Dict[str, Dict[str, Any]]
    messages: Dict[str, int]
    decisions: List[Dict[str, Any]]
    free_riders: List[Dict[str, Any]]
    sacrifices: List[Dict[str, Any]]
    disengagements: List[Dict[str, Any]]
    reelections: List[int]
    admissions: List[Dict[str, Any]]
    rejections: List[Dict[str, Any]]
    gcs_delivery_ticks: List[int]
    congestion_flags: List[int]
    service_degraded: int
    policy_violations: int
    new_precedents: int
    missing_logs: List[str]
    energy_max_error: float
    telemetry_digest: str

    @property
    def exit_code(self) -> int:
        return EXIT_CODES[self.outcome]

    def as_dict(self) -> Dict[str, Any]:
        return dict(self.__dict__)

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), indent=2, sort_keys=True) + "\n"


def _round(v: float) -> float:
    return round(float(v), 6)


class Simulation:
    """One scenario run. Build, call :meth:`run`, then read the artifacts."""

    def __init__(self, spec: ScenarioSpec, store_path=None, seed: Optional[int] = None):
        if seed is not None:
            spec = spec.with_seed(seed)
        self.spec = spec
        sc, params = spec.section("scenario"), spec.section("params")
        self.name = sc["name"]
        self.max_ticks = sc["max_ticks"]
        self.stop_mode = sc["stop"]
        self.report_interval = sc["report_interval"]
        self.params = params
        self.kernel = Kernel(spec.seed, sc["tick_seconds"])
        self.tick_seconds = sc["tick_seconds"]
        self.model = EnergyModel(params["p_hover"], params["p_cruise"], params["e_compute"],
                                 params["e_radio"])
        self.thresholds = PreservationThresholds(params["theta_disengage"], params["theta_sacrifice"])
        self.store = KnowledgeStore(store_path) if store_path is not None else None

        net = spec.section("network")
        jams = [JammingRegion(tuple(j["center"]), j["radius"], j["start"], j["end"])
                for j in net["jamming"]]
        self.network = Network(net["p_loss"], net["hop_latency"], jams)
        self.gcs = sorted(g["id"] for g in spec.data["gcs"])
        for g in spec.data["gcs"]:
            self.network.add(RadioNode(g["id"], tuple(g["position"]), g["range"], sc["organisation"], "gcs"))

        air = spec.section("airspace")
        self.airspace = PolicySet.build(air["intervals"], air["allowed"], air["forbidden"])
        mission = spec.section("mission")
        security = PolicySet.build(mission["security"])
        merged = harmonise_policy(security, self.airspace)
        self.baseline = merged.merged if merged.compatible else self.airspace

        self.objectives: Dict[str, Objective] = {}
        for o in mission["objective"]:
            self.objectives[o["id"]] = Objective(o["id"], o["capability"], o["capacity"], o["work"],
                                                 tuple(o["area"]), o["criticality"], o["deadline"])
        self.remaining: Dict[str, float] = {k: o.work for k, o in self.objectives.items()}
        self.completed: Dict[str, Optional[int]] = {k: None for k in self.objectives}
        self.principles = [Principle(e["id"], e["kind"], e["value"]) for e in spec.data["ethics"]]
        self.brief = MissionBrief(mission["id"], list(self.objectives.values()),
                                  airspace=self.airspace, principles=self.principles,
                                  security=security, commitments=tuple(mission["commitments"]))
        self.mission_id = mission["id"]

        self.drones: Dict[str, DroneRuntime] = {}
        self.attestations: Dict[str, Attestation] = {}
        for d in spec.drones:
            state = DroneState(d["id"], d["organisation"], tuple(d["position"]),
                               energy=EnergyState(d["capacity"], d["reserve"]), compute=d["compute"],
                               health=d["health"], sensors=frozenset(d["sensors"]),
                               sensor_range=d["sensor_range"], max_speed=d["max_speed"],
                               home=tuple(d["home"]))
            own = PolicySet.build(d["policy"])
            rt = DroneRuntime(state, frozenset(d["sensors"]), d["delivery_ratio"], d["range"], own,
                              d["initial"], d["ring"], LANDED if d["initial"] else PENDING)
            h = harmonise_policy(own, self.baseline)
            state.policy = h.merged if h.compatible else self.baseline
            self.drones[d["id"]] = rt
            self.attestations[d["id"]] = Attestation(d["id"], d["attestation_until"])
            if d["initial"]:
                self._attach(d["id"])

        sw = spec.section("swarm")
        self.config = SwarmConfig(sw["sod_type"], sw["topology"], sw["clusters"], sw["w_core"])
        self.swarm = Swarm(self.config, sc["organisation"], self.baseline)
        self.sessions = SessionTable()
        self.ledger = ContributionLedger(params["window"], params["tau"])
        self.shards = KnowledgeShards(params["kb_replicas"])
        self.snapshot = self.store.snapshot() if self.store is not None else None
        self.lifecycle = MissionLifecycle(self.mission_id, self.config.topology)
        self.inventory = Inventory(InventoryItem(d, rt.capabilities, rt.state.compute)
                                   for d, rt in sorted(self.drones.items()) if rt.initial)
        self.traffic = [[TimedWaypoint(tuple(w[:3]), w[3]) for w in t["waypoints"]]
                        for t in spec.data["traffic"]]

        self.obstacles: Dict[str, Obstacle] = {}
        self.assessment = MissionAssessment(1.0, CONTINUE)
        self.messages: Counter = Counter()
        self.decisions: List[Dict[str, Any]] = []
        self.free_rider_log: List[Dict[str, Any]] = []
        self.sacrifices: List[Dict[str, Any]] = []
        self.disengagements: List[Dict[str, Any]] = []
        self.reelections: List[int] = []
        self.admissions: List[Dict[str, Any]] = []
        self.rejections: List[Dict[str, Any]] = []
        self.gcs_deliveries: List[int] = []
        self.congestion_flags: List[int] = []
        self.service_degraded = 0
        self.policy_violations = 0
        self.energy_max_error = 0.0
        self.decided_obstacles: set = set()
        self.route = None
        self.commenced = False
        self.aborted = False
        self.reason = ""
        self.finished = False
        self.outcome: Optional[str] = None
        self.end_tick = 0
        self.new_precedents = 0
        self.missing_logs: List[str] = []
        self.report: Optional[RunReport] = None

        handlers = {
            EventKind.MISSION_START: self._on_mission_start,
            EventKind.FLIGHT_STEP: self._on_flight_step,
            EventKind.PERIODIC_REPORT: self._on_report,
            EventKind.WINDOW_CLOSE: self._on_window_close,
            EventKind.DRONE_CAPTURE: self._on_capture,
            EventKind.ENROL_REQUEST: self._on_enrol,
            EventKind.LEAVE_REQUEST: self._on_leave,
            EventKind.OBSTACLE_APPEAR: self._on_obstacle,
            EventKind.AIRSPACE_INJUNCTION: self._on_injunction,
            EventKind.JAMMING_START: self._on_jamming,
            EventKind.JAMMING_STOP: self._on_jamming,
            EventKind.MESSAGE_DELIVERY: self._on_message,
            EventKind.SENSOR_DETECTION: lambda ev: dict(ev.payload),
        }
        for kind, handler in handlers.items():
            self.kernel.on(kind, self._with_decisions(handler))

    def _with_decisions(self, handler):
        """Fold decisions taken while handling an event into its telemetry result."""
        def wrapped(ev):
            before = len(self.decisions)
            result = handler(ev)
            made = self.decisions[before:]
            if made:
                result = dict(result or {})
                result["decisions"] = [[d["option"], d["path"]] for d in made]
            return result
        return wrapped

    # -- helpers -------------------------------------------------------------

    def _attach(self, drone: str) -> None:
        rt = self.drones[drone]
        self.network.add(RadioNode(drone, rt.state.position, rt.radio_range,
                                   rt.state.organisation, "drone"))

    def _engaged(self) -> List[str]:
        """Members still able to work for the mission."""
        return [d for d in sorted(self.swarm.members)
                if self.drones[d].status not in LOST and not self.drones[d].disengaged]

    def _send_cost(self, drone: str, kind: str, size: int) -> None:
        rt = self.drones[drone]
        self.messages[kind] += 1
        rt.messages_sent += 1
        if rt.status in LOST:
            return
        try:
            consume(rt.state, RADIO, size, model=self.model, tick_seconds=self.tick_seconds)
        except Depleted:
            self._lose(drone, DEPLETED)

    def _unicast(self, src: str, dst: str, kind: str, size: int, adjacency=None) -> bool:
        if src == dst:
            return True
        if src in self.drones:
            self._send_cost(src, kind, size)
        else:
            self.messages[kind] += 1
        rng = self.kernel.fork_rng(f"net:{src}")
        return self.network.deliver(NetMessage(src, dst, kind, size), self.kernel.now, rng,
                                    adjacency).delivered

    def _check_energy(self, drone: str) -> None:
        energy = self.drones[drone].state.energy
        err = energy.conservation_error() / energy.capacity
        self.energy_max_error = max(self.energy_max_error, err)
        if err > REL_TOL:
            raise InvariantViolation("energy-conservation", f"{drone} relative error {err:.3e}")

    def _check_membership(self) -> None:
        if self.config.sod_type is SodType.STATIC and self.swarm.commenced and \
                not set(self.swarm.members) <= self.swarm.roster_at_commencement:
            raise InvariantViolation("static-lock", "member joined after commencement")
        if self.config.sod_type is SodType.HYBRID and self.swarm.commenced:
            late = [d for d in self.swarm.core if d not in self.swarm.roster_at_commencement]
            if late:
                raise InvariantViolation("hybrid-core-fixed", f"{late} joined the core in flight")

    # -- mission start -------------------------------------------------------

    def _on_mission_start(self, ev) -> Dict[str, Any]:
        lc, now = self.lifecycle, self.kernel.now
        lc.generate_brief()
        mission = self.spec.section("mission")
        initial = [d for d in sorted(self.drones) if self.drones[d].initial]
        if mission["selection"] == "greedy":
            sel = select_drones(self.brief.requirements(), self.inventory.available(),
                                mission["preferences"])
            if not sel.feasible:
                return self._preflight_abort(f"uncovered:{','.join(sel.uncovered)}")
            roster = sorted(sel.roster)
        else:
            roster = initial
        self.inventory.reserve(self.mission_id, roster)
        election = self._elect(roster)
        lc.select_roster(roster, election)
        for d in roster:
            self.swarm.add(d, self.drones[d].ring, now, self.drones[d].state.organisation)
        self.swarm.election = election

        adj = self.network.adjacency(now)
        gcs = self.gcs[0] if self.gcs else None
        reachable = (lambda d: True) if gcs is None else \
            (lambda d: self._unicast(gcs, d, "brief", 512, adj) and self._unicast(d, gcs, "ack", 64, adj))
        upload = upload_brief(roster, reachable)
        for d in upload.dropped:
            lc.drop(d)
            self.swarm.members.pop(d, None)
        for d in upload.acks:
            if self.snapshot is not None:
                self.shards.seed(d, self.snapshot)
            else:
                self.shards.shard(d)
            lc.ack(d)
        if upload.dropped and not upload.acks:
            return self._preflight_abort("no-ack")
        if upload.dropped:
            items = [i for i in self.inventory.items.values() if i.drone_id in upload.acks]
            still = select_drones(self.brief.requirements(), items, mission["preferences"])
            if not still.feasible:
                return self._preflight_abort(f"uncovered:{','.join(still.uncovered)}")
            # roster changed; the election must reflect who is actually flying
            election = self._elect(list(upload.acks))
            lc.election = self.swarm.election = election
        keys = self._establish_preflight(list(upload.acks), election, adj)
        if mission["permission"]:
            lc.grant_permission()
        res = lc.commence()
        if not res.commenced:
            return self._preflight_abort(res.reason, {"keys": keys})
        self.swarm.commence()
        self.commenced = True
        for d in self.swarm.members:
            self.ledger.register(d)
        self._apply_roles()

        start = self.network.nodes[gcs].position if gcs else self._centroid(list(self.swarm.members))
        try:
            self.route = plan_route(start, [o.area for o in self.objectives.values()], self.airspace,
                                    self.params["cruise_speed"], self.model)
        except NoCompliantRoute:
            return self._preflight_abort("no-compliant-route", {"keys": keys})
        cong = detect_congestion(self.traffic, self.route, self.params["congestion_threshold"],
                                 self.params["d_congest"], now)
        self.congestion_flags = list(cong.flagged)
        self._rebalance()

        k = self.kernel
        k.every(1, EventKind.FLIGHT_STEP, "fleet", start=now + 1)
        k.every(self.report_interval, EventKind.PERIODIC_REPORT, "fleet")
        k.every(self.ledger.window, EventKind.WINDOW_CLOSE, "fleet")
        for i, j in enumerate(self.network.jamming):
            if j.start <= self.max_ticks:
                k.schedule(max(j.start, now), EventKind.JAMMING_START, f"jam{i}", {"region": i})
            if j.end + 1 <= self.max_ticks:
                k.schedule(max(j.end + 1, now), EventKind.JAMMING_STOP, f"jam{i}", {"region": i})
        for e in self.spec.events:
            kind = {"capture": EventKind.DRONE_CAPTURE, "enrol": EventKind.ENROL_REQUEST,
                    "leave": EventKind.LEAVE_REQUEST, "obstacle": EventKind.OBSTACLE_APPEAR,
                    "injunction": EventKind.AIRSPACE_INJUNCTION}[e["kind"]]
            target = e.get("target") or e.get("obstacle_id") or "airspace"
            payload = {key: v for key, v in e.items() if key not in ("tick", "kind")}
            k.schedule(max(e["tick"], now), kind, target, payload)
        return {"roster": sorted(self.swarm.members), "dropped": list(upload.dropped),
                "master": election.master, "heads": list(election.heads), "keys": keys,
                "route": [list(w) for w in self.route.waypoints], "congestion": self.congestion_flags}

    def _preflight_abort(self, reason: str, extra=None) -> Dict[str, Any]:
        self.aborted = True
        self.reason = reason
        self._finish(self.kernel.now)
        out = {"aborted": reason}
        out.update(extra or {})
        return out

    def _establish_preflight(self, roster: List[str], election, adj) -> List[str]:
        needed = required_sessions(self.config.topology, roster, election)
        if needed is None:
            needed = self._spanning_pairs(roster, adj)
        keys = []
        now = self.kernel.now
        for a, b in sorted(needed):
            try:
                s = self.sessions.establish(a, b, self.network, now, self.kernel.fork_rng(f"hs:{a}:{b}"))
            except (HandshakeFailed, Unreachable, TrustDenied):
                continue
            self.messages["handshake"] += 3
            keys.append(s.key_id)
            self.lifecycle.session(a, b)
        return keys

    def _spanning_pairs(self, roster: List[str], adj) -> set:
        """BFS spanning forest over the radio graph restricted to the roster."""
        members, pairs, seen = set(roster), set(), set()
        for root in sorted(members):
            if root in seen:
                continue
            seen.add(root)
            queue = deque([root])
            while queue:
                u = queue.popleft()
                for v in adj.get(u, []):
                    if v in members and v not in seen:
                        seen.add(v)
                        pairs.add((u, v) if u <= v else (v, u))
                        queue.append(v)
        return pairs

    def _elect(self, ids: List[str]):
        """Elect among ``ids``; in hybrid swarms leadership stays with the core ring."""
        ids = sorted(ids)
        pool = ids
        if self.config.sod_type is SodType.HYBRID:
            pool = [d for d in ids if self.drones[d].ring == CORE] or ids
        infos = [MemberInfo(d, self.drones[d].state.compute, self.drones[d].state.position,
                            self.drones[d].state.health > 0) for d in pool]
        election = elect(self.config.topology, infos, self.config.clusters)
        if election.heads:
            pos = lambda d: self.drones[d].state.position
            for d in ids:
                if d not in election.attachment:
                    election.attachment[d] = min(election.heads,
                                                 key=lambda h: (math.dist(pos(d), pos(h)), h))
        return election

    def _apply_roles(self) -> None:
        for d in sorted(self.swarm.members):
            st = self.drones[d].state
            st.roles = {Role.CORE if self.swarm.members[d].ring == CORE else Role.EXTENDED}
            for role in self.swarm.election.roles_of(d):
                st.roles.add(Role(role))
            st.check_roles()

    def _centroid(self, ids: List[str]):
        pts = [self.drones[d].state.position for d in sorted(ids)] or [(0.0, 0.0, 0.0)]
        return tuple(sum(p[i] for p in pts) / len(pts) for i in range(3))

    # -- task allocation -----------------------------------------------------

    def _rebalance(self) -> None:
        engaged = self._engaged()
        open_ids = [] if self.aborted else [o for o in sorted(self.objectives)
                                            if self.remaining[o] > 1e-9]
        tasks = [Task(o, self.remaining[o], self.objectives[o].capability) for o in open_ids]
        fleet = []
        for d in engaged:
            rt = self.drones[d]
            st = rt.state
            fleet.append(FleetMember(d, st.compute, rt.capabilities, st.health > 0,
                                     rt.severe and not rt.sacrificed, True, d in self.swarm.free_riders,
                                     math.inf if rt.sacrificed else st.energy.remaining - st.energy.reserve))
        assignment = balance_load(tasks, fleet, self.model, strict=False) if tasks and fleet else {}
        order = {o: i for i, o in enumerate(self._tour_order(open_ids))}
        for d in sorted(self.drones):
            rt = self.drones[d]
            if rt.status in LOST or rt.status in (PENDING, REJECTED):
                continue
            mine = sorted((o for o, who in assignment.items() if who == d), key=lambda o: order[o])
            if rt.queue and rt.status == WORKING and rt.queue[0] in mine:
                mine.remove(rt.queue[0])
                mine.insert(0, rt.queue[0])
            rt.queue = mine
            if mine:
                if rt.status in (LANDED, RETURNING, WORKING):
                    rt.status = TRANSIT if rt.state.position != self.objectives[mine[0]].area else WORKING
            elif rt.status in (TRANSIT, WORKING):
                rt.status = RETURNING
                rt.detour = None

    def _tour_order(self, open_ids: List[str]) -> List[str]:
        if self.route is None:
            return list(open_ids)
        rank = {tuple(w): i for i, w in enumerate(self.route.waypoints)}
        return sorted(open_ids, key=lambda o: (rank.get(self.objectives[o].area, len(rank)), o))

    # -- flight --------------------------------------------------------------

    def _on_flight_step(self, ev) -> Dict[str, Any]:
        now = self.kernel.now
        out = []
        for d in sorted(self.drones):
            rt = self.drones[d]
            if rt.status in FLYING:
                try:
                    self._step_drone(d, rt, now)
                except Depleted:
                    self._lose(d, DEPLETED)
            if rt.status not in (PENDING, REJECTED):
                self._check_energy(d)
                p = rt.state.position
                out.append([d, rt.status, _round(p[0]), _round(p[1]), _round(p[2]),
                            _round(rt.state.energy.remaining)])
        self._check_end(now)
        return {"d": out}

    def _step_drone(self, d: str, rt: DroneRuntime, now: int) -> None:
        if rt.status == TRANSIT:
            goal = self.objectives[rt.queue[0]].area
            if self._fly(d, rt, goal, now):
                rt.status = WORKING
        elif rt.status == WORKING:
            self._work(d, rt, now)
        elif rt.status == RETURNING:
            if self._fly(d, rt, rt.state.home, now):
                rt.status = LANDED
                rt.state.velocity = (0.0, 0.0, 0.0)

    def _fly(self, d: str, rt: DroneRuntime, goal, now: int) -> bool:
        st = rt.state
        if rt.detour is None and (self.obstacles or rt.known):
            avoid = detect_and_avoid(st, goal, self.obstacles.values(), rt.known.values(),
                                     self.params["avoid_margin"], now)
            if avoid.broadcast is not None:
                self._announce_obstacle(d, avoid.broadcast, now)
            if avoid.maneuver:
                rt.detour = avoid.waypoint
                verdict = local_policy_check(st.policy, Action("move", rt.detour))
                if not verdict.allowed:
                    self.policy_violations += 1
                oid = avoid.obstacle.obstacle_id
                if oid not in self.decided_obstacles:
                    self.decided_obstacles.add(oid)
                    tokens = ["kind:obstacle", "phase:flight", "option:detour"]
                    if verdict.rule:
                        tokens.append(f"rule:{verdict.rule}")
                    self._decide(tokens, [Option("detour", "detour"), Option("hold", "hover")])
        target = rt.detour if rt.detour is not None else goal
        step_flight(st, target, 1, self.model, self.tick_seconds)
        self.network.move(d, st.position)
        if rt.detour is not None and st.position == tuple(rt.detour):
            rt.detour = None
            return False
        return st.position == tuple(goal)

    def _work(self, d: str, rt: DroneRuntime, now: int) -> None:
        st = rt.state
        oid = rt.queue[0]
        planned = min(st.headroom, self.remaining[oid])
        delivered = planned * rt.delivery_ratio
        consume(st, HOVER, 1.0, 1, self.model, self.tick_seconds)
        consume(st, COMPUTE, delivered, model=self.model, tick_seconds=self.tick_seconds)
        if d in self.ledger.counters:
            self.ledger.record(ContributionReport(d, planned, delivered))
        rt.work_delivered += delivered
        self.remaining[oid] = max(0.0, self.remaining[oid] - delivered)
        if self.remaining[oid] <= 1e-9 and self.completed[oid] is None:
            self.remaining[oid] = 0.0
            self.completed[oid] = now
            self._rebalance()

    def _announce_obstacle(self, d: str, obstacle: Obstacle, now: int) -> None:
        rt = self.drones[d]
        rt.known[obstacle.obstacle_id] = obstacle
        self.kernel.schedule(now, EventKind.SENSOR_DETECTION, d,
                             {"obstacle": obstacle.obstacle_id, "tick": now})
        self._send_cost(d, "obstacle", 96)
        adj = self.network.adjacency(now)
        rng = self.kernel.fork_rng(f"net:{d}")
        got = self.network.broadcast(NetMessage(d, "*", "obstacle", 96), now, rng, adj)
        by_tick: Dict[int, List[str]] = {}
        for who, delivery in got.items():
            if delivery.delivered and who in self.drones:
                by_tick.setdefault(delivery.tick, []).append(who)
        for tick, receivers in sorted(by_tick.items()):
            if tick <= self.max_ticks:
                self.kernel.schedule(tick, EventKind.MESSAGE_DELIVERY, d,
                                     {"kind": "obstacle", "obstacle": obstacle.obstacle_id,
                                      "receivers": sorted(receivers)})

    def _on_message(self, ev) -> Dict[str, Any]:
        p = ev.payload
        if p.get("kind") == "obstacle" and p["obstacle"] in self.obstacles:
            ob = self.obstacles[p["obstacle"]]
            for r in p["receivers"]:
                self.drones[r].known.setdefault(ob.obstacle_id, ob)
        return {"ok": True}

    def _lose(self, d: str, status: str) -> None:
        rt = self.drones[d]
        if rt.status in LOST:
            return
        rt.status = status
        rt.queue = []
        rt.detour = None
        rt.state.velocity = (0.0, 0.0, 0.0)
        if d in self.network.nodes:
            self.network.captured.add(d)
        if status == CAPTURED:
            self.sessions.compromise(d)
        else:
            self.sessions.close(d)
        if d in self.swarm.members:
            dep = leave(self.swarm, d, self.kernel.now, None, self.ledger)
            if dep.reelect:
                self._reelect()
        self._rebalance()

    def _reelect(self) -> None:
        alive = [d for d in self._engaged() if self.drones[d].state.health > 0]
        try:
            self.swarm.election = self._elect(alive)
        except NoHealthyMembers:
            self.swarm.election = Election()
        self.reelections.append(self.kernel.now)
        self._apply_roles()

    # -- reports, windows, assessment -----------------------------------------

    def _on_report(self, ev) -> Dict[str, Any]:
        now = self.kernel.now
        adj = self.network.adjacency(now)
        size = self.params["report_bytes"]
        gcs = self.gcs[0] if self.gcs else None
        out = []
        for d in self._engaged():
            rt = self.drones[d]
            if rt.status in LOST:
                continue
            rep = power_report(rt.state, now, self.model)
            rt.severe = rep.severe
            self._send_cost(d, "power_report", size)
            rng = self.kernel.fork_rng(f"net:{d}")
            got = self.network.broadcast(NetMessage(d, "*", "power_report", size), now, rng, adj)
            heard = sum(1 for x in got.values() if x.delivered)
            to_gcs = False
            if gcs is not None and rt.status not in LOST:
                to_gcs = self._unicast(d, gcs, "power_report_gcs", size, adj)
                if to_gcs:
                    self.gcs_deliveries.append(now)
            out.append([d, _round(rep.energy_ratio), rep.severe, heard, to_gcs])
            if rt.status in LOST:
                continue
            if rep.severe or rt.state.health < self.thresholds.disengage:
                verdict = evaluate_self_preservation(d, rt.state.health, rep.severe,
                                                     self.brief.criticality,
                                                     self.assessment.recommendation,
                                                     self.assessment.sacrifice, self.thresholds)
                if verdict.verdict == DISENGAGE and not rt.sacrificed:
                    self._disengage(d, verdict.reason)
                elif verdict.verdict == SACRIFICE and not rt.sacrificed:
                    self._sacrifice(d)
            obligations = [Obligation(o, self.remaining[o], self.objectives[o].deadline)
                           for o in rt.queue if self.objectives[o].deadline > 0]
            if obligations and not service_level_check(rt.state, obligations, now).ok:
                self.service_degraded += 1
        self._check_end(now)
        return {"reports": out}

    def _disengage(self, d: str, reason: str) -> None:
        rt = self.drones[d]
        rt.disengaged = True
        rt.queue = []
        rt.detour = None
        if rt.status in (TRANSIT, WORKING):
            rt.status = RETURNING
        self.disengagements.append({"drone": d, "tick": self.kernel.now, "reason": reason})
        self._rebalance()

    def _sacrifice(self, d: str) -> None:
        self.drones[d].sacrificed = True
        self.sacrifices.append({"drone": d, "tick": self.kernel.now})

    def _on_window_close(self, ev) -> Dict[str, Any]:
        now = self.kernel.now
        ratios = self.ledger.close_window()
        riders = detect_free_riders(self.ledger, self.params["free_rider_windows"])
        fresh = sorted(riders - self.swarm.free_riders)
        for d in fresh:
            self.swarm.free_riders.add(d)
            self.free_rider_log.append({"drone": d, "tick": now, "window": self.ledger.windows_closed})
        if fresh:
            self._rebalance()
            self._decide(["kind:free_rider", "severity:low", "phase:flight"],
                         [Option("reassign", "reassign"), Option("tolerate", "tolerate")])
        alive = self._engaged()
        self.shards.retry(alive, lambda h: True)
        self._assess()
        return {"window": self.ledger.windows_closed,
                "ratios": {k: _round(v) for k, v in ratios.items()}, "free_riders": fresh,
                "assessment": [self.assessment.recommendation, list(self.assessment.sacrifice)]}

    def _assess(self) -> None:
        if self.aborted or not self.commenced:
            return
        open_objs = [self.objectives[o] for o in sorted(self.objectives) if self.remaining[o] > 1e-9]
        if not open_objs:
            return
        fleet = [FleetMember(d, self.drones[d].state.compute, self.drones[d].capabilities,
                             self.drones[d].state.health > 0,
                             self.drones[d].severe and not self.drones[d].sacrificed)
                 for d in self._engaged()]
        self.assessment = assess_mission(fleet, open_objs, self.params["theta_cont"])
        if self.assessment.recommendation == ALTRUISTIC:
            option = Option("altruistic", "sacrifice", self.assessment.sacrifice)
            if not check_ethics(option, self.principles).passed:
                self._abort("ethics-veto")
                return
            for d in self.assessment.sacrifice:
                v = evaluate_self_preservation(d, self.drones[d].state.health, True,
                                               self.brief.criticality, ALTRUISTIC,
                                               self.assessment.sacrifice, self.thresholds)
                if v.verdict == SACRIFICE and not self.drones[d].sacrificed:
                    self._sacrifice(d)
            self._rebalance()
        elif self.assessment.recommendation == ABORT:
            self._abort("assessment")

    def _abort(self, reason: str) -> None:
        if self.aborted:
            return
        self.aborted = True
        self.reason = reason
        self._rebalance()

    # -- injected events -----------------------------------------------------

    def _on_capture(self, ev) -> Dict[str, Any]:
        d = ev.target
        rt = self.drones[d]
        if rt.status in LOST or rt.status in (PENDING, REJECTED):
            return {"ignored": rt.status}
        was_master = d == self.swarm.election.master or d in self.swarm.election.heads
        if d in self.network.nodes:
            self.network.apply_capture(d)
        compromised = self.sessions.compromise(d)
        self._lose(d, CAPTURED)
        self._decide(["kind:capture", "severity:high", "phase:flight"],
                     [Option("continue", "continue"), Option("regroup", "regroup")])
        self._check_end(self.kernel.now)
        return {"captured": d, "compromised": compromised, "leader": was_master,
                "master": self.swarm.election.master, "heads": list(self.swarm.election.heads)}

    def _on_enrol(self, ev) -> Dict[str, Any]:
        d = ev.target
        rt = self.drones[d]
        now = self.kernel.now
        if rt.status != PENDING:
            return {"ignored": rt.status}
        self._attach(d)
        cand = Candidate(d, rt.state.organisation, rt.own_policy)
        engaged = self._engaged()

        def connect(cid: str) -> bool:
            for m in engaged:
                try:
                    self.sessions.establish(cid, m, self.network, now, self.kernel.fork_rng(f"hs:{cid}:{m}"))
                    self.messages["handshake"] += 3
                    return True
                except (HandshakeFailed, Unreachable, TrustDenied):
                    continue
            return False

        adm = enrol(self.swarm, cand, now, self.attestations, connect)
        if adm.admitted:
            rt.status = LANDED
            rt.ring = adm.ring
            if self.commenced:
                self.ledger.register(d)
            if self.snapshot is not None:
                self.shards.seed(d, self.snapshot)
            el = self.swarm.election
            if el.heads:
                el.attachment[d] = min(el.heads, key=lambda h: (
                    math.dist(self.drones[h].state.position, rt.state.position), h))
            self._apply_roles()
            self.admissions.append({"drone": d, "tick": now, "ring": adm.ring})
            self._rebalance()
        else:
            self.network.remove(d)
            rt.status = REJECTED
            self.rejections.append({"drone": d, "tick": now, "reason": adm.reason})
        self._check_membership()
        return {"drone": d, "admitted": adm.admitted, "ring": adm.ring, "reason": adm.reason}

    def _on_leave(self, ev) -> Dict[str, Any]:
        d = ev.target
        if d not in self.swarm.members:
            return {"ignored": True}
        dep = leave(self.swarm, d, self.kernel.now, self.sessions, self.ledger)
        rt = self.drones[d]
        rt.queue = []
        if rt.status in (TRANSIT, WORKING):
            rt.status = RETURNING
        if dep.reelect:
            self._reelect()
        self._rebalance()
        self._check_end(self.kernel.now)
        return {"left": d, "closed": list(dep.sessions_closed), "reelect": dep.reelect}

    def _on_obstacle(self, ev) -> Dict[str, Any]:
        p = ev.payload
        ob = Obstacle(p["obstacle_id"], tuple(p["position"]), p["radius"], "", self.kernel.now)
        self.obstacles[ob.obstacle_id] = ob
        return {"obstacle": ob.obstacle_id}

    def _on_injunction(self, ev) -> Dict[str, Any]:
        p = ev.payload
        injunction = PolicySet.build(p["intervals"], p["allowed"], p["forbidden"])
        h = harmonise_policy(injunction, self.airspace)
        self.airspace = h.merged if h.compatible else injunction
        for rt in self.drones.values():
            m = harmonise_policy(rt.own_policy, self.airspace)
            rt.state.policy = m.merged if m.compatible else self.airspace
        open_areas = [self.objectives[o].area for o in sorted(self.objectives) if self.remaining[o] > 1e-9]
        replanned = False
        if open_areas and not self.aborted:
            engaged = self._engaged()
            start = self._centroid(engaged) if engaged else self.route.waypoints[0]
            try:
                self.route = plan_route(start, open_areas, self.airspace, self.params["cruise_speed"],
                                        self.model)
                replanned = True
            except NoCompliantRoute:
                self._abort("no-compliant-route")
        self._decide(["kind:injunction", "phase:flight", "severity:medium"],
                     [Option("replan", "replan"), Option("hold", "hover")])
        self._rebalance()
        self._check_end(self.kernel.now)
        return {"replanned": replanned, "aborted": self.aborted}

    def _on_jamming(self, ev) -> Dict[str, Any]:
        now = self.kernel.now
        jammed = [d for d in sorted(self.network.nodes) if self.network.jammed(d, now)]
        if ev.kind is EventKind.JAMMING_START and self.commenced and not self.finished:
            self._decide(["kind:jamming", "severity:medium", "phase:flight"],
                         [Option("continue", "continue"), Option("regroup", "regroup")])
        return {"jammed": jammed}

    # -- collective decisions ------------------------------------------------

    def _collector(self, engaged: List[str]) -> Optional[str]:
        el = self.swarm.election
        if el.master in engaged:
            return el.master
        heads = [h for h in el.heads if h in engaged]
        if heads:
            return heads[0]
        return engaged[0] if engaged else None

    def _decide(self, tokens: List[str], options: List[Option]) -> Optional[str]:
        engaged = self._engaged()
        collector = self._collector(engaged)
        if collector is None or self.finished:
            return None
        now = self.kernel.now
        adj = self.network.adjacency(now)
        latency = max(1, self.network.hop_latency)
        reach = self._hops_from(collector, adj)
        deadline = 2 * max(1, max(reach.values(), default=0)) * latency
        proposals = {}
        for d in engaged:
            hops = reach.get(d)
            if hops is None or hops * latency > deadline:
                continue
            rng = self.kernel.fork_rng(d)
            proposals[d] = {o.option_id: _round(rng.random()) for o in options}
            if d != collector:
                self._send_cost(d, "proposal", 128)
        kb = self.shards.merged(engaged)
        sig = make_signature(tokens)
        try:
            decision = formulate_decision(
                sig, options, proposals, kb, self.mission_id, now, self.principles,
                aggregate=lambda b: aggregate_votes(self.config.topology, b, self.swarm.weights(),
                                                    self.swarm.election),
                sigma=self.params["sigma"], adopt=self.params["adopt_score"])
        except NoViableOption:
            self.decisions.append({"tick": now, "situation": sorted(sig), "option": None,
                                   "path": "vetoed"})
            self._abort("ethics-veto")
            return None
        self.decisions.append({"tick": now, "situation": sorted(sig), "option": decision.option,
                               "path": decision.path})

        def send(holder: str) -> bool:
            return self._unicast(collector, holder, "replicate", 256, adj)

        self.shards.learn(decision.record, engaged, send)
        return decision.option

    @staticmethod
    def _hops_from(src: str, adj) -> Dict[str, int]:
        dist = {src: 0}
        queue = deque([src])
        while queue:
            u = queue.popleft()
            for v in adj.get(u, []):
                if v not in dist:
                    dist[v] = dist[u] + 1
                    queue.append(v)
        return dist

    # -- termination ---------------------------------------------------------

    def _open(self) -> bool:
        return any(v > 1e-9 for v in self.remaining.values())

    def _check_end(self, now: int) -> None:
        if self.finished or not self.commenced or self.stop_mode != "mission":
            return
        flying = any(rt.status in FLYING for rt in self.drones.values())
        if flying:
            return
        if not self._open() or self.aborted:
            self._finish(now)
        elif not any(self.drones[d].queue for d in self._engaged()):
            self._finish(now)

    def _finish(self, now: int) -> None:
        if self.finished:
            return
        self.finished = True
        self.end_tick = now
        if self.aborted:
            self.outcome = ABORTED
        elif not self._open():
            self.outcome = COMPLETED
        else:
            self.outcome = FAILED
            self.reason = self.reason or "objectives-incomplete"
        lc = self.lifecycle
        if self.commenced:
            lc.returned()
            roster = set(self.swarm.roster_at_commencement) | {a["drone"] for a in self.admissions}
            back = [d for d in roster if self.drones[d].status == LANDED]
            report = debrief(self.mission_id, roster, back, self.shards, self.completed)
            self.missing_logs = report.missing_logs
            lc.debriefed()
            if self.store is not None:
                self.new_precedents = consolidate_knowledge(report, self.store)
            else:
                self.new_precedents = len(report.precedents)
            lc.consolidated()
        self.inventory.release(self.mission_id)
        if self.stop_mode == "mission":
            self.kernel.stop()

    # -- public API ----------------------------------------------------------

    def run(self) -> RunReport:
        self.kernel.schedule(0, EventKind.MISSION_START, "gfms")
        self.kernel.run_until(self.max_ticks)
        if not self.finished:
            self._finish(self.kernel.now)
        completion = sum(1 for t in self.completed.values() if t is not None) / len(self.completed)
        if not 0.0 <= completion <= 1.0:
            raise InvariantViolation("completion-range", str(completion))
        for d in self.drones:
            self._check_energy(d)
        self._fill_counters(completion)
        self.report = RunReport(
            scenario=self.name, seed=self.spec.seed, outcome=self.outcome, reason=self.reason,
            end_tick=self.end_tick, completion=completion, objectives=dict(self.completed),
            drones={d: self._drone_row(d) for d in sorted(self.drones)},
            messages=dict(sorted(self.messages.items())), decisions=self.decisions,
            free_riders=self.free_rider_log, sacrifices=self.sacrifices,
            disengagements=self.disengagements, reelections=self.reelections,
            admissions=self.admissions, rejections=self.rejections,
            gcs_delivery_ticks=self.gcs_deliveries, congestion_flags=self.congestion_flags,
            service_degraded=self.service_degraded, policy_violations=self.policy_violations,
            new_precedents=self.new_precedents, missing_logs=self.missing_logs,
            energy_max_error=self.energy_max_error, telemetry_digest=self.kernel.telemetry_digest())
        return self.report

    def _drone_row(self, d: str) -> Dict[str, Any]:
        rt = self.drones[d]
        e = rt.state.energy
        return {"status": rt.status, "capacity": e.capacity, "remaining": e.remaining,
                "consumed": e.consumed, "ledger": dict(e.ledger), "work": rt.work_delivered,
                "messages": rt.messages_sent}

    def _fill_counters(self, completion: float) -> None:
        c = self.kernel.counters
        c["messages.total"] = sum(self.messages.values())
        for kind, n in self.messages.items():
            c[f"messages.{kind}"] = n
        c["decisions.total"] = len(self.decisions)
        for dec in self.decisions:
            c[f"decisions.{dec['path']}"] += 1
        c["energy.consumed"] = _round(sum(rt.state.energy.consumed for rt in self.drones.values()))
        c["free_riders"] = len(self.free_rider_log)
        c["reelections"] = len(self.reelections)
        c["completion"] = _round(completion)

    def metrics_csv(self) -> str:
        out = io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        cols = ["entity", "status", "capacity", "remaining", "consumed", HOVER, CRUISE, COMPUTE,
                RADIO, "work", "messages"]
        w.writerow(cols)
        totals = [0.0] * 9
        for d in sorted(self.drones):
            row = self._drone_row(d)
            vals = [row["capacity"], row["remaining"], row["consumed"]] + \
                   [row["ledger"][k] for k in (HOVER, CRUISE, COMPUTE, RADIO)] + \
                   [row["work"], row["messages"]]
            totals = [a + b for a, b in zip(totals, vals)]
            w.writerow([d, row["status"]] + [repr(_round(v)) for v in vals])
        w.writerow(["fleet", self.outcome or ""] + [repr(_round(v)) for v in totals])
        return out.getvalue()

    def summary(self) -> MetricsSummary:
        return self.kernel.summary()

    def write_artifacts(self, out_dir) -> Dict[str, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {"telemetry": out / "telemetry.log", "metrics": out / "metrics.csv",
                 "report": out / "report.json", "summary": out / "summary.txt"}
        paths["telemetry"].write_text(self.kernel.telemetry_text())
        paths["metrics"].write_text(self.metrics_csv())
        paths["report"].write_text(self.report.to_json())
        paths["summary"].write_text(self.summary().to_text())
        return paths


def run_scenario(spec: ScenarioSpec, seed: Optional[int] = None, store_path=None) -> Simulation:
    sim = Simulation(spec, store_path, seed)
    sim.run()
    return sim
