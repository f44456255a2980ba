"""End-to-end acceptance suite: one test per criterion, one PASS/FAIL line each.

Run on its own with ``pytest tests/test_acceptance.py -v``; the verdict lines are
repeated in the terminal summary.
"""

from __future__ import annotations

import itertools
import math
import random
import subprocess
import sys
import time
import tracemalloc
from pathlib import Path

import numpy as np

from sodsim.engine import Simulation
from sodsim.fleet import FleetMember, Task, balance_load, makespan, SessionTable, HandshakeFailed
from sodsim.gfms import MissionLifecycle, MissionPhase
from sodsim.kernel import EventKind, RngStream
from sodsim.membership import CHALLENGES, Election, aggregate_votes, challenge_importance, elect, MemberInfo
from sodsim.radio import NetMessage, Network, RadioNode
from sodsim.scenario import load_scenario
from sodsim.swarm import ABORT, ALTRUISTIC, CONTINUE, Objective, assess_mission, success_probability

from builders import random_scenario, scenario_dict, spec_from

SCENARIOS = Path(__file__).resolve().parents[1] / "src" / "sodsim" / "scenarios"
VERDICTS: list = []


def verdict(number: int, name: str, ok: bool, detail: str) -> None:
    line = f"{'PASS' if ok else 'FAIL'} criterion {number:2d} {name}: {detail}"
    VERDICTS.append(line)
    print(line)
    assert ok, line


# 1 ---------------------------------------------------------------------------

# Expected importance values (filled squares per cell, columns SP1 SP2 SP3 SP4
# PE1 PE2), transcribed by hand independently of the packaged data file.
TABLE = {
    ("Static", "Centralised"): (2, 1, 4, 1, 3, 4),
    ("Static", "Decentralised"): (3, 1, 5, 1, 4, 5),
    ("Static", "Distributed"): (3, 1, 5, 1, 4, 5),
    ("Dynamic", "Centralised"): (4, 2, 5, 4, 4, 4),
    ("Dynamic", "Decentralised"): (4, 3, 5, 5, 5, 5),
    ("Dynamic", "Distributed"): (4, 3, 5, 5, 5, 5),
    ("Hybrid", "Centralised"): (4, 2, 5, 4, 4, 4),
    ("Hybrid", "Decentralised"): (4, 3, 5, 5, 5, 5),
    ("Hybrid", "Distributed"): (4, 3, 5, 5, 5, 5),
}


def test_importance_table_fidelity():
    start = time.perf_counter()
    mismatches = []
    for (sod, topo), row in TABLE.items():
        for challenge, expected in zip(CHALLENGES, row):
            got = challenge_importance(sod, topo, challenge)
            if got != expected:
                mismatches.append(f"{sod}/{topo}/{challenge}={got}, want {expected}")
    elapsed = time.perf_counter() - start
    checked = len(TABLE) * len(CHALLENGES)
    verdict(1, "importance table", checked == 54 and not mismatches and elapsed < 1.0,
            f"{checked} cells, {len(mismatches)} mismatches {mismatches[:3]}, {elapsed:.3f}s")


# 2 ---------------------------------------------------------------------------

def test_determinism_over_seeds():
    start = time.perf_counter()
    pairs = same = 0
    for i in range(20):
        spec = spec_from(random_scenario(random.Random(1000 + i), i))
        for seed in range(5):
            seeded = spec.with_seed(seed)
            a = Simulation(seeded).run().telemetry_digest
            b = Simulation(seeded).run().telemetry_digest
            pairs += 1
            same += a == b
    elapsed = time.perf_counter() - start
    verdict(2, "determinism", same == pairs == 100 and elapsed < 60,
            f"{same}/{pairs} identical digest pairs, {elapsed:.1f}s")


# 3 ---------------------------------------------------------------------------

def _fuzz_swarm(rng: random.Random, sod: str, joiners: int, orgs, until_choices, altitude_choices):
    data = scenario_dict(drones=4, objectives=2, seed=rng.randrange(2 ** 32),
                         swarm={"sod_type": sod, "topology": rng.choice(
                             ["centralised", "decentralised", "distributed"])},
                         airspace={"intervals": {"altitude": [0.0, 120.0]}})
    for o in data["mission"]["objective"]:
        o["work"] = 20000.0
    data["scenario"]["max_ticks"] = 2000
    events = []
    for j in range(joiners):
        jid = f"j{j:02d}"
        lo = rng.choice(altitude_choices)
        data["drone"].append({"id": jid, "position": [rng.uniform(-20, 20), rng.uniform(-20, 20), 0.0],
                              "sensors": ["camera"], "initial": False,
                              "organisation": rng.choice(orgs),
                              "attestation_until": rng.choice(until_choices),
                              "policy": {"altitude": [lo, lo + 50.0]}})
        events.append({"tick": rng.randint(1, 150), "kind": "enrol", "target": jid})
    data["event"] = sorted(events, key=lambda e: (e["tick"], e["target"]))
    return data


def test_static_lock_under_fuzzing():
    rng = random.Random(31)
    attempts = admitted = 0
    for _ in range(50):
        data = _fuzz_swarm(rng, "static", 20, ["org", "other"], [10 ** 9, 50], [0.0, 200.0])
        report = Simulation(spec_from(data)).run()
        attempts += len(report.admissions) + len(report.rejections)
        admitted += len(report.admissions)
    verdict(3, "static lock", attempts == 1000 and admitted == 0,
            f"{attempts} post-commencement enrol attempts, {admitted} admitted")


# 4 ---------------------------------------------------------------------------

def test_closed_dynamic_gate_matches_oracle():
    rng = random.Random(47)
    attempts = disagreements = admitted = 0
    for _ in range(40):
        data = _fuzz_swarm(rng, "dynamic-closed", 12, ["org", "org", "rival", "partner"],
                           [10 ** 9, 10 ** 9, 0, 80], [0.0, 40.0, 100.0, 130.0, 250.0])
        report = Simulation(spec_from(data)).run()
        joiners = {d["id"]: d for d in data["drone"] if not d.get("initial", True)}
        ticks = {e["target"]: e["tick"] for e in data["event"]}
        got = {a["drone"] for a in report.admissions}
        for jid, d in joiners.items():
            lo, hi = d["policy"]["altitude"]
            expected = (d["organisation"] == "org"
                        and ticks[jid] <= d["attestation_until"]
                        and max(lo, 0.0) <= min(hi, 120.0))
            attempts += 1
            admitted += jid in got
            disagreements += expected != (jid in got)
    verdict(4, "closed-dynamic gate", disagreements == 0 and 0 < admitted < attempts,
            f"{attempts} fuzzed enrolments, {admitted} admitted, {disagreements} oracle disagreements")


# 5 ---------------------------------------------------------------------------

def test_core_dominance_exhaustive():
    cases = wins = 0
    for n_core in range(1, 6):
        core = [f"c{i}" for i in range(n_core)]
        for n_ext in range(0, 11):
            ext = [f"e{i:02d}" for i in range(n_ext)]
            for w_core in (1.5, 2.0, 3.0):
                if not w_core * n_core > n_ext:
                    continue
                weights = {d: w_core for d in core} | {d: 1.0 for d in ext}
                compute = {d: 10.0 if d in core else 20.0 for d in core + ext}
                master = elect("centralised", [MemberInfo(d, compute[d]) for d in core]).master
                for core_choice in ("A", "B"):
                    for ext_votes in itertools.product("AB", repeat=n_ext):
                        ballots = {d: core_choice for d in core} | dict(zip(ext, ext_votes))
                        for topo, election in (("distributed", None),
                                               ("centralised", Election(master=master))):
                            cases += 1
                            wins += aggregate_votes(topo, ballots, weights, election) == core_choice
    verdict(5, "core dominance", wins == cases, f"{wins}/{cases} configurations won by the core")


# 6 ---------------------------------------------------------------------------

def _all_pairs_hops(ids, positions, ranges):
    inf = float("inf")
    dist = {(a, b): (0 if a == b else inf) for a in ids for b in ids}
    for a, b in itertools.combinations(ids, 2):
        if math.dist(positions[a], positions[b]) <= min(ranges[a], ranges[b]):
            dist[a, b] = dist[b, a] = 1
    for k in ids:
        for i in ids:
            for j in ids:
                if dist[i, k] + dist[k, j] < dist[i, j]:
                    dist[i, j] = dist[i, k] + dist[k, j]
    return dist


def test_routing_matches_all_pairs_oracle():
    rng = random.Random(61)
    checked = wrong = 0
    for _ in range(500):
        n = rng.randint(2, 20)
        ids = [f"n{i:02d}" for i in range(n)]
        positions = {i: (rng.uniform(0, 400), rng.uniform(0, 400), rng.uniform(0, 50)) for i in ids}
        ranges = {i: rng.uniform(50, 180) for i in ids}
        net = Network(0.0, hop_latency=1)
        for i in ids:
            net.add(RadioNode(i, positions[i], ranges[i]))
        oracle = _all_pairs_hops(ids, positions, ranges)
        adj = net.adjacency()
        for a in ids:
            for b in ids:
                if a == b:
                    continue
                got = net.deliver(NetMessage(a, b, "probe", 1), 0, adjacency=adj)
                checked += 1
                if oracle[a, b] == float("inf"):
                    wrong += got.delivered
                else:
                    hops = len(got.path) - 1
                    wrong += not (got.delivered and hops == oracle[a, b] and got.tick == hops)
    verdict(6, "routing oracle", wrong == 0, f"{checked} source/destination pairs, {wrong} mismatches")


# 7 ---------------------------------------------------------------------------

def _watched_run(spec):
    """Run with an observer that recomputes energy balance after every flight tick."""
    sim = Simulation(spec)
    inner = sim.kernel._handlers[EventKind.FLIGHT_STEP]
    worst = [0.0, 0]

    def observed(ev):
        out = inner(ev)
        for rt in sim.drones.values():
            e = rt.state.energy
            err = abs(e.capacity - e.remaining - math.fsum(e.ledger.values())) / e.capacity
            worst[0] = max(worst[0], err)
        worst[1] += 1
        return out

    sim.kernel.on(EventKind.FLIGHT_STEP, observed)
    sim.run()
    return worst


def test_energy_conserved_at_every_tick():
    specs = [load_scenario(p) for p in sorted(SCENARIOS.glob("*.toml")) if "performance" not in p.name]
    specs += [spec_from(random_scenario(random.Random(1000 + i), i)) for i in range(20)]
    worst = ticks = 0.0
    for spec in specs:
        err, n = _watched_run(spec)
        worst, ticks = max(worst, err), ticks + n
    verdict(7, "energy conservation", worst <= 1e-9 and ticks > 0,
            f"{len(specs)} scenarios, {int(ticks)} ticks observed, worst relative error {worst:.2e}")


# 8 ---------------------------------------------------------------------------

def test_free_rider_detected_at_window_three():
    spec = load_scenario(SCENARIOS / "free_rider.toml")
    params = spec.section("params")
    ratios = {d["id"]: d["delivery_ratio"] for d in spec.drones}
    assert params["tau"] == 0.5 and params["free_rider_windows"] == 3
    assert sorted(ratios.values()) == [0.2] + [0.95] * 9
    exact = false_pos = 0
    for seed in range(100):
        log = Simulation(spec.with_seed(seed)).run().free_riders
        flagged = [(e["drone"], e["window"]) for e in log]
        exact += flagged[:1] == [("f9", 3)] and sum(1 for d, _ in flagged if d == "f9") == 1
        false_pos += sum(1 for d, _ in flagged if d != "f9")
    verdict(8, "free-rider detection", exact == 100 and false_pos == 0,
            f"{exact}/100 seeds flagged f9 at window 3, {false_pos} false positives")


# 9 ---------------------------------------------------------------------------

def _minimal_rescue(fleet, objectives, threshold):
    ids = sorted(m.drone_id for m in fleet)
    best = None
    for mask in range(1, 1 << len(ids)):
        subset = tuple(d for i, d in enumerate(ids) if mask >> i & 1)
        if success_probability(fleet, objectives, subset) >= threshold:
            if best is None or (len(subset), subset) < (len(best), best):
                best = subset
    return best


def test_altruistic_sacrifice_matches_subset_search():
    rng = random.Random(97)
    trials = agree = altruistic = 0
    while trials < 200:
        fleet = [FleetMember(f"d{i}", rng.randint(1, 10),
                             frozenset(rng.sample(["camera", "thermal", "lidar"], rng.randint(1, 2))),
                             healthy=rng.random() < 0.9, severe=rng.random() < 0.6)
                 for i in range(rng.randint(1, 8))]
        objectives = [Objective(f"o{k}", rng.choice(["camera", "thermal", "lidar"]),
                                capacity=rng.randint(4, 25)) for k in range(rng.randint(1, 3))]
        a = assess_mission(fleet, objectives, 0.6)
        if a.recommendation == CONTINUE:
            continue
        trials += 1
        oracle = _minimal_rescue(fleet, objectives, 0.6)
        if oracle is None:
            agree += a.recommendation == ABORT
        else:
            altruistic += 1
            agree += a.recommendation == ALTRUISTIC and tuple(a.sacrifice) == oracle
    verdict(9, "altruism oracle", agree == trials and altruistic > 0,
            f"{agree}/{trials} trials agree with the 2^n search ({altruistic} with a sacrifice)")


# 10 --------------------------------------------------------------------------

def _optimal_makespan(work):
    n = len(work)
    assignments = np.array(list(itertools.product(range(3), repeat=n)))
    loads = np.stack([((assignments == k) * work).sum(axis=1) for k in range(3)], axis=1)
    return loads.max(axis=1).min()


def test_lpt_within_bound():
    rng = random.Random(101)
    bound = 4 / 3 - 1 / 9
    within = 0
    worst = 0.0
    for _ in range(500):
        work = np.array([rng.randint(1, 30) for _ in range(rng.randint(1, 8))], dtype=float)
        tasks = [Task(f"t{i}", float(w)) for i, w in enumerate(work)]
        fleet = [FleetMember(f"d{i}", 1.0) for i in range(3)]
        greedy = makespan(balance_load(tasks, fleet), tasks, {m.drone_id: 1.0 for m in fleet})
        opt = _optimal_makespan(work)
        worst = max(worst, greedy / opt)
        within += greedy <= bound * opt + 1e-9
    verdict(10, "load-balance bound", within == 500,
            f"{within}/500 instances within {bound:.4f} x optimum (worst ratio {worst:.4f})")


# 11 --------------------------------------------------------------------------

def test_lifecycle_never_commences_early():
    steps = [("ack", "a"), ("ack", "b"), ("ack", "c"), ("session", ("a", "b")),
             ("session", ("a", "c")), ("permission", None)]
    paths = unsafe = 0
    for order in itertools.permutations(steps):
        for attempt_at in range(len(order) + 1):
            seq = list(order)
            seq.insert(attempt_at, ("commence", None))
            seq.append(("commence", None))
            lc = MissionLifecycle("m", "centralised")
            lc.generate_brief()
            lc.select_roster(["a", "b", "c"], Election(master="a"))
            acks, permitted = set(), False
            for kind, arg in seq:
                if kind == "ack":
                    lc.ack(arg)
                    acks.add(arg)
                elif kind == "session":
                    lc.session(*arg)
                elif kind == "permission":
                    lc.grant_permission()
                    permitted = True
                elif lc.commence().commenced and not (acks == {"a", "b", "c"} and permitted):
                    unsafe += 1
            paths += 1
            unsafe += lc.phase is not MissionPhase.COMMENCED
    verdict(11, "lifecycle safety", unsafe == 0 and paths == 5040,
            f"{paths} orderings enumerated, {unsafe} unsafe or stuck")


# 12 --------------------------------------------------------------------------

def test_handshake_success_rate():
    expected = 1 - (1 - 0.125) ** 4
    net = Network(0.5)
    net.add(RadioNode("a", (0.0, 0.0, 0.0), 100.0))
    net.add(RadioNode("b", (40.0, 0.0, 0.0), 100.0))
    rng = RngStream(2024, "handshake")
    ok = 0
    for _ in range(10_000):
        try:
            SessionTable().establish("a", "b", net, 0, rng)
            ok += 1
        except HandshakeFailed:
            pass
    rate = ok / 10_000
    verdict(12, "handshake statistics", abs(rate - expected) <= 0.02,
            f"rate {rate:.4f} vs analytic {expected:.4f}")


# 13 --------------------------------------------------------------------------

PEAK_RSS = """
import resource, sys
from sodsim.engine import Simulation
from sodsim.scenario import load_scenario
Simulation(load_scenario(sys.argv[1])).run()
print(resource.getrusage(resource.RUSAGE_SELF).ru_maxrss)
"""


def test_desk_scale_performance():
    path = SCENARIOS / "hybrid_performance.toml"
    spec = load_scenario(path)
    sc = spec.section("scenario")
    assert len(spec.drones) == 10 and spec.section("swarm")["sod_type"] == "hybrid"
    assert sc["stop"] == "ticks" and sc["max_ticks"] == 10_000

    start = time.perf_counter()
    report = Simulation(spec).run()
    elapsed = time.perf_counter() - start

    tracemalloc.start()
    Simulation(spec).run()
    _, traced_peak = tracemalloc.get_traced_memory()
    tracemalloc.stop()
    rss_kib = int(subprocess.run([sys.executable, "-c", PEAK_RSS, str(path)], capture_output=True,
                                 text=True, check=True).stdout.strip())
    rss_mb = rss_kib / 1024
    verdict(13, "desk-scale performance",
            report.end_tick == 10_000 and elapsed < 5.0 and rss_mb < 256,
            f"{report.end_tick} ticks in {elapsed:.2f}s, peak RSS {rss_mb:.0f} MB "
            f"(heap peak {traced_peak / 2 ** 20:.1f} MB)")
