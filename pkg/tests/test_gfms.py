from __future__ import annotations

import itertools
import random

import pytest

from sodsim.gfms import (Inventory, InventoryItem, MissionLifecycle, MissionPhase, PhaseError,
                         consolidate_knowledge, debrief, outcome_score, required_sessions,
                         select_drones, upload_brief)
from sodsim.knowledge import KnowledgeStore, PrecedentRecord, make_signature
from sodsim.membership import Election
from sodsim.swarm import KnowledgeShards


def _item(i, caps, compute=1.0):
    return InventoryItem(f"d{i}", frozenset(caps), compute)


def test_one_capable_drone_is_enough():
    sel = select_drones({"camera": 1, "thermal": 1}, [_item(0, {"camera", "thermal"}), _item(1, {"lidar"})])
    assert sel.feasible and sel.roster == ("d0",)


def test_missing_capability_is_infeasible():
    sel = select_drones({"sonar": 1}, [_item(0, {"camera"})])
    assert not sel.feasible and sel.uncovered == ("sonar",)


def _covers(req, items):
    need = dict(req)
    for it in items:
        for c in it.capabilities:
            if c in need:
                need[c] -= it.compute
    return all(v <= 1e-12 for v in need.values())


def test_greedy_cover_is_valid_and_near_minimal():
    rng = random.Random(4)
    for _ in range(150):
        inv = [_item(i, rng.sample(["camera", "thermal", "lidar", "relay"], rng.randint(1, 3)),
                     rng.choice([1.0, 2.0])) for i in range(rng.randint(2, 10))]
        req = {"camera": 2.0, "thermal": 1.0}
        sel = select_drones(req, inv)
        best = None
        for size in range(1, len(inv) + 1):
            if any(_covers(req, combo) for combo in itertools.combinations(inv, size)):
                best = size
                break
        assert sel.feasible == (best is not None)
        if sel.feasible:
            chosen = [i for i in inv if i.drone_id in sel.roster]
            assert _covers(req, chosen)
            harmonic = sum(1 / k for k in range(1, 4))  # max per-drone coverage is 3 units
            assert best <= len(sel.roster) <= best * harmonic + 1e-9


def test_unreachable_drone_is_dropped():
    up = upload_brief(["a", "b", "c"], lambda d: d != "b")
    assert up.acks == ("a", "c") and up.dropped == ("b",)


def test_inventory_refuses_double_booking():
    inv = Inventory([_item(0, {"camera"}), _item(1, {"camera"})])
    inv.reserve("m1", ["d0"])
    with pytest.raises(PhaseError):
        inv.reserve("m2", ["d0", "d1"])
    assert [i.drone_id for i in inv.available()] == ["d1"]
    inv.release("m1")
    inv.reserve("m2", ["d0"])


def _prepared(topology="centralised"):
    lc = MissionLifecycle("m", topology)
    lc.generate_brief()
    lc.select_roster(["a", "b", "c"], Election(master="a"))
    return lc


def test_all_sessions_and_permission_commence():
    lc = _prepared()
    for d in "abc":
        lc.ack(d)
    lc.session("a", "b")
    lc.session("a", "c")
    lc.grant_permission()
    assert lc.commence().commenced and lc.phase is MissionPhase.COMMENCED


def test_missing_permission_refuses():
    lc = _prepared()
    for d in "abc":
        lc.ack(d)
    lc.session("a", "b")
    lc.session("a", "c")
    assert lc.commence().reason == "NoPermission"


def test_exhaustive_orderings_never_commence_early():
    """Every interleaving of ACKs, session events, permission and commence attempts."""
    events = [("ack", "a"), ("ack", "b"), ("ack", "c"), ("session", ("a", "b")),
              ("session", ("a", "c")), ("permission", None)]
    paths = 0
    for order in itertools.permutations(events):
        for slot in range(len(order) + 1):
            seq = list(order[:slot]) + [("commence", None)] + list(order[slot:]) + [("commence", None)]
            lc = _prepared()
            acks, sessions, permission = set(), set(), False
            for kind, arg in seq:
                if kind == "ack":
                    lc.ack(arg)
                    acks.add(arg)
                elif kind == "session":
                    lc.session(*arg)
                    sessions.add(arg)
                elif kind == "permission":
                    lc.grant_permission()
                    permission = True
                else:
                    ok = lc.commence().commenced
                    ready = acks == {"a", "b", "c"} and len(sessions) == 2 and permission
                    assert ok == (ready or lc.phase is MissionPhase.COMMENCED and ok)
                    if not ready:
                        assert not ok
            assert lc.phase is MissionPhase.COMMENCED
            for phase, acked, perm in lc.history:
                if phase is MissionPhase.COMMENCED:
                    assert acked == {"a", "b", "c"} and perm
            paths += 1
    assert paths == 720 * 7


def test_phases_only_move_forward():
    lc = MissionLifecycle("m")
    with pytest.raises(PhaseError):
        lc.returned()
    lc.generate_brief()
    with pytest.raises(PhaseError):
        lc.generate_brief()


def test_required_sessions_per_topology():
    roster = ["a", "b", "c", "d"]
    assert required_sessions("centralised", roster, Election(master="b")) == {("a", "b"), ("b", "c"), ("b", "d")}
    e = Election(heads=("a", "c"), attachment={"a": "a", "b": "a", "c": "c", "d": "c"})
    assert required_sessions("decentralised", roster, e) == {("a", "c"), ("a", "b"), ("c", "d")}
    assert required_sessions("distributed", roster, Election()) is None


def _prec(tick, mission="m"):
    return PrecedentRecord(make_signature({"kind:x", f"phase:t{tick}"}), "go", 0.0, mission, tick)


def test_debrief_without_decisions_has_no_precedents():
    report = debrief("m", ["a", "b"], ["a", "b"], KnowledgeShards(), {"o1": 5})
    assert report.precedents == [] and report.missing_logs == [] and report.completion == 1.0


def test_outcome_score_counts_post_decision_completions():
    completions = {"o1": 12, "o2": 15, "o3": 20, "o4": 3}
    assert outcome_score(10, completions) == 0.75
    shards = KnowledgeShards(3)
    shards.learn(_prec(10), ["a", "b"])
    report = debrief("m", ["a", "b"], ["a", "b"], shards, completions)
    assert [r.outcome for r in report.precedents] == [0.75]


def test_captured_holder_record_survives_through_replicas():
    shards = KnowledgeShards(3)
    ids = ["a", "b", "c", "d"]
    holders = shards.learn(_prec(1), ids)
    lost = holders[0]
    report = debrief("m", ids, [d for d in ids if d != lost], shards, {"o": 4})
    assert report.missing_logs == [lost] and len(report.precedents) == 1


def test_reconsolidation_is_idempotent(tmp_path):
    store = KnowledgeStore(tmp_path / "kb")
    shards = KnowledgeShards(3)
    shards.learn(_prec(1), ["a"])
    report = debrief("m", ["a"], ["a"], shards, {"o": 4})
    assert consolidate_knowledge(report, store) == 1
    assert consolidate_knowledge(report, store) == 0
    assert len(store.load()) == 1
