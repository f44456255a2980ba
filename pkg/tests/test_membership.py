from __future__ import annotations

import math

import pytest

from sodsim.fleet import Attestation, SessionTable
from sodsim.membership import (CHALLENGES, CORE, EXTENDED, Candidate, MemberInfo, NoProposals,
                               Swarm, SwarmConfig, UnknownKey, aggregate_votes,
                               challenge_importance, dump_matrix, elect, enrol, leave)
from sodsim.policy import PolicySet
from sodsim.swarm import ContributionLedger

TOKENS = {d: Attestation(d, 1000) for d in ["a", "b", "c", "x", "y", "z"]}


def _swarm(kind, members=("a", "b"), commenced=False, topology="distributed"):
    sw = Swarm(SwarmConfig(kind, topology), "org", PolicySet.build({"altitude": [0, 120]}))
    for m in members:
        sw.add(m, CORE, 0)
    if commenced:
        sw.commence()
    return sw


def test_static_swarm_locks_at_commencement():
    sw = _swarm("static", commenced=True)
    assert enrol(sw, Candidate("x", "org"), 5, TOKENS).reason == "locked"
    assert "x" not in sw.members


def test_static_swarm_admits_before_commencement():
    sw = _swarm("static")
    assert enrol(sw, Candidate("x", "org"), 0, TOKENS).admitted


def test_closed_dynamic_rejects_foreign_organisation():
    sw = _swarm("dynamic-closed", commenced=True)
    assert enrol(sw, Candidate("x", "rival"), 5, TOKENS).reason == "organisation"
    assert enrol(sw, Candidate("y", "org"), 5, TOKENS).admitted


def test_hybrid_in_flight_joiner_goes_to_extended_ring():
    sw = _swarm("hybrid", commenced=True)
    adm = enrol(sw, Candidate("x", "partner"), 5, TOKENS)
    assert adm.admitted and adm.ring == EXTENDED
    assert sw.core == ["a", "b"] and sw.extended == ["x"]


def test_rejection_reasons():
    sw = _swarm("dynamic-open", commenced=True)
    assert enrol(sw, Candidate("nobody", "org"), 5, TOKENS).reason == "attestation"
    bad = PolicySet.build({"altitude": [200, 300]})
    assert enrol(sw, Candidate("x", "org", bad), 5, TOKENS).reason == "policy"
    assert enrol(sw, Candidate("y", "org"), 5, TOKENS, connect=lambda c: False).reason == "channel"


def test_extended_member_leaving_keeps_core():
    sw = _swarm("hybrid", commenced=True)
    enrol(sw, Candidate("x", "partner"), 5, TOKENS)
    dep = leave(sw, "x", 9, SessionTable(), ContributionLedger())
    assert dep.ring == EXTENDED and not dep.reelect and sw.core == ["a", "b"]


def test_master_leaving_triggers_election_of_next_best_core():
    sw = _swarm("static", members=("a", "b", "c"), commenced=True, topology="centralised")
    compute = {"a": 10, "b": 8, "c": 8}
    sw.election = elect("centralised", [MemberInfo(d, compute[d]) for d in sw.members])
    assert sw.election.master == "a"
    dep = leave(sw, "a", 3)
    assert dep.reelect
    assert elect("centralised", [MemberInfo(d, compute[d]) for d in sw.core]).master == "b"


def test_static_leave_before_commencement_is_allowed():
    sw = _swarm("static")
    leave(sw, "a", 0)
    assert list(sw.members) == ["b"]


def test_master_is_top_capacity_with_lowest_id_tie_break():
    e = elect("centralised", [MemberInfo("B", 10), MemberInfo("A", 10), MemberInfo("C", 5)])
    assert e.master == "A" and e.heads == ()


def test_cluster_heads_and_nearest_attachment_on_a_line():
    members = [MemberInfo(f"m{i}", c, (100.0 * i, 0, 0)) for i, c in enumerate([3, 9, 1, 4, 8, 2])]
    e = elect("decentralised", members, clusters=2)
    top = sorted(members, key=lambda m: (-m.compute, m.drone_id))[:2]
    assert set(e.heads) == {m.drone_id for m in top}
    for m in members:
        nearest = min(top, key=lambda h: (math.dist(h.position, m.position), h.drone_id))
        assert e.attachment[m.drone_id] == nearest.drone_id


def test_distributed_assigns_no_roles():
    e = elect("distributed", [MemberInfo("a", 1), MemberInfo("b", 2)])
    assert e.master is None and e.heads == () and e.roles_of("a") == set()


def test_unanimous_vote_wins_in_every_topology():
    ballots = {d: "X" for d in "abcd"}
    for topo in ("centralised", "decentralised", "distributed"):
        assert aggregate_votes(topo, ballots) == "X"


def test_weighted_core_beats_larger_extended_ring():
    ballots = {f"c{i}": "A" for i in range(3)} | {f"e{i}": "B" for i in range(5)}
    weights = {d: 2.0 if d.startswith("c") else 1.0 for d in ballots}
    assert aggregate_votes("distributed", ballots, weights) == "A"


def test_even_split_goes_to_lower_option():
    ballots = {f"a{i}": "Q" for i in range(4)} | {f"b{i}": "P" for i in range(4)}
    assert aggregate_votes("distributed", ballots) == "P"


def test_no_ballots_is_an_error():
    with pytest.raises(NoProposals):
        aggregate_votes("distributed", {})


def test_hybrid_weights_follow_ring_and_free_riding():
    sw = _swarm("hybrid", commenced=True)
    enrol(sw, Candidate("x", "partner"), 5, TOKENS)
    sw.free_riders.add("b")
    assert sw.weights() == {"a": 2.0, "b": 0.0, "x": 1.0}


def test_table_examples():
    assert challenge_importance("static", "centralised", "SP1") == 2
    assert challenge_importance("Dynamic", "Decentralised", "SP4") == 5
    assert challenge_importance("static", "centralised", "SP2") == 1
    assert challenge_importance("dynamic-open", "distributed", "sp3") == 5
    with pytest.raises(UnknownKey):
        challenge_importance("static", "centralised", "SP9")


def test_dumped_table_has_54_rows():
    rows = dump_matrix().splitlines()
    assert rows[0] == "sod_type,topology,challenge,importance" and len(rows) == 55
    assert "Static,Centralised,SP3,4" in rows and "Hybrid,Distributed,PE2,5" in rows
    assert {r.split(",")[2] for r in rows[1:]} == set(CHALLENGES)
