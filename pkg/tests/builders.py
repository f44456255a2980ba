"""Small helpers that write scenario TOML for tests."""

from __future__ import annotations

import random
from typing import Dict

import tomli_w

from sodsim.scenario import parse_scenario


def scenario_dict(drones: int = 3, objectives: int = 2, seed: int = 0, **sections) -> Dict:
    data = {
        "scenario": {"name": "t", "seed": seed, "max_ticks": 600},
        "mission": {"id": "m", "objective": [
            {"id": f"o{i}", "capability": "camera", "area": [60.0 * (i + 1), 0.0, 20.0],
             "work": 400.0} for i in range(objectives)]},
        "gcs": [{"id": "gcs", "position": [0.0, 0.0, 0.0]}],
        "drone": [{"id": f"d{i}", "position": [5.0 * i, 0.0, 0.0], "sensors": ["camera"]}
                  for i in range(drones)],
    }
    for name, value in sections.items():
        if isinstance(value, dict) and isinstance(data.get(name), dict):
            data[name].update(value)
        else:
            data[name] = value
    return data


def spec_from(data: Dict):
    return parse_scenario(tomli_w.dumps(data))


def random_scenario(rng: random.Random, index: int) -> Dict:
    """A varied but always-valid scenario exercising most event kinds."""
    n = rng.randint(2, 6)
    sod = rng.choice(["static", "dynamic-closed", "dynamic-open", "hybrid"])
    topo = rng.choice(["centralised", "decentralised", "distributed"])
    drones = []
    for i in range(n + 2):
        d = {"id": f"d{i}", "position": [rng.uniform(-30, 30), rng.uniform(-30, 30), 0.0],
             "sensors": rng.sample(["camera", "thermal", "lidar"], rng.randint(1, 2)) + ["camera"],
             "compute": float(rng.randint(5, 15)), "initial": i < n,
             "organisation": rng.choice(["org", "org", "other"]),
             "delivery_ratio": rng.choice([1.0, 0.95, 0.3])}
        d["sensors"] = sorted(set(d["sensors"]))
        if sod == "hybrid" and i < n and i % 2:
            d["ring"] = "extended"
        drones.append(d)
    objectives = [{"id": f"o{k}", "capability": rng.choice(["camera", "thermal"]),
                   "area": [rng.uniform(-200, 200), rng.uniform(-200, 200), 30.0],
                   "work": float(rng.randint(200, 1500)), "capacity": 2.0,
                   "criticality": rng.choice([0.3, 0.5, 0.9])} for k in range(rng.randint(1, 4))]
    events = []
    for i in range(n, n + 2):
        events.append({"tick": rng.randint(5, 80), "kind": "enrol", "target": f"d{i}"})
    if rng.random() < 0.6:
        events.append({"tick": rng.randint(20, 150), "kind": "capture", "target": f"d{rng.randrange(n)}"})
    if rng.random() < 0.5:
        events.append({"tick": rng.randint(1, 100), "kind": "obstacle", "obstacle_id": "ob",
                       "position": [rng.uniform(-100, 100), rng.uniform(-100, 100), 30.0],
                       "radius": 10.0})
    events.sort(key=lambda e: e["tick"])
    data = {
        "scenario": {"name": f"fuzz-{index}", "seed": rng.randrange(1000), "max_ticks": 800},
        "network": {"p_loss": rng.choice([0.0, 0.05, 0.2])},
        "swarm": {"sod_type": sod, "topology": topo, "clusters": rng.randint(1, 2)},
        "mission": {"id": f"mission-{index}", "objective": objectives},
        "gcs": [{"id": "gcs", "position": [0.0, 0.0, 0.0]}],
        "drone": drones,
        "event": events,
    }
    if rng.random() < 0.4:
        data["network"]["jamming"] = [{"center": [0.0, 0.0, 0.0], "radius": 50.0,
                                       "start": rng.randint(10, 50), "end": rng.randint(60, 120)}]
    return data
