"""Declarative scenario files.

A scenario is TOML with fixed section headers. Parsing is strict (unknown
keys are errors) and every default is written into the returned spec, so
``dump_scenario(parse_scenario(text))`` is a self-contained file that parses
back to an equal spec.
"""

from __future__ import annotations

import copy
import math
import re
from dataclasses import dataclass
from typing import Any, Callable, Dict, List, Optional, Tuple

import tomli
import tomli_w


class ParseError(ValueError):
    def __init__(self, message: str, line: int = 0, column: int = 0):
        self.message, self.line, self.column = message, line, column
        super().__init__(f"line {line}, column {column}: {message}" if line else message)


@dataclass(frozen=True)
class Field:
    kind: str
    default: Any = None
    check: Optional[Callable[[Any], bool]] = None
    legal: str = ""


REQUIRED = object()

unit = lambda v: 0.0 <= v <= 1.0
positive = lambda v: v > 0
non_negative = lambda v: v >= 0
at_least_one = lambda v: v >= 1


def one_of(*choices):
    return lambda v: v in choices


SECTIONS: Dict[str, Dict[str, Field]] = {
    "scenario": {
        "name": Field("str", "scenario"),
        "seed": Field("int", 0, lambda v: 0 <= v < 2 ** 64, "0 <= seed < 2^64"),
        "tick_seconds": Field("float", 1.0, positive, "> 0"),
        "max_ticks": Field("int", 1000, at_least_one, ">= 1"),
        "stop": Field("str", "mission", one_of("mission", "ticks"), "mission | ticks"),
        "organisation": Field("str", "org"),
        "report_interval": Field("int", 10, at_least_one, ">= 1"),
        "world": Field("box", [[-10000.0, -10000.0, 0.0], [10000.0, 10000.0, 1000.0]]),
    },
    "network": {
        "p_loss": Field("float", 0.0, unit, "[0, 1]"),
        "hop_latency": Field("int", 1, non_negative, ">= 0"),
    },
    "swarm": {
        "sod_type": Field("str", "static", one_of("static", "dynamic-closed", "dynamic-open", "hybrid"),
                          "static | dynamic-closed | dynamic-open | hybrid"),
        "topology": Field("str", "centralised", one_of("centralised", "decentralised", "distributed"),
                          "centralised | decentralised | distributed"),
        "clusters": Field("int", 1, at_least_one, ">= 1"),
        "w_core": Field("float", 2.0, positive, "> 0"),
    },
    "params": {
        "p_hover": Field("float", 100.0, non_negative, ">= 0"),
        "p_cruise": Field("float", 20.0, non_negative, ">= 0"),
        "e_compute": Field("float", 0.01, non_negative, ">= 0"),
        "e_radio": Field("float", 1e-5, non_negative, ">= 0"),
        "theta_disengage": Field("float", 0.3, unit, "[0, 1]"),
        "theta_sacrifice": Field("float", 0.8, unit, "[0, 1]"),
        "theta_cont": Field("float", 0.6, unit, "[0, 1]"),
        "tau": Field("float", 0.5, lambda v: 0 < v <= 1, "(0, 1]"),
        "free_rider_windows": Field("int", 3, at_least_one, ">= 1"),
        "window": Field("int", 100, at_least_one, ">= 1"),
        "sigma": Field("float", 0.8, unit, "[0, 1]"),
        "adopt_score": Field("float", 0.5, unit, "[0, 1]"),
        "d_congest": Field("float", 200.0, positive, "> 0"),
        "congestion_threshold": Field("int", 3, non_negative, ">= 0"),
        "avoid_margin": Field("float", 5.0, non_negative, ">= 0"),
        "kb_replicas": Field("int", 3, at_least_one, ">= 1"),
        "cruise_speed": Field("float", 10.0, positive, "> 0"),
        "report_bytes": Field("int", 64, at_least_one, ">= 1"),
    },
    "mission": {
        "id": Field("str", "mission-1"),
        "permission": Field("bool", True),
        "selection": Field("str", "all", one_of("all", "greedy"), "all | greedy"),
        "preferences": Field("strlist", []),
        "security": Field("intervals", {}),
        "commitments": Field("strlist", []),
    },
    "airspace": {
        "intervals": Field("intervals", {}),
        "allowed": Field("polygons", []),
        "forbidden": Field("polygons", []),
    },
}

ARRAYS: Dict[str, Dict[str, Field]] = {
    "gcs": {
        "id": Field("str", REQUIRED),
        "position": Field("vec3", [0.0, 0.0, 0.0]),
        "range": Field("float", 1000.0, positive, "> 0"),
    },
    "drone": {
        "id": Field("str", REQUIRED),
        "organisation": Field("str", ""),
        "position": Field("vec3", [0.0, 0.0, 0.0]),
        "home": Field("vec3", []),
        "range": Field("float", 500.0, positive, "> 0"),
        "max_speed": Field("float", 10.0, positive, "> 0"),
        "capacity": Field("float", 500000.0, positive, "> 0"),
        "reserve": Field("float", 50000.0, non_negative, ">= 0"),
        "compute": Field("float", 10.0, non_negative, ">= 0"),
        "health": Field("float", 1.0, unit, "[0, 1]"),
        "sensors": Field("strlist", []),
        "sensor_range": Field("float", 50.0, non_negative, ">= 0"),
        "delivery_ratio": Field("float", 1.0, unit, "[0, 1]"),
        "ring": Field("str", "core", one_of("core", "extended"), "core | extended"),
        "attestation_until": Field("int", 10 ** 9),
        "initial": Field("bool", True),
        "policy": Field("intervals", {}),
    },
    "objective": {
        "id": Field("str", REQUIRED),
        "capability": Field("str", REQUIRED),
        "area": Field("vec3", REQUIRED),
        "work": Field("float", 100.0, positive, "> 0"),
        "capacity": Field("float", 1.0, non_negative, ">= 0"),
        "criticality": Field("float", 0.5, unit, "[0, 1]"),
        "deadline": Field("int", 0, non_negative, ">= 0"),
    },
    "jamming": {
        "center": Field("vec3", REQUIRED),
        "radius": Field("float", REQUIRED, positive, "> 0"),
        "start": Field("int", REQUIRED, non_negative, ">= 0"),
        "end": Field("int", REQUIRED, non_negative, ">= 0"),
    },
    "ethics": {
        "id": Field("str", REQUIRED),
        "kind": Field("str", REQUIRED, one_of("max_sacrifice", "forbid_action"),
                      "max_sacrifice | forbid_action"),
        "value": Field("scalar", REQUIRED),
    },
    "traffic": {
        "waypoints": Field("timed", REQUIRED),
    },
}

EVENT_KINDS = {
    "capture": ("target",),
    "enrol": ("target",),
    "leave": ("target",),
    "obstacle": ("obstacle_id", "position", "radius"),
    "injunction": ("intervals", "allowed", "forbidden"),
}
EVENT_FIELDS: Dict[str, Field] = {
    "tick": Field("int", REQUIRED, non_negative, ">= 0"),
    "kind": Field("str", REQUIRED, one_of(*EVENT_KINDS), " | ".join(EVENT_KINDS)),
    "target": Field("str", REQUIRED),
    "obstacle_id": Field("str", REQUIRED),
    "position": Field("vec3", REQUIRED),
    "radius": Field("float", REQUIRED, positive, "> 0"),
    "intervals": Field("intervals", {}),
    "allowed": Field("polygons", []),
    "forbidden": Field("polygons", []),
}

TOP_ARRAYS = ("gcs", "drone", "event", "ethics", "traffic")


def _locate(text: str, key: str) -> Tuple[int, int]:
    pattern = re.compile(r"^\s*(\[\[?\s*)?(?:[\w.\"-]*\.)?" + re.escape(key) + r"\b")
    for n, line in enumerate(text.splitlines(), 1):
        m = pattern.search(line)
        if m:
            return n, line.index(key, m.start()) + 1
    for n, line in enumerate(text.splitlines(), 1):
        if key in line:
            return n, line.index(key) + 1
    return 0, 0


def _num(v):
    return isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v)


def _coerce(kind: str, value: Any) -> Any:
    if kind == "int":
        if isinstance(value, bool) or not isinstance(value, int):
            raise TypeError("expected an integer")
        return value
    if kind == "float":
        if not _num(value):
            raise TypeError("expected a finite number")
        return float(value)
    if kind == "str":
        if not isinstance(value, str):
            raise TypeError("expected a string")
        return value
    if kind == "bool":
        if not isinstance(value, bool):
            raise TypeError("expected true or false")
        return value
    if kind == "scalar":
        if isinstance(value, bool) or not isinstance(value, (int, str)):
            raise TypeError("expected an integer or a string")
        return value
    if kind == "strlist":
        if not isinstance(value, list) or not all(isinstance(v, str) for v in value):
            raise TypeError("expected a list of strings")
        return list(value)
    if kind == "vec3":
        if value == []:
            return []
        if not isinstance(value, list) or len(value) != 3 or not all(_num(v) for v in value):
            raise TypeError("expected [x, y, z]")
        return [float(v) for v in value]
    if kind == "box":
        if not isinstance(value, list) or len(value) != 2:
            raise TypeError("expected [[xmin, ymin, zmin], [xmax, ymax, zmax]]")
        lo, hi = _coerce("vec3", value[0]), _coerce("vec3", value[1])
        if any(a >= b for a, b in zip(lo, hi)):
            raise TypeError("world box must have min < max on every axis")
        return [lo, hi]
    if kind == "intervals":
        if not isinstance(value, dict):
            raise TypeError("expected a table of name = [lo, hi]")
        out = {}
        for k, iv in value.items():
            if not isinstance(iv, list) or len(iv) != 2 or not all(_num(v) for v in iv) or iv[0] > iv[1]:
                raise TypeError(f"interval {k!r} must be [lo, hi] with lo <= hi")
            out[k] = [float(iv[0]), float(iv[1])]
        return out
    if kind == "polygons":
        if not isinstance(value, list):
            raise TypeError("expected a list of polygons")
        out = []
        for poly in value:
            if not isinstance(poly, list) or len(poly) < 3 or not all(
                    isinstance(p, list) and len(p) == 2 and all(_num(c) for c in p) for p in poly):
                raise TypeError("a polygon is a list of >= 3 [x, y] vertices")
            out.append([[float(x), float(y)] for x, y in poly])
        return out
    if kind == "timed":
        if not isinstance(value, list) or len(value) < 2 or not all(
                isinstance(p, list) and len(p) == 4 and all(_num(c) for c in p) for p in value):
            raise TypeError("traffic waypoints are >= 2 entries of [x, y, z, tick]")
        return [[float(c) for c in p] for p in value]
    raise AssertionError(kind)


def _fill(table: Any, schema: Dict[str, Field], where: str, text: str,
          keys: Optional[Tuple[str, ...]] = None) -> Dict[str, Any]:
    if not isinstance(table, dict):
        raise ParseError(f"[{where}] must be a table", *_locate(text, where.split(".")[-1]))
    allowed = set(keys) if keys is not None else set(schema)
    for key in table:
        if key not in allowed:
            raise ParseError(f"unknown key {key!r} in [{where}]", *_locate(text, key))
    out = {}
    for key in (keys if keys is not None else schema):
        f = schema[key]
        if key in table:
            try:
                value = _coerce(f.kind, table[key])
            except TypeError as exc:
                raise ParseError(f"{where}.{key}: {exc}", *_locate(text, key)) from None
            if f.check is not None and not f.check(value):
                raise ParseError(f"{where}.{key} = {table[key]!r} is outside its legal range ({f.legal})",
                                 *_locate(text, key))
            out[key] = value
        elif f.default is REQUIRED:
            raise ParseError(f"missing required key {key!r} in [{where}]", *_locate(text, where.split(".")[-1]))
        else:
            out[key] = copy.deepcopy(f.default)
    return out


def _array(raw: Any, name: str, schema, text: str) -> List[Dict[str, Any]]:
    if raw is None:
        return []
    if not isinstance(raw, list):
        raise ParseError(f"{name} must be an array of tables ([[{name}]])", *_locate(text, name))
    return [_fill(item, schema, name, text) for item in raw]


@dataclass(eq=True)
class ScenarioSpec:
    """A fully materialised scenario (plain data, every default filled in)."""
    data: Dict[str, Any]

    def section(self, name: str) -> Dict[str, Any]:
        return self.data[name]

    @property
    def seed(self) -> int:
        return self.data["scenario"]["seed"]

    def with_seed(self, seed: int) -> "ScenarioSpec":
        data = copy.deepcopy(self.data)
        data["scenario"]["seed"] = int(seed)
        return ScenarioSpec(data)

    @property
    def drones(self) -> List[Dict[str, Any]]:
        return self.data["drone"]

    @property
    def events(self) -> List[Dict[str, Any]]:
        return self.data["event"]


def parse_scenario(text: str) -> ScenarioSpec:
    try:
        raw = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ParseError(str(exc).split(" (at line")[0], getattr(exc, "lineno", 0) or 0,
                         getattr(exc, "colno", 0) or 0) from None
    known = set(SECTIONS) | set(TOP_ARRAYS)
    for key in raw:
        if key not in known:
            raise ParseError(f"unknown key {key!r}", *_locate(text, key))

    data: Dict[str, Any] = {}
    for name, schema in SECTIONS.items():
        section = dict(raw.get(name, {})) if isinstance(raw.get(name, {}), dict) else raw[name]
        nested = {}
        if name == "network" and isinstance(section, dict):
            nested["jamming"] = _array(section.pop("jamming", None), "jamming", ARRAYS["jamming"], text)
        if name == "mission" and isinstance(section, dict):
            nested["objective"] = _array(section.pop("objective", None), "objective",
                                         ARRAYS["objective"], text)
        data[name] = _fill(section, schema, name, text)
        data[name].update(nested)
    for name in ("gcs", "drone", "ethics", "traffic"):
        data[name] = _array(raw.get(name), name, ARRAYS[name], text)
    for d in data["drone"]:
        d["organisation"] = d["organisation"] or data["scenario"]["organisation"]
        d["home"] = d["home"] or list(d["position"])
    for rule in data["ethics"]:
        if rule["kind"] == "max_sacrifice" and not isinstance(rule["value"], int):
            raise ParseError(f"ethics {rule['id']}: max_sacrifice needs an integer value",
                             *_locate(text, "value"))

    events = []
    for item in raw.get("event", []) or []:
        if not isinstance(item, dict):
            raise ParseError("event must be an array of tables ([[event]])", *_locate(text, "event"))
        kind = item.get("kind")
        if kind not in EVENT_KINDS:
            raise ParseError(f"event kind {kind!r} is not one of {sorted(EVENT_KINDS)}",
                             *_locate(text, "kind"))
        events.append(_fill(item, EVENT_FIELDS, "event", text, ("tick", "kind") + EVENT_KINDS[kind]))
    data["event"] = events

    _validate(data, text)
    return ScenarioSpec(data)


def _validate(data: Dict[str, Any], text: str) -> None:
    drones = [d["id"] for d in data["drone"]]
    gcs = [g["id"] for g in data["gcs"]]
    ids = drones + gcs
    dupes = sorted({i for i in ids if ids.count(i) > 1})
    if dupes:
        raise ParseError(f"duplicate node id {dupes[0]!r}", *_locate(text, dupes[0]))
    if not data["drone"]:
        raise ParseError("a scenario needs at least one [[drone]]")
    if not data["mission"]["objective"]:
        raise ParseError("a scenario needs at least one [[mission.objective]]")
    objectives = [o["id"] for o in data["mission"]["objective"]]
    if len(set(objectives)) != len(objectives):
        raise ParseError("duplicate objective id")
    for d in data["drone"]:
        if d["reserve"] > d["capacity"]:
            raise ParseError(f"drone {d['id']}: reserve exceeds capacity", *_locate(text, "reserve"))
        if d["ring"] == "extended" and data["swarm"]["sod_type"] != "hybrid":
            raise ParseError(f"drone {d['id']}: only hybrid swarms have an extended ring",
                             *_locate(text, "ring"))
    if data["swarm"]["sod_type"] == "hybrid" and not data["swarm"]["w_core"] > 1:
        raise ParseError("swarm.w_core must be > 1 for hybrid swarms", *_locate(text, "w_core"))
    for j in data["network"]["jamming"]:
        if j["start"] > j["end"]:
            raise ParseError("jamming start must be <= end", *_locate(text, "start"))
    for p in data["mission"]["preferences"]:
        if p not in drones:
            raise ParseError(f"preference names unknown drone {p!r}", *_locate(text, "preferences"))
    ticks = [e["tick"] for e in data["event"]]
    if ticks != sorted(ticks):
        raise ParseError("event timeline must be sorted by tick", *_locate(text, "event"))
    for e in data["event"]:
        if "target" in e and e["target"] not in drones:
            raise ParseError(f"event targets unknown drone {e['target']!r}", *_locate(text, e["target"]))
        if e["tick"] > data["scenario"]["max_ticks"]:
            raise ParseError(f"event at tick {e['tick']} is past max_ticks", *_locate(text, "tick"))
    initial = {d["id"] for d in data["drone"] if d["initial"]}
    for e in data["event"]:
        if e["kind"] == "enrol" and e["target"] in initial:
            raise ParseError(f"enrol event targets initial drone {e['target']!r}",
                             *_locate(text, e["target"]))
    if not initial:
        raise ParseError("at least one drone must have initial = true")


def dump_scenario(spec: ScenarioSpec) -> str:
    data = copy.deepcopy(spec.data)
    out: Dict[str, Any] = {}
    for name in SECTIONS:
        out[name] = data[name]
    for name in TOP_ARRAYS:
        if data[name]:
            out[name] = data[name]
    return tomli_w.dumps(out)


def load_scenario(path) -> ScenarioSpec:
    with open(path, encoding="utf-8") as fh:
        return parse_scenario(fh.read())
