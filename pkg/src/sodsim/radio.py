"""Simulated wireless medium.

Links are symmetric: two nodes are linked iff their Euclidean distance is at
most ``min(range_a, range_b)`` and neither endpoint sits inside a jamming
region active at the queried tick. Routing is minimum-hop with the
lexicographically smallest node-id sequence as tie-break.
"""

from __future__ import annotations

import itertools
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Set, Tuple

Vec3 = Tuple[float, float, float]

BROADCAST = "*"


class UnknownNode(KeyError):
    pass


def distance(a: Sequence[float], b: Sequence[float]) -> float:
    return math.dist(a, b)


@dataclass
class RadioNode:
    node_id: str
    position: Vec3
    radio_range: float
    organisation: str = ""
    kind: str = "drone"

    def __post_init__(self):
        if not self.radio_range > 0:
            raise ValueError(f"{self.node_id}: radio range must be positive")
        self.position = tuple(float(c) for c in self.position)
        if not all(math.isfinite(c) for c in self.position):
            raise ValueError(f"{self.node_id}: non-finite position")


@dataclass(frozen=True)
class JammingRegion:
    center: Vec3
    radius: float
    start: int
    end: int

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError("jamming radius must be positive")
        if self.start > self.end:
            raise ValueError("jamming interval start must be <= end")

    def active(self, tick: int) -> bool:
        return self.start <= tick <= self.end

    def covers(self, position: Sequence[float]) -> bool:
        return distance(self.center, position) <= self.radius


_msg_ids = itertools.count(1)


@dataclass
class NetMessage:
    source: str
    destination: str
    kind: str
    size: int
    session: Optional[str] = None
    hops: List[str] = field(default_factory=list)
    message_id: int = field(default_factory=lambda: next(_msg_ids))

    def __post_init__(self):
        if self.size <= 0:
            raise ValueError("message size must be positive")


@dataclass(frozen=True)
class Delivery:
    status: str  # "delivered" | "lost" | "unreachable"
    tick: Optional[int] = None
    path: Tuple[str, ...] = ()

    @property
    def delivered(self) -> bool:
        return self.status == "delivered"


LOST = "lost"
DELIVERED = "delivered"
UNREACHABLE = "unreachable"


class Network:
    """The link graph at a given tick, plus loss and latency parameters."""

    def __init__(self, p_loss: float = 0.0, hop_latency: int = 1,
                 jamming: Iterable[JammingRegion] = ()):
        if not 0.0 <= p_loss <= 1.0:
            raise ValueError("p_loss must be in [0, 1]")
        self.p_loss = float(p_loss)
        self.hop_latency = int(hop_latency)
        self.nodes: Dict[str, RadioNode] = {}
        self.jamming: List[JammingRegion] = list(jamming)
        self.captured: Set[str] = set()

    def add(self, node: RadioNode) -> None:
        self.nodes[node.node_id] = node

    def remove(self, node_id: str) -> None:
        self.nodes.pop(node_id, None)

    def move(self, node_id: str, position: Vec3) -> None:
        self._node(node_id).position = tuple(position)

    def _node(self, node_id: str) -> RadioNode:
        try:
            return self.nodes[node_id]
        except KeyError:
            raise UnknownNode(node_id) from None

    def jammed(self, node_id: str, tick: int) -> bool:
        pos = self._node(node_id).position
        return any(j.active(tick) and j.covers(pos) for j in self.jamming)

    def linked(self, a: str, b: str, tick: int = 0) -> bool:
        na, nb = self._node(a), self._node(b)
        if a == b or a in self.captured or b in self.captured:
            return False
        if distance(na.position, nb.position) > min(na.radio_range, nb.radio_range):
            return False
        return not (self.jammed(a, tick) or self.jammed(b, tick))

    def neighbors(self, node_id: str, tick: int = 0) -> Set[str]:
        self._node(node_id)
        if node_id in self.captured or self.jammed(node_id, tick):
            return set()
        return {other for other in self.nodes if self.linked(node_id, other, tick)}

    def adjacency(self, tick: int = 0) -> Dict[str, List[str]]:
        ids = sorted(self.nodes)
        adj: Dict[str, List[str]] = {i: [] for i in ids}
        live = [i for i in ids if i not in self.captured and not self.jammed(i, tick)]
        for a, b in itertools.combinations(live, 2):
            na, nb = self.nodes[a], self.nodes[b]
            if distance(na.position, nb.position) <= min(na.radio_range, nb.radio_range):
                adj[a].append(b)
                adj[b].append(a)
        return adj

    def route(self, source: str, dest: str, tick: int = 0,
              adjacency: Optional[Dict[str, List[str]]] = None) -> Optional[List[str]]:
        """Minimum-hop path from ``source`` to ``dest``, or None if unreachable.

        A BFS from the destination yields hop distances; walking forward from
        the source and always taking the smallest neighbour one hop closer
        gives the lexicographically smallest shortest path.
        """
        self._node(source)
        self._node(dest)
        if source == dest:
            return [source]
        adj = adjacency if adjacency is not None else self.adjacency(tick)
        dist = {dest: 0}
        queue = deque([dest])
        while queue and source not in dist:
            u = queue.popleft()
            for v in adj[u]:
                if v not in dist:
                    dist[v] = dist[u] + 1
                    queue.append(v)
        if source not in dist:
            return None
        path = [source]
        while path[-1] != dest:
            here = path[-1]
            path.append(min(v for v in adj[here] if dist.get(v) == dist[here] - 1))
        return path

    def deliver(self, msg: NetMessage, tick: int, rng=None,
                adjacency: Optional[Dict[str, List[str]]] = None) -> Delivery:
        """Unicast delivery; each hop is independently lost with ``p_loss``."""
        path = self.route(msg.source, msg.destination, tick, adjacency)
        if path is None:
            return Delivery(UNREACHABLE)
        msg.hops = list(path)
        for _ in range(len(path) - 1):
            if self._lost(rng):
                return Delivery(LOST, path=tuple(path))
        return Delivery(DELIVERED, tick + (len(path) - 1) * self.hop_latency, tuple(path))

    def broadcast(self, msg: NetMessage, tick: int, rng=None,
                  adjacency: Optional[Dict[str, List[str]]] = None) -> Dict[str, Delivery]:
        """One-hop broadcast to every neighbour, with independent loss per receiver."""
        out = {}
        receivers = adjacency[msg.source] if adjacency is not None else self.neighbors(msg.source, tick)
        for other in sorted(receivers):
            if self._lost(rng):
                out[other] = Delivery(LOST, path=(msg.source, other))
            else:
                out[other] = Delivery(DELIVERED, tick + self.hop_latency, (msg.source, other))
        return out

    def _lost(self, rng) -> bool:
        if self.p_loss <= 0.0:
            return False
        if self.p_loss >= 1.0:
            return True
        return rng.random() < self.p_loss

    def apply_capture(self, node_id: str) -> None:
        node = self._node(node_id)
        if node.kind != "drone":
            raise ValueError(f"{node_id} is not a drone")
        self.captured.add(node_id)

    def diameter(self, tick: int = 0) -> int:
        """Largest finite hop distance between any two live nodes."""
        adj = self.adjacency(tick)
        best = 0
        for src in adj:
            dist = {src: 0}
            queue = deque([src])
            while queue:
                u = queue.popleft()
                for v in adj[u]:
                    if v not in dist:
                        dist[v] = dist[u] + 1
                        queue.append(v)
            best = max(best, max(dist.values()))
        return best
