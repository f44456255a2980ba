"""Precedent records, in-memory knowledge bases and the persistent knowledge store.

Store file layout::

    #sodsim-kb v1 sha256
    {"signature": [...], "decision": ..., "outcome": ..., "mission": ..., "tick": ...}
    ...
    #checksum <sha256 of every byte above this line>

Records are content-addressed by (signature digest, decision, mission), so
consolidating the same report twice leaves the store unchanged.
"""

from __future__ import annotations

import contextlib
import fcntl
import hashlib
import json
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, FrozenSet, Iterable, Iterator, List, Tuple

STORE_HEADER = "#sodsim-kb v1 sha256"
SIGNATURE_FIELDS = ("kind", "rule", "severity", "phase", "option")


class StoreCorrupt(RuntimeError):
    pass


def make_signature(tokens: Iterable[str]) -> FrozenSet[str]:
    sig = frozenset(tokens)
    if not sig:
        raise ValueError("a situation signature needs at least one token")
    for token in sig:
        field_name, sep, value = token.partition(":")
        if not sep or field_name not in SIGNATURE_FIELDS or not value:
            raise ValueError(f"token {token!r} is outside the signature vocabulary")
    return sig


def signature_digest(signature: Iterable[str]) -> str:
    return hashlib.sha256("|".join(sorted(signature)).encode()).hexdigest()[:16]


@dataclass(frozen=True)
class PrecedentRecord:
    signature: FrozenSet[str]
    decision: str
    outcome: float
    mission: str
    tick: int

    def __post_init__(self):
        object.__setattr__(self, "signature", make_signature(self.signature))
        if not 0.0 <= self.outcome <= 1.0:
            raise ValueError("outcome score must be in [0, 1]")

    @property
    def key(self) -> Tuple[str, str, str]:
        return signature_digest(self.signature), self.decision, self.mission

    def to_line(self) -> str:
        return json.dumps({"signature": sorted(self.signature), "decision": self.decision,
                           "outcome": self.outcome, "mission": self.mission, "tick": self.tick},
                          separators=(",", ":"))

    @classmethod
    def from_line(cls, line: str) -> "PrecedentRecord":
        data = json.loads(line)
        return cls(frozenset(data["signature"]), data["decision"], float(data["outcome"]),
                   data["mission"], int(data["tick"]))


class KnowledgeBase:
    """Ordered collection of precedent records; mission recency is order of first appearance."""

    def __init__(self, records: Iterable[PrecedentRecord] = ()):
        self.records: List[PrecedentRecord] = []
        self._missions: Dict[str, int] = {}
        for rec in records:
            self.add(rec)

    def add(self, record: PrecedentRecord) -> None:
        self._missions.setdefault(record.mission, len(self._missions))
        self.records.append(record)

    def mission_rank(self, mission: str) -> int:
        return self._missions.get(mission, -1)

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self) -> Iterator[PrecedentRecord]:
        return iter(self.records)


def _checksum(body: str) -> str:
    return hashlib.sha256(body.encode()).hexdigest()


def _parse_store(text: str) -> List[PrecedentRecord]:
    lines = text.splitlines(keepends=True)
    if not lines or lines[0].rstrip("\n") != STORE_HEADER:
        raise StoreCorrupt("missing or unknown store header")
    trailer = lines[-1].rstrip("\n")
    if not trailer.startswith("#checksum "):
        raise StoreCorrupt("missing trailing checksum")
    body = "".join(lines[:-1])
    if _checksum(body) != trailer.split(" ", 1)[1]:
        raise StoreCorrupt("checksum mismatch")
    try:
        return [PrecedentRecord.from_line(l) for l in lines[1:-1] if l.strip()]
    except (ValueError, KeyError) as exc:
        raise StoreCorrupt(f"unreadable record: {exc}") from exc


class KnowledgeStore:
    """Append-only, checksummed precedent store guarded by an advisory file lock."""

    def __init__(self, path):
        self.path = Path(path)

    @contextlib.contextmanager
    def _locked(self):
        lock_path = self.path.with_name(self.path.name + ".lock")
        lock_path.parent.mkdir(parents=True, exist_ok=True)
        with open(lock_path, "a") as fh:
            fcntl.flock(fh, fcntl.LOCK_EX)
            try:
                yield
            finally:
                fcntl.flock(fh, fcntl.LOCK_UN)

    def load(self) -> List[PrecedentRecord]:
        if not self.path.exists():
            return []
        return _parse_store(self.path.read_text())

    def snapshot(self) -> KnowledgeBase:
        return KnowledgeBase(self.load())

    def append(self, records: Iterable[PrecedentRecord]) -> int:
        """Append records whose key is not yet stored; returns how many were added."""
        with self._locked():
            existing = self.load()
            seen = {r.key for r in existing}
            fresh = []
            for rec in records:
                if rec.key not in seen:
                    seen.add(rec.key)
                    fresh.append(rec)
            if not fresh and self.path.exists():
                return 0
            body = STORE_HEADER + "\n" + "".join(r.to_line() + "\n" for r in existing + fresh)
            tmp = self.path.with_name(self.path.name + ".tmp")
            tmp.write_text(body + f"#checksum {_checksum(body)}\n")
            os.replace(tmp, self.path)
            return len(fresh)
