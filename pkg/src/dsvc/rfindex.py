"""Record-first representation: each distinct record state once, with the versions holding it.

An index entry is keyed by the record *state* (key plus full content), so an
update produces a new entry.  The index is derived data: it can always be
rebuilt from the version-first store.
"""
from __future__ import annotations

import struct
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable

from .bitmap import VersionBitmap
from .delta import Delta
from .errors import CorruptRepository, UnknownVersion
from .model import Dataset, ForeignKey, Record, Table, parse_record

RFI_MAGIC = b"DSVCRFI1"
_U32 = struct.Struct(">I")

RecordPredicate = Callable[[Record], bool]


@dataclass
class StateEntry:
    record: Record
    versions: VersionBitmap


@dataclass
class RecordFirstIndex:
    tables: dict[str, dict[bytes, StateEntry]] = field(default_factory=dict)
    table_versions: dict[str, VersionBitmap] = field(default_factory=dict)
    constraint_versions: dict[ForeignKey, VersionBitmap] = field(default_factory=dict)
    universe: VersionBitmap = field(default_factory=VersionBitmap)
    stats: Counter = field(default_factory=Counter, compare=False, repr=False)

    def __contains__(self, v: int) -> bool:
        return v in self.universe

    def add_version(self, v: int, ds: Dataset, parent: int | None = None, delta: Delta | None = None) -> None:
        """Index version ``v``.

        With ``parent`` and ``delta`` (parent -> v) given, only the delta is
        inspected for changed keys; unchanged states inherit ``v`` from the
        parent's membership instead of being re-hashed.
        """
        if v in self.universe:
            raise CorruptRepository(f"version {v} is already indexed")
        incremental = parent is not None and delta is not None and parent in self.universe
        for name, table in ds.tables.items():
            self.table_versions.setdefault(name, VersionBitmap()).add(v)
            states = self.tables.setdefault(name, {})
            if not incremental:
                for r in table.records.values():
                    self._add_state(states, r, v)
                continue
            touched = delta.ops.get(name, {})
            if parent in self.table_versions.get(name, ()):
                for e in states.values():
                    if parent in e.versions and e.record.key not in touched:
                        e.versions.add(v)
            for k in touched:
                r = table.records.get(k)
                if r is not None:
                    self._add_state(states, r, v)
        for fk in ds.constraints:
            self.constraint_versions.setdefault(fk, VersionBitmap()).add(v)
        self.universe.add(v)

    @staticmethod
    def _add_state(states: dict[bytes, StateEntry], r: Record, v: int) -> None:
        sid = r.state_id()
        e = states.get(sid)
        if e is None:
            states[sid] = StateEntry(r, VersionBitmap([v]))
        else:
            e.versions.add(v)

    def state_count(self) -> int:
        return sum(len(s) for s in self.tables.values())

    def check(self) -> None:
        """Every indexed version holds at most one state per key."""
        for name, states in self.tables.items():
            seen: set[tuple[str, int]] = set()
            for e in states.values():
                for v in e.versions:
                    if (e.record.key, v) in seen:
                        raise CorruptRepository(f"{name}/{e.record.key} has two states in version {v}")
                    seen.add((e.record.key, v))

    # persistence -------------------------------------------------------

    def to_bytes(self) -> bytes:
        out = bytearray(RFI_MAGIC)
        out += self.universe.to_bytes()
        out += _U32.pack(len(self.constraint_versions))
        for fk in sorted(self.constraint_versions):
            for s in (fk.from_table, fk.from_attr, fk.to_table):
                b = s.encode("utf-8")
                out += _U32.pack(len(b)) + b
            out += self.constraint_versions[fk].to_bytes()
        names = sorted(self.table_versions)
        out += _U32.pack(len(names))
        for name in names:
            b = name.encode("utf-8")
            out += _U32.pack(len(b)) + b
            out += self.table_versions[name].to_bytes()
            states = self.tables.get(name, {})
            out += _U32.pack(len(states))
            for sid in sorted(states):
                e = states[sid]
                rb = e.record.canonical()
                out += sid + _U32.pack(len(rb)) + rb
                bb = e.versions.to_bytes()
                out += _U32.pack(len(bb)) + bb
        return bytes(out)

    @classmethod
    def from_bytes(cls, data: bytes) -> "RecordFirstIndex":
        if data[:8] != RFI_MAGIC:
            raise CorruptRepository("not a record-first index file")
        pos = 8
        idx = cls()
        idx.universe, pos = VersionBitmap.from_bytes(data, pos)

        def text() -> str:
            nonlocal pos
            (n,) = _U32.unpack_from(data, pos)
            s = data[pos + 4 : pos + 4 + n].decode("utf-8")
            pos += 4 + n
            return s

        (nfk,) = _U32.unpack_from(data, pos)
        pos += 4
        for _ in range(nfk):
            fk = ForeignKey(text(), text(), text())
            idx.constraint_versions[fk], pos = VersionBitmap.from_bytes(data, pos)
        (nt,) = _U32.unpack_from(data, pos)
        pos += 4
        for _ in range(nt):
            name = text()
            idx.table_versions[name], pos = VersionBitmap.from_bytes(data, pos)
            (ns,) = _U32.unpack_from(data, pos)
            pos += 4
            states = idx.tables.setdefault(name, {})
            for _ in range(ns):
                sid = bytes(data[pos : pos + 32])
                (rl,) = _U32.unpack_from(data, pos + 32)
                pos += 36
                rec, end = parse_record(data, pos)
                if end != pos + rl or rec.state_id() != sid:
                    raise CorruptRepository("record-first index entry fails its checksum")
                pos = end
                (bl,) = _U32.unpack_from(data, pos)
                pos += 4
                bm, pos = VersionBitmap.from_bytes(data, pos)
                states[sid] = StateEntry(rec, bm)
        return idx

    def save(self, path: str | Path) -> None:
        from .store import _atomic_write

        _atomic_write(Path(path), self.to_bytes())

    @classmethod
    def load(cls, path: str | Path) -> "RecordFirstIndex":
        return cls.from_bytes(Path(path).read_bytes())


def build_index(materialize: Callable[[int], Dataset], versions: Iterable[int],
                parents: dict[int, int] | None = None, deltas: dict[int, Delta] | None = None) -> RecordFirstIndex:
    idx = RecordFirstIndex()
    for v in sorted(versions):
        p = (parents or {}).get(v)
        d = (deltas or {}).get(v)
        idx.add_version(v, materialize(v), p, d)
    return idx


def versions_matching(index: RecordFirstIndex, table: str, predicate: RecordPredicate) -> VersionBitmap:
    """OR of the bitmaps of all states of ``table`` satisfying ``predicate``."""
    hits = []
    for e in index.tables.get(table, {}).values():
        index.stats["states_visited"] += 1
        if predicate(e.record):
            hits.append(e.versions)
    return VersionBitmap.union_all(hits)


def scan_versions(index: RecordFirstIndex, table: str, predicate: RecordPredicate,
                  versions: VersionBitmap) -> list[tuple[Record, VersionBitmap]]:
    """Satisfying states, each once, with its membership restricted to ``versions``."""
    rows = []
    if not versions:
        return rows
    for e in index.tables.get(table, {}).values():
        index.stats["states_visited"] += 1
        if not predicate(e.record):
            continue
        vs = e.versions & versions
        if vs:
            rows.append((e.record, vs))
    rows.sort(key=lambda rv: (rv[0].key, rv[0].canonical()))
    return rows


def retrieve_version_rf(index: RecordFirstIndex, v: int) -> Dataset:
    """Rebuild version ``v`` from the index (the slow path: scans every state)."""
    if v not in index.universe:
        raise UnknownVersion(f"version {v} is not indexed")
    tables = {}
    for name, tv in index.table_versions.items():
        if v not in tv:
            continue
        recs = {}
        for e in index.tables.get(name, {}).values():
            if v in e.versions:
                recs[e.record.key] = e.record
        tables[name] = Table(name, recs)
    fks = tuple(fk for fk, bm in index.constraint_versions.items() if v in bm)
    return Dataset(tables, fks)
