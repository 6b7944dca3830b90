"""Version-first storage: snapshots plus delta chains in a content-addressed object store.

Layout under the repository directory::

    objects/<first2hex>/<hex>   snapshot ("DSVCSNAP1") or delta ("DSVCDLT1") files
    manifest.json               version -> object hash, placement, delta base

Every version has exactly one storage node.  A delta node stores the edit
script from its base version's *dataset* to its own, so re-encoding a base
never invalidates the deltas that point at it.
"""
from __future__ import annotations

import hashlib
import json
import os
import time
import zlib
from collections import OrderedDict
from dataclasses import dataclass
from pathlib import Path
from typing import Union

from .delta import Delete, Delta, Insert, apply_delta, compute_delta, decode_delta, encode_delta
from .errors import BrokenChain, CorruptRepository, DeltaMismatch, InvalidValue, IoFailure, UnknownBaseVersion, UnknownVersion
from .model import Dataset, Record, Table, decode_dataset, encode_dataset, snapshot_size

SNAP_MAGIC = b"DSVCSNAP1"


@dataclass(frozen=True)
class Materialize:
    def to_json(self) -> dict:
        return {"kind": "snapshot"}


@dataclass(frozen=True)
class DeltaFrom:
    base: int

    def to_json(self) -> dict:
        return {"kind": "delta", "from": self.base}


Placement = Union[Materialize, DeltaFrom]
MATERIALIZE = Materialize()


def placement_from_json(d: dict) -> Placement:
    if d["kind"] == "snapshot":
        return MATERIALIZE
    return DeltaFrom(int(d["from"]))


@dataclass(frozen=True)
class StorageNode:
    version: int
    placement: Placement
    object_hash: str
    nbytes: int

    @property
    def is_snapshot(self) -> bool:
        return isinstance(self.placement, Materialize)

    @property
    def delta_from(self) -> int | None:
        return None if self.is_snapshot else self.placement.base


def encode_snapshot(ds: Dataset, compress: bool = True) -> bytes:
    body = encode_dataset(ds)
    if compress:
        return SNAP_MAGIC + b"\x01" + zlib.compress(body, 6)
    return SNAP_MAGIC + b"\x00" + body


def decode_snapshot(data: bytes) -> Dataset:
    if data[:9] != SNAP_MAGIC or len(data) < 10:
        raise CorruptRepository("not a snapshot object")
    try:
        body = zlib.decompress(data[10:]) if data[9] == 1 else data[10:]
        ds, pos = decode_dataset(body)
    except (zlib.error, InvalidValue, IndexError) as exc:
        raise CorruptRepository(f"corrupt snapshot: {exc}") from None
    if pos != len(body):
        raise CorruptRepository("trailing bytes in snapshot")
    return ds


def _atomic_write(path: Path, data: bytes) -> None:
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as f:
        f.write(data)
        f.flush()
        os.fsync(f.fileno())
    os.replace(tmp, path)


def write_json(path: Path, obj) -> None:
    _atomic_write(path, (json.dumps(obj, indent=1, sort_keys=True) + "\n").encode("utf-8"))


class VersionFirstStore:
    def __init__(self, root: str | os.PathLike, compress: bool = True, cache_size: int = 16):
        self.root = Path(root)
        self.objects = self.root / "objects"
        self.manifest_path = self.root / "manifest.json"
        self.compress = compress
        self.nodes: dict[int, StorageNode] = {}
        self.meta: dict[int, dict] = {}
        self.last_access: dict[int, float] = {}
        self._cache: OrderedDict[int, Dataset] = OrderedDict()
        self._cache_size = cache_size
        self._dirty_access = False
        if self.manifest_path.exists():
            self._load()

    @classmethod
    def create(cls, root: str | os.PathLike, compress: bool = True) -> "VersionFirstStore":
        root = Path(root)
        (root / "objects").mkdir(parents=True, exist_ok=True)
        st = cls(root, compress)
        st.flush()
        return st

    def _load(self) -> None:
        try:
            m = json.loads(self.manifest_path.read_text("utf-8"))
        except (OSError, ValueError) as exc:
            raise CorruptRepository(f"unreadable manifest: {exc}") from None
        for vid, e in m.get("versions", {}).items():
            v = int(vid)
            self.nodes[v] = StorageNode(v, placement_from_json(e["placement"]), e["object"], int(e["bytes"]))
            self.last_access[v] = float(e.get("last_access", 0.0))
            self.meta[v] = {k: e[k] for k in ("snapshot_bytes", "record_count") if k in e}

    def manifest_json(self) -> dict:
        out = {}
        for v in sorted(self.nodes):
            n = self.nodes[v]
            e = {"object": n.object_hash, "placement": n.placement.to_json(), "bytes": n.nbytes,
                 "delta_from": n.delta_from, "last_access": self.last_access.get(v, 0.0)}
            e.update(self.meta.get(v, {}))
            out[str(v)] = e
        return {"versions": out}

    def flush(self) -> None:
        write_json(self.manifest_path, self.manifest_json())
        self._dirty_access = False

    # objects -----------------------------------------------------------

    def _object_path(self, h: str) -> Path:
        return self.objects / h[:2] / h

    def _write_object(self, data: bytes) -> str:
        h = hashlib.sha256(data).hexdigest()
        p = self._object_path(h)
        if not p.exists():
            try:
                p.parent.mkdir(parents=True, exist_ok=True)
                _atomic_write(p, data)
            except OSError as exc:
                raise IoFailure(str(exc)) from None
        return h

    def _read_object(self, h: str) -> bytes:
        p = self._object_path(h)
        try:
            data = p.read_bytes()
        except FileNotFoundError:
            raise BrokenChain(f"missing object {h}") from None
        except OSError as exc:
            raise IoFailure(str(exc)) from None
        if hashlib.sha256(data).hexdigest() != h:
            raise CorruptRepository(f"object {h} fails its checksum")
        return data

    def object_count(self) -> int:
        return sum(1 for p in self.objects.glob("*/*") if not p.name.endswith(".tmp"))

    def store_bytes(self) -> int:
        """Bytes of all objects referenced by the manifest."""
        seen = {}
        for n in self.nodes.values():
            seen[n.object_hash] = n.nbytes
        return sum(seen.values())

    # versions ----------------------------------------------------------

    def __contains__(self, v: int) -> bool:
        return v in self.nodes

    def versions(self) -> list[int]:
        return sorted(self.nodes)

    def encode_placement(self, v: int, ds: Dataset, placement: Placement, base: Dataset | None = None) -> bytes:
        if isinstance(placement, Materialize):
            return encode_snapshot(ds, self.compress)
        u = placement.base
        if u not in self.nodes and base is None:
            raise UnknownBaseVersion(f"delta base {u} is not stored")
        if base is None:
            base = self.materialize(u, touch=False)
        d = compute_delta(base, ds)
        d.from_version, d.to_version = u, v
        return encode_delta(d, self.compress)

    def put_version(self, v: int, ds: Dataset, placement: Placement = MATERIALIZE, flush: bool = True,
                    base: Dataset | None = None) -> StorageNode:
        if isinstance(placement, DeltaFrom):
            if placement.base not in self.nodes:
                raise UnknownBaseVersion(f"delta base {placement.base} is not stored")
            if placement.base == v or (v in self.nodes and v in self._chain_ids(placement.base)):
                raise CorruptRepository(f"placing {v} on {placement.base} would form a cycle")
        data = self.encode_placement(v, ds, placement, base)
        h = self._write_object(data)
        node = StorageNode(v, placement, h, len(data))
        self.nodes[v] = node
        self.meta[v] = {"snapshot_bytes": snapshot_size(ds), "record_count": ds.record_count()}
        self.last_access.setdefault(v, time.time())
        self._cache_put(v, ds)
        if flush:
            self.flush()
        return node

    def _chain_ids(self, v: int) -> list[int]:
        out = []
        seen = set()
        cur = v
        while True:
            if cur in seen:
                raise BrokenChain(f"storage chain of {v} loops at {cur}")
            seen.add(cur)
            node = self.nodes.get(cur)
            if node is None:
                raise BrokenChain(f"storage chain of {v} references missing version {cur}")
            out.append(cur)
            if node.is_snapshot:
                return out
            cur = node.placement.base

    def resolve_chain(self, v: int) -> list[StorageNode]:
        """Storage nodes from ``v`` back to the snapshot it is rebuilt from."""
        if v not in self.nodes:
            raise UnknownVersion(f"version {v} is not stored")
        return [self.nodes[u] for u in self._chain_ids(v)]

    def chain_depth(self, v: int) -> int:
        return len(self.resolve_chain(v)) - 1

    def load_delta(self, v: int) -> Delta:
        node = self.nodes[v]
        if node.is_snapshot:
            raise ValueError(f"version {v} is a snapshot")
        return decode_delta(self._read_object(node.object_hash))

    def load_snapshot(self, v: int) -> Dataset:
        node = self.nodes[v]
        if not node.is_snapshot:
            raise ValueError(f"version {v} is a delta")
        return decode_snapshot(self._read_object(node.object_hash))

    def materialize(self, v: int, touch: bool = True) -> Dataset:
        if touch and v in self.nodes:
            self.last_access[v] = time.time()
            self._dirty_access = True
        if v in self._cache:
            self._cache.move_to_end(v)
            return self._cache[v]
        chain = self.resolve_chain(v)
        start = len(chain) - 1
        ds = None
        for i, node in enumerate(chain):
            if node.version in self._cache:
                start, ds = i, self._cache[node.version]
                break
        if ds is None:
            ds = self.load_snapshot(chain[-1].version)
            self._cache_put(chain[-1].version, ds)
        for node in reversed(chain[:start]):
            d = decode_delta(self._read_object(node.object_hash))
            if d.from_version != node.delta_from or d.to_version != node.version:
                raise DeltaMismatch(f"delta object for {node.version} has header {d.from_version}->{d.to_version}")
            ds = apply_delta(ds, d)
            self._cache_put(node.version, ds)  # intermediates are likely to be asked for next
        return ds

    def _cache_put(self, v: int, ds: Dataset) -> None:
        self._cache[v] = ds
        self._cache.move_to_end(v)
        while len(self._cache) > self._cache_size:
            self._cache.popitem(last=False)

    def clear_cache(self) -> None:
        self._cache.clear()

    # re-encoding -------------------------------------------------------

    def apply_placements(self, placements: dict[int, Placement], datasets: dict[int, Dataset] | None = None) -> list[int]:
        """Re-encode versions so their storage follows ``placements``.

        New objects are written first; the manifest is swapped in one atomic
        write; objects no longer referenced are removed afterwards.
        Returns the versions whose placement changed.
        """
        merged = {v: n.placement for v, n in self.nodes.items()}
        merged.update(placements)
        check_forest(merged)
        changed = [v for v in sorted(placements) if self.nodes[v].placement != placements[v]]
        if not changed:
            return []
        datasets = dict(datasets or {})
        need = set(changed) | {placements[v].base for v in changed if isinstance(placements[v], DeltaFrom)}
        for v in need:
            if v not in datasets:
                datasets[v] = self.materialize(v, touch=False)
        new_nodes = dict(self.nodes)
        for v in changed:
            p = placements[v]
            base = datasets[p.base] if isinstance(p, DeltaFrom) else None
            data = self.encode_placement(v, datasets[v], p, base)
            new_nodes[v] = StorageNode(v, p, self._write_object(data), len(data))
        old_nodes = self.nodes
        self.nodes = new_nodes
        try:
            self.flush()
        except Exception:
            self.nodes = old_nodes
            raise
        self.gc()
        return changed

    def gc(self) -> int:
        live = {n.object_hash for n in self.nodes.values()}
        removed = 0
        for p in list(self.objects.glob("*/*")):
            if p.name not in live:
                p.unlink()
                removed += 1
        return removed

    def placements(self) -> dict[int, Placement]:
        return {v: n.placement for v, n in sorted(self.nodes.items())}


def check_forest(placements: dict[int, Placement]) -> None:
    """Raise if delta bases are missing or form a cycle."""
    state: dict[int, int] = {}
    for v in placements:
        path = []
        cur = v
        while cur not in state:
            p = placements.get(cur)
            if p is None:
                raise UnknownBaseVersion(f"delta base {cur} is not stored")
            state[cur] = 1
            path.append(cur)
            if isinstance(p, Materialize):
                break
            cur = p.base
        else:
            if state[cur] == 1:
                raise CorruptRepository(f"storage placement cycle through {cur}")
        for u in path:
            state[u] = 2


def chain_depths(placements: dict[int, Placement]) -> dict[int, int]:
    depth: dict[int, int] = {}

    def d(v: int) -> int:
        stack = []
        cur = v
        while cur not in depth:
            p = placements[cur]
            if isinstance(p, Materialize):
                depth[cur] = 0
                break
            stack.append(cur)
            cur = p.base
        base = depth[cur]
        for u in reversed(stack):
            base += 1
            depth[u] = base
        return depth[v]

    for v in placements:
        d(v)
    return depth


# tombstone-union read path ------------------------------------------------


@dataclass(frozen=True)
class TombstoneRow:
    record: Record
    deleted: bool


def tombstone_segments(store: VersionFirstStore, v: int) -> list[dict[str, dict[str, TombstoneRow]]]:
    """One segment table per chain node, oldest (the snapshot) first.

    A snapshot contributes every row with deleted=0.  A delta contributes a
    deleted=1 row per deleted key and a deleted=0 row per inserted key; an
    update is a deletion plus a re-insertion of the full new row, so only the
    re-inserted row is kept in the segment.
    """
    chain = list(reversed(store.resolve_chain(v)))
    snap = store.load_snapshot(chain[0].version)
    segs = [{t: {k: TombstoneRow(r, False) for k, r in tab.records.items()} for t, tab in snap.tables.items()}]
    visible = {t: dict(tab.records) for t, tab in snap.tables.items()}
    for node in chain[1:]:
        d = store.load_delta(node.version)
        seg: dict[str, dict[str, TombstoneRow]] = {}
        for t, tops in d.ops.items():
            rows = seg.setdefault(t, {})
            cur = visible.setdefault(t, {})
            for k, op in tops.items():
                if isinstance(op, Insert):
                    rows[k] = TombstoneRow(op.record, False)
                    cur[k] = op.record
                elif isinstance(op, Delete):
                    rows[k] = TombstoneRow(cur[k], True)
                    del cur[k]
                else:
                    new = cur[k].evolve(op.set_attrs, op.unset_attrs)
                    rows[k] = TombstoneRow(new, False)
                    cur[k] = new
        for t in d.created_tables:
            seg.setdefault(t, {})
        segs.append(seg)
    return segs


def tombstone_union_read(store: VersionFirstStore, v: int) -> Dataset:
    """Rebuild ``v`` as the union of its ancestor segments, later rows winning, deleted rows filtered."""
    chain = list(reversed(store.resolve_chain(v)))
    segs = tombstone_segments(store, v)
    union: dict[str, dict[str, TombstoneRow]] = {}
    for seg in segs:
        for t, rows in seg.items():
            union.setdefault(t, {}).update(rows)
    live = set(store.load_snapshot(chain[0].version).tables)
    constraints = store.load_snapshot(chain[0].version).constraints
    for node in chain[1:]:
        d = store.load_delta(node.version)
        live |= set(d.created_tables)
        live -= set(d.dropped_tables)
        if d.new_constraints is not None:
            constraints = tuple(d.new_constraints)
    tables = {}
    for t in sorted(live):
        rows = union.get(t, {})
        tables[t] = Table(t, {k: row.record for k, row in rows.items() if not row.deleted})
    return Dataset(tables, constraints)

