"""Three-way merges of branch heads.

Both sides are diffed against their merge base.  A key edited on only one
side takes that side's result.  A key edited on both sides is classified by
:func:`classify`:

======  =========================  ==========================================
A / B   row strategy               cell strategy
======  =========================  ==========================================
I / I   RowRow unless identical    RowRow unless identical
I / U   RowRow                     RowRow
I / D   RowRow                     DeleteUpdate
U / U   RowRow unless identical    CellCell per attribute set to different
                                   values; disjoint attributes merge cleanly
U / D   RowRow                     DeleteUpdate
D / D   clean                      clean
======  =========================  ==========================================

(I/U and I/D cannot arise from a real base, since an insert means the key was
absent and an update or delete means it was present; they are classified
anyway so the table is total.)
"""
from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

from .delta import Delete, Insert, RecordOp, Update, compute_delta, op_result
from .errors import UnknownBranch, UnresolvedConflicts
from .graph import EdgeKind, Provenance, VersionNode
from .model import Dataset, ForeignKey, Record, Table, values_identical


class Strategy(str, enum.Enum):
    ROW = "row"
    CELL = "cell"


class ConflictKind(str, enum.Enum):
    ROW_ROW = "row"
    CELL_CELL = "cell"
    DELETE_UPDATE = "delete-update"


@dataclass(frozen=True)
class Conflict:
    table: str
    key: str
    kind: ConflictKind
    attr: str | None
    base: Record | None
    a: RecordOp
    b: RecordOp

    def to_json(self) -> dict:
        from .jsonvalues import record_to_json

        base = record_to_json(self.base) if self.base is not None else None
        return {
            "table": self.table,
            "key": self.key,
            "kind": self.kind.value,
            "attr": self.attr,
            "base": base,
            "a": _op_json(self.a, self.base),
            "b": _op_json(self.b, self.base),
        }


def _op_json(op: RecordOp, base: Record | None) -> dict:
    from .jsonvalues import record_to_json, value_to_json

    if isinstance(op, Insert):
        return {"op": "insert", "record": record_to_json(op.record)}
    if isinstance(op, Delete):
        return {"op": "delete"}
    out = {"op": "update", "set": {k: value_to_json(v) for k, v in op.set_attrs.items()},
           "unset": sorted(op.unset_attrs)}
    if base is not None:
        out["record"] = record_to_json(op_result(op, base))
    return out


# resolutions ---------------------------------------------------------------


@dataclass(frozen=True)
class TakeA:
    pass


@dataclass(frozen=True)
class TakeB:
    pass


@dataclass(frozen=True)
class TakeRecord:
    record: Record | None  # None resolves to "key absent"


Resolution = TakeA | TakeB | TakeRecord
Resolutions = Mapping[tuple[str, str], Resolution]


def load_resolutions(path: str | Path) -> dict[tuple[str, str], Resolution]:
    """``[{"table": t, "key": k, "take": "a"|"b"|"record", "record": {...}|null}, ...]``"""
    from .jsonvalues import record_from_json

    data = json.loads(Path(path).read_text("utf-8"))
    out: dict[tuple[str, str], Resolution] = {}
    for e in data:
        take = e.get("take")
        if take == "a":
            res: Resolution = TakeA()
        elif take == "b":
            res = TakeB()
        elif take == "record":
            rec = e.get("record")
            res = TakeRecord(None if rec is None else record_from_json(dict(rec, _key=e["key"])))
        else:
            raise ValueError(f"resolution for {e.get('table')}/{e.get('key')} needs take = a, b or record")
        out[(e["table"], e["key"])] = res
    return out


# outcomes --------------------------------------------------------------------


@dataclass
class Merged:
    dataset: Dataset
    new_version: int
    committed: bool = True


@dataclass
class Conflicted:
    conflicts: list[Conflict]
    partial: Dataset

    def to_json(self) -> list[dict]:
        return [c.to_json() for c in self.conflicts]


MergeOutcome = Merged | Conflicted


# detection -------------------------------------------------------------------


def classify(a: RecordOp, b: RecordOp, base: Record | None, strategy: Strategy, table: str = "", key: str = "") -> list[Conflict]:
    """Conflicts between two edits of the same key (empty list = merges cleanly)."""
    ra, rb = _result(a, base), _result(b, base)
    same = ra is not _UNKNOWN and rb is not _UNKNOWN and ra == rb
    if same:
        return []
    if strategy is Strategy.ROW:
        return [Conflict(table, key, ConflictKind.ROW_ROW, None, base, a, b)]
    ka, kb = type(a), type(b)
    if Delete in (ka, kb):
        return [Conflict(table, key, ConflictKind.DELETE_UPDATE, None, base, a, b)]
    if ka is Update and kb is Update:
        out = []
        for attr in sorted(a.changed_attrs() & b.changed_attrs()):
            va, vb = ra.attrs.get(attr, _ABSENT), rb.attrs.get(attr, _ABSENT)
            if not _same_value(va, vb):
                out.append(Conflict(table, key, ConflictKind.CELL_CELL, attr, base, a, b))
        return out
    return [Conflict(table, key, ConflictKind.ROW_ROW, None, base, a, b)]


_ABSENT = object()
_UNKNOWN = object()


def _result(op: RecordOp, base: Record | None):
    if base is None and isinstance(op, Update):
        return _UNKNOWN  # only reachable for the impossible I/U pairing
    return op_result(op, base)


def _same_value(x: Any, y: Any) -> bool:
    if x is _ABSENT or y is _ABSENT:
        return x is y
    return values_identical(x, y)


def detect_conflicts(base: Dataset, a: Dataset, b: Dataset, strategy: Strategy | str = Strategy.CELL) -> list[Conflict]:
    strategy = Strategy(strategy)
    da, db = compute_delta(base, a), compute_delta(base, b)
    out: list[Conflict] = []
    for t in sorted(set(da.ops) & set(db.ops)):
        oa, ob = da.ops[t], db.ops[t]
        bt = base.tables.get(t)
        for k in sorted(set(oa) & set(ob)):
            old = bt.records.get(k) if bt is not None else None
            out.extend(classify(oa[k], ob[k], old, strategy, t, k))
    return out


# merging -----------------------------------------------------------------------


def _combine_updates(base: Record, a: Update, b: Update) -> Record:
    r = base.evolve(a.set_attrs, a.unset_attrs)
    return r.evolve(b.set_attrs, b.unset_attrs)


def _merge_constraints(base: tuple, a: tuple, b: tuple) -> tuple[ForeignKey, ...]:
    sb, sa, sbb = set(base), set(a), set(b)
    return tuple(sorted((sb - (sb - sa) - (sb - sbb)) | (sa - sb) | (sbb - sb)))


def three_way(base: Dataset, a: Dataset, b: Dataset, strategy: Strategy | str = Strategy.CELL,
              resolutions: Resolutions | None = None) -> tuple[Dataset, list[Conflict]]:
    """Merged dataset plus the conflicts left unresolved.

    Unresolved conflicted keys keep their base state in the returned dataset
    (which is then only a partial merge).  A table dropped by one side stays
    dropped unless rows survive in it after the merge.
    """
    strategy = Strategy(strategy)
    resolutions = resolutions or {}
    da, db = compute_delta(base, a), compute_delta(base, b)
    conflicts = []
    names = set(base.tables) | set(a.tables) | set(b.tables)
    tables: dict[str, Table] = {}
    for t in sorted(names):
        bt = base.tables.get(t)
        recs = dict(bt.records) if bt is not None else {}
        oa, ob = da.ops.get(t, {}), db.ops.get(t, {})
        for k in set(oa) | set(ob):
            old = bt.records.get(k) if bt is not None else None
            if k not in ob:
                new = op_result(oa[k], old)
            elif k not in oa:
                new = op_result(ob[k], old)
            else:
                cs = classify(oa[k], ob[k], old, strategy, t, k)
                if not cs:
                    if isinstance(oa[k], Update) and isinstance(ob[k], Update):
                        new = _combine_updates(old, oa[k], ob[k])
                    else:
                        new = op_result(oa[k], old)
                else:
                    res = resolutions.get((t, k))
                    if res is None:
                        conflicts.extend(cs)
                        new = old
                    elif isinstance(res, TakeA):
                        new = op_result(oa[k], old)
                    elif isinstance(res, TakeB):
                        new = op_result(ob[k], old)
                    else:
                        new = res.record
                        if new is not None and new.key != k:
                            raise ValueError(f"resolution record for {t}/{k} has key {new.key!r}")
            if new is None:
                recs.pop(k, None)
            else:
                recs[k] = new
        dropped = (bt is not None) and (t not in a.tables or t not in b.tables)
        created_and_dropped = bt is None and t not in a.tables and t not in b.tables
        if (dropped and not recs) or created_and_dropped:
            continue
        tables[t] = Table(t, recs)
    constraints = _merge_constraints(base.constraints, a.constraints, b.constraints)
    return Dataset(tables, constraints), conflicts


def _resolve_branch(repo, into: str) -> int:
    if into not in repo.graph.refs:
        raise UnknownBranch(f"unknown branch {into!r}")
    return repo.head(into)


def merge(repo, into: str, source: int | str, strategy: Strategy | str = Strategy.CELL,
          resolutions: Resolutions | None = None, require_clean: bool = False,
          provenance: Provenance | None = None) -> MergeOutcome:
    """Merge ``source`` (a branch or version) into branch ``into``.

    Nothing is written unless every conflict is covered by ``resolutions``.
    """
    head = _resolve_branch(repo, into)
    src = repo.resolve(source)
    if head is None:
        raise UnknownBranch(f"branch {into!r} has no versions")
    if repo.graph.is_ancestor(src, head):
        return Merged(repo.materialize(head), head, committed=False)
    base_v = repo.graph.lca(head, src)
    base, a, b = repo.materialize(base_v), repo.materialize(head), repo.materialize(src)
    ds, conflicts = three_way(base, a, b, strategy, resolutions)
    if conflicts:
        if require_clean:
            raise UnresolvedConflicts(conflicts)
        return Conflicted(conflicts, ds)
    vid = repo.commit_merge(into, src, ds, provenance, expected_head=head)
    return Merged(ds, vid)


def merge_many(repo, into: str, sources: Sequence[int | str], strategy: Strategy | str = Strategy.CELL,
               resolutions: Resolutions | None = None, require_clean: bool = False,
               provenance: Provenance | None = None) -> MergeOutcome:
    """Left fold of pairwise merges, in the given order.

    The whole fold is first simulated on a copy of the graph (merge results
    become virtual nodes so later merge bases are computed correctly); only
    when every step is clean are the merge versions committed.  With
    conflicts the result can depend on the order of ``sources``.
    """
    if len(sources) < 2:
        raise ValueError("merge_many needs at least two sources")
    head = _resolve_branch(repo, into)
    if head is None:
        raise UnknownBranch(f"branch {into!r} has no versions")
    g = repo.graph.copy()
    cur, cur_ds = head, repo.materialize(head)
    virtual: dict[int, Dataset] = {}
    steps: list[tuple[int, Dataset]] = []
    for s in sources:
        src = repo.resolve(s)
        if g.is_ancestor(src, cur):
            continue
        base_v = g.lca(cur, src)
        base = virtual.get(base_v) or repo.materialize(base_v)
        ds, conflicts = three_way(base, cur_ds, repo.materialize(src), strategy, resolutions)
        if conflicts:
            if require_clean:
                raise UnresolvedConflicts(conflicts)
            return Conflicted(conflicts, ds)
        vid = g.next_id()
        g.add_node(VersionNode(vid, [(cur, EdgeKind.MERGE), (src, EdgeKind.MERGE)], Provenance(), b"", into))
        virtual[vid] = ds
        steps.append((src, ds))
        cur, cur_ds = vid, ds
    if not steps:
        return Merged(cur_ds, head, committed=False)
    expected = head
    for src, ds in steps:
        expected = repo.commit_merge(into, src, ds, provenance, expected_head=expected)
    return Merged(cur_ds, expected)
