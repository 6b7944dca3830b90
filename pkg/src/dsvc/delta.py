"""Record-level deltas between datasets.

A delta maps ``table -> key -> op`` where op is an :class:`Insert`,
:class:`Delete` or :class:`Update`.  Deletes and updates carry the state id of
the record they expect to find so that applying a delta to the wrong base is
detected instead of silently producing a wrong version.  Table creation and
removal, and changes to the declared constraints, ride along so that empty
tables survive a round trip.
"""
from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping, Union

from .errors import DeltaMismatch, DuplicateInsert, InvalidValue
from .model import (
    Dataset,
    ForeignKey,
    Record,
    Table,
    check_value,
    decode_text,
    decode_u32,
    decode_value,
    encode_text,
    encode_u32,
    encode_value,
    parse_record,
)

DELTA_MAGIC = b"DSVCDLT1"
FLAG_RAW = 0
FLAG_ZLIB = 1

OP_INSERT, OP_DELETE, OP_UPDATE = 1, 2, 3

_U64 = struct.Struct(">Q")


@dataclass(frozen=True)
class Insert:
    record: Record

    @property
    def key(self) -> str:
        return self.record.key


@dataclass(frozen=True)
class Delete:
    key: str
    old_state_id: bytes


@dataclass(frozen=True)
class Update:
    key: str
    set_attrs: dict[str, Any]
    unset_attrs: tuple[str, ...]
    old_state_id: bytes
    new_state_id: bytes

    def __post_init__(self):
        if not self.set_attrs and not self.unset_attrs:
            raise InvalidValue("an update must change at least one attribute")
        if set(self.set_attrs) & set(self.unset_attrs):
            raise InvalidValue("set and unset attributes overlap")

    def changed_attrs(self) -> frozenset[str]:
        return frozenset(self.set_attrs) | frozenset(self.unset_attrs)


RecordOp = Union[Insert, Delete, Update]


def make_update(old: Record, new: Record) -> Update | None:
    """Update turning ``old`` into ``new``; ``None`` when they are identical."""
    if old == new:
        return None
    oa, na = old.attrs, new.attrs
    set_attrs = {}
    for n, v in na.items():
        if n not in oa or not _same(oa[n], v):
            set_attrs[n] = v
    unset = tuple(n for n in oa if n not in na)
    return Update(new.key, set_attrs, unset, old.state_id(), new.state_id())


def _same(a: Any, b: Any) -> bool:
    if type(a) is not type(b):
        return False
    if type(a) is float:
        return struct.pack(">d", a) == struct.pack(">d", b)
    return a == b


def op_result(op: RecordOp, old: Record | None) -> Record | None:
    """State of the key after ``op`` (``None`` = absent)."""
    if isinstance(op, Insert):
        return op.record
    if isinstance(op, Delete):
        return None
    return old.evolve(op.set_attrs, op.unset_attrs)


@dataclass
class Delta:
    ops: dict[str, dict[str, RecordOp]] = field(default_factory=dict)
    from_version: int = 0
    to_version: int = 0
    created_tables: tuple[str, ...] = ()
    dropped_tables: tuple[str, ...] = ()
    old_constraints: tuple[ForeignKey, ...] | None = None
    new_constraints: tuple[ForeignKey, ...] | None = None

    def is_empty(self) -> bool:
        return (
            not any(self.ops.values())
            and not self.created_tables
            and not self.dropped_tables
            and self.new_constraints is None
        )

    def __len__(self) -> int:
        return sum(len(t) for t in self.ops.values())

    def iter_ops(self):
        for t in sorted(self.ops):
            tops = self.ops[t]
            for k in sorted(tops):
                yield t, tops[k]

    def counts(self) -> dict[str, int]:
        c = {"insert": 0, "delete": 0, "update": 0}
        for _, op in self.iter_ops():
            c[type(op).__name__.lower()] += 1
        return c

    def changed_tables(self) -> list[str]:
        names = {t for t, ops in self.ops.items() if ops}
        names.update(self.created_tables, self.dropped_tables)
        return sorted(names)

    def byte_size(self) -> int:
        return len(encode_delta(self, compress=False))


# computing / applying -----------------------------------------------------


def compute_delta(base: Dataset, target: Dataset) -> Delta:
    ops: dict[str, dict[str, RecordOp]] = {}
    for name, tt in target.tables.items():
        bt = base.tables.get(name)
        bre = bt.records if bt is not None else {}
        tops: dict[str, RecordOp] = {}
        for k, r in tt.records.items():
            old = bre.get(k)
            if old is None:
                tops[k] = Insert(r)
            elif old is not r and old.canonical() != r.canonical():
                tops[k] = make_update(old, r)
        for k, old in bre.items():
            if k not in tt.records:
                tops[k] = Delete(k, old.state_id())
        if tops:
            ops[name] = tops
    for name, bt in base.tables.items():
        if name not in target.tables and bt.records:
            ops[name] = {k: Delete(k, r.state_id()) for k, r in bt.records.items()}
    created = tuple(sorted(n for n in target.tables if n not in base.tables))
    dropped = tuple(sorted(n for n in base.tables if n not in target.tables))
    d = Delta(ops, created_tables=created, dropped_tables=dropped)
    if base.constraints != target.constraints:
        d.old_constraints = base.constraints
        d.new_constraints = target.constraints
    return d


def apply_delta(base: Dataset, d: Delta) -> Dataset:
    tables = {n: t for n, t in base.tables.items()}
    for name in d.created_tables:
        if name in tables:
            raise DeltaMismatch(f"delta creates table {name!r} which already exists")
        tables[name] = Table(name)
    for name, tops in d.ops.items():
        if not tops:
            continue
        t = tables.get(name)
        if t is None:
            raise DeltaMismatch(f"delta edits unknown table {name!r}")
        recs = dict(t.records)
        for k, op in tops.items():
            old = recs.get(k)
            if isinstance(op, Insert):
                if old is not None:
                    raise DuplicateInsert(f"{name}/{k} already present")
                recs[k] = op.record
                continue
            if old is None or old.state_id() != op.old_state_id:
                raise DeltaMismatch(f"{name}/{k}: base state does not match delta")
            if isinstance(op, Delete):
                del recs[k]
            else:
                new = old.evolve(op.set_attrs, op.unset_attrs)
                if new.state_id() != op.new_state_id:
                    raise DeltaMismatch(f"{name}/{k}: update produced an unexpected state")
                recs[k] = new
        tables[name] = Table(name, recs)
    for name in d.dropped_tables:
        t = tables.pop(name, None)
        if t is None:
            raise DeltaMismatch(f"delta drops unknown table {name!r}")
        if t.records:
            raise DeltaMismatch(f"delta drops non-empty table {name!r}")
    constraints = base.constraints
    if d.new_constraints is not None:
        if d.old_constraints is not None and tuple(d.old_constraints) != base.constraints:
            raise DeltaMismatch("base constraints do not match delta")
        constraints = d.new_constraints
    return Dataset(tables, constraints)


def invert_delta(d: Delta, base: Dataset) -> Delta:
    """Delta taking ``apply_delta(base, d)`` back to ``base``."""
    ops: dict[str, dict[str, RecordOp]] = {}
    for name, tops in d.ops.items():
        bt = base.tables.get(name)
        bre = bt.records if bt is not None else {}
        inv = {}
        for k, op in tops.items():
            old = bre.get(k)
            if isinstance(op, Insert):
                if old is not None:
                    raise DuplicateInsert(f"{name}/{k} already present")
                inv[k] = Delete(k, op.record.state_id())
                continue
            if old is None or old.state_id() != op.old_state_id:
                raise DeltaMismatch(f"{name}/{k}: base state does not match delta")
            if isinstance(op, Delete):
                inv[k] = Insert(old)
            else:
                new = old.evolve(op.set_attrs, op.unset_attrs)
                inv[k] = make_update(new, old)
        if inv:
            ops[name] = inv
    return Delta(
        ops,
        from_version=d.to_version,
        to_version=d.from_version,
        created_tables=d.dropped_tables,
        dropped_tables=d.created_tables,
        old_constraints=d.new_constraints,
        new_constraints=d.old_constraints,
    )


def diff_recs(a: Dataset, b: Dataset) -> int:
    """Number of records that differ: inserts + deletes + updates, each once."""
    n = 0
    for name, ta in a.tables.items():
        tb = b.tables.get(name)
        if tb is None:
            n += len(ta.records)
            continue
        rb = tb.records
        for k, r in ta.records.items():
            o = rb.get(k)
            if o is None or (o is not r and o.canonical() != r.canonical()):
                n += 1
        n += sum(1 for k in rb if k not in ta.records)
    for name, tb in b.tables.items():
        if name not in a.tables:
            n += len(tb.records)
    return n


def restrict(ds: Dataset, tables: Iterable[str]) -> Dataset:
    """Dataset view containing only ``tables`` (and no constraints)."""
    return Dataset({n: ds.tables[n] for n in tables if n in ds.tables})


# serialization ------------------------------------------------------------


def _encode_fks(fks: tuple[ForeignKey, ...], out: bytearray) -> None:
    encode_u32(len(fks), out)
    for fk in fks:
        encode_text(fk.from_table, out)
        encode_text(fk.from_attr, out)
        encode_text(fk.to_table, out)


def _decode_fks(buf: bytes, pos: int) -> tuple[tuple[ForeignKey, ...], int]:
    n, pos = decode_u32(buf, pos)
    fks = []
    for _ in range(n):
        a, pos = decode_text(buf, pos)
        b, pos = decode_text(buf, pos)
        c, pos = decode_text(buf, pos)
        fks.append(ForeignKey(a, b, c))
    return tuple(fks), pos


def encode_delta(d: Delta, compress: bool = True) -> bytes:
    body = bytearray()
    body += _U64.pack(d.from_version)
    body += _U64.pack(d.to_version)
    tables = [t for t in sorted(d.ops) if d.ops[t]]
    encode_u32(len(tables), body)
    for name in tables:
        tops = d.ops[name]
        encode_text(name, body)
        encode_u32(len(tops), body)
        for k in sorted(tops):
            op = tops[k]
            if isinstance(op, Insert):
                body.append(OP_INSERT)
                body += op.record.canonical()
            elif isinstance(op, Delete):
                body.append(OP_DELETE)
                encode_text(op.key, body)
                body += op.old_state_id
            else:
                body.append(OP_UPDATE)
                encode_text(op.key, body)
                encode_u32(len(op.set_attrs), body)
                for n in sorted(op.set_attrs):
                    encode_text(n, body)
                    encode_value(op.set_attrs[n], body)
                encode_u32(len(op.unset_attrs), body)
                for n in sorted(op.unset_attrs):
                    encode_text(n, body)
                body += op.old_state_id
                body += op.new_state_id
    for names in (d.created_tables, d.dropped_tables):
        encode_u32(len(names), body)
        for n in names:
            encode_text(n, body)
    if d.new_constraints is None:
        body.append(0)
    else:
        body.append(1)
        _encode_fks(tuple(d.old_constraints or ()), body)
        _encode_fks(tuple(d.new_constraints), body)
    if compress:
        return DELTA_MAGIC + bytes([FLAG_ZLIB]) + zlib.compress(bytes(body), 6)
    return DELTA_MAGIC + bytes([FLAG_RAW]) + bytes(body)


def decode_delta(data: bytes) -> Delta:
    if data[:8] != DELTA_MAGIC or len(data) < 9:
        raise DeltaMismatch("not a delta file")
    flag = data[8]
    if flag == FLAG_ZLIB:
        try:
            buf = zlib.decompress(data[9:])
        except zlib.error as exc:
            raise DeltaMismatch(f"corrupt delta payload: {exc}") from None
    elif flag == FLAG_RAW:
        buf = data[9:]
    else:
        raise DeltaMismatch(f"unknown delta flag {flag}")
    try:
        return _decode_body(buf)
    except (InvalidValue, struct.error, IndexError) as exc:
        raise DeltaMismatch(f"corrupt delta payload: {exc}") from None


def _decode_body(buf: bytes) -> Delta:
    if len(buf) < 16:
        raise InvalidValue("truncated delta header")
    fv, tv = _U64.unpack_from(buf, 0)[0], _U64.unpack_from(buf, 8)[0]
    pos = 16
    ntables, pos = decode_u32(buf, pos)
    ops: dict[str, dict[str, RecordOp]] = {}
    for _ in range(ntables):
        name, pos = decode_text(buf, pos)
        nops, pos = decode_u32(buf, pos)
        tops: dict[str, RecordOp] = {}
        for _ in range(nops):
            tag = buf[pos]
            pos += 1
            if tag == OP_INSERT:
                r, pos = parse_record(buf, pos)
                tops[r.key] = Insert(r)
            elif tag == OP_DELETE:
                k, pos = decode_text(buf, pos)
                tops[k] = Delete(k, bytes(buf[pos : pos + 32]))
                pos += 32
            elif tag == OP_UPDATE:
                k, pos = decode_text(buf, pos)
                ns, pos = decode_u32(buf, pos)
                sa = {}
                for _ in range(ns):
                    n, pos = decode_text(buf, pos)
                    sa[n], pos = decode_value(buf, pos)
                nu, pos = decode_u32(buf, pos)
                un = []
                for _ in range(nu):
                    n, pos = decode_text(buf, pos)
                    un.append(n)
                old, new = bytes(buf[pos : pos + 32]), bytes(buf[pos + 32 : pos + 64])
                pos += 64
                tops[k] = Update(k, sa, tuple(un), old, new)
            else:
                raise InvalidValue(f"unknown op tag {tag}")
        ops[name] = tops
    lists = []
    for _ in range(2):
        n, pos = decode_u32(buf, pos)
        names = []
        for _ in range(n):
            s, pos = decode_text(buf, pos)
            names.append(s)
        lists.append(tuple(names))
    d = Delta(ops, fv, tv, lists[0], lists[1])
    has_fk = buf[pos]
    pos += 1
    if has_fk:
        d.old_constraints, pos = _decode_fks(buf, pos)
        d.new_constraints, pos = _decode_fks(buf, pos)
    if pos != len(buf):
        raise InvalidValue("trailing bytes in delta")
    return d


def deltas_equal(a: Delta, b: Delta) -> bool:
    return encode_delta(a, compress=False)[9 + 16 :] == encode_delta(b, compress=False)[9 + 16 :]


def checked_value_map(values: Mapping[str, Any]) -> dict[str, Any]:
    out = {}
    for n, v in values.items():
        if type(n) is not str or not n:
            raise InvalidValue(f"attribute names must be non-empty text, got {n!r}")
        out[n] = check_value(v)
    return out
