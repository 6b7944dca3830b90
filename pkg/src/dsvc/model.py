"""Values, records, tables and datasets, plus their canonical byte encoding.

Values are plain Python objects: ``None``, ``bool``, ``int`` (signed 64-bit),
``float`` (no NaN), ``str`` and ``bytes``.  A record is a text key plus a
name-sorted mapping of attributes.  Record identity is its canonical byte
string; two records are equal iff their encodings are equal.
"""
from __future__ import annotations

import hashlib
import math
import struct
from dataclasses import dataclass, field
from typing import Any, Iterable, Iterator, Mapping

from .errors import InvalidDataset, InvalidValue

TAG_NULL, TAG_BOOL, TAG_INT, TAG_FLOAT, TAG_TEXT, TAG_BYTES = range(6)

INT_MIN = -(1 << 63)
INT_MAX = (1 << 63) - 1

_TYPE_RANK = {type(None): 0, bool: 1, int: 2, float: 3, str: 4, bytes: 5}
_TYPE_NAMES = {type(None): "null", bool: "bool", int: "int", float: "float", str: "text", bytes: "bytes"}

_U32 = struct.Struct(">I")
_I64 = struct.Struct(">q")
_F64 = struct.Struct(">d")

EMPTY_HASH = hashlib.sha256(b"").digest()


def check_value(v: Any) -> Any:
    t = type(v)
    if t is int:
        if not INT_MIN <= v <= INT_MAX:
            raise InvalidValue(f"integer out of 64-bit range: {v}")
    elif t is float:
        if math.isnan(v):
            raise InvalidValue("NaN is not a storable value")
    elif t is str:
        try:
            v.encode("utf-8")
        except UnicodeEncodeError as exc:
            raise InvalidValue(f"text is not valid UTF-8: {exc}") from None
    elif t is bytearray:
        return bytes(v)
    elif t not in _TYPE_RANK:
        raise InvalidValue(f"unsupported value type {t.__name__}")
    return v


def type_name(v: Any) -> str:
    return _TYPE_NAMES[type(v)]


def value_sort_key(v: Any) -> tuple:
    """Key implementing the total order Null < Bool < numbers < Text < Bytes.

    Ints and floats share one numeric rank and compare by value; an int sorts
    before an equal float so the order stays antisymmetric.
    """
    t = type(v)
    if t is int:
        return (2, v, 0)
    if t is float:
        return (2, v, 1)
    if t is bool:
        return (1, v, 0)
    if v is None:
        return (0, 0, 0)
    return (_TYPE_RANK[t], v, 0)


def compare_values(a: Any, b: Any) -> int:
    ka, kb = value_sort_key(a), value_sort_key(b)
    return (ka > kb) - (ka < kb)


def values_identical(a: Any, b: Any) -> bool:
    """Type-aware equality: ``1``, ``1.0`` and ``True`` are all distinct."""
    return type(a) is type(b) and (a == b if type(a) is not float else _F64.pack(a) == _F64.pack(b))


# canonical encoding -------------------------------------------------------


def _encode_text(s: str, out: bytearray) -> None:
    b = s.encode("utf-8")
    out.append(TAG_TEXT)
    out += _U32.pack(len(b))
    out += b


def encode_value(v: Any, out: bytearray) -> None:
    t = type(v)
    if v is None:
        out.append(TAG_NULL)
    elif t is bool:
        out.append(TAG_BOOL)
        out.append(1 if v else 0)
    elif t is int:
        out.append(TAG_INT)
        out += _I64.pack(v)
    elif t is float:
        out.append(TAG_FLOAT)
        out += _F64.pack(v)
    elif t is str:
        _encode_text(v, out)
    elif t is bytes:
        out.append(TAG_BYTES)
        out += _U32.pack(len(v))
        out += v
    else:
        raise InvalidValue(f"unsupported value type {t.__name__}")


def decode_value(buf: bytes, pos: int) -> tuple[Any, int]:
    try:
        tag = buf[pos]
    except IndexError:
        raise InvalidValue("truncated value") from None
    pos += 1
    if tag == TAG_NULL:
        return None, pos
    if tag == TAG_BOOL:
        if pos >= len(buf) or buf[pos] > 1:
            raise InvalidValue("bad bool byte")
        return buf[pos] == 1, pos + 1
    if tag == TAG_INT:
        _need(buf, pos, 8)
        return _I64.unpack_from(buf, pos)[0], pos + 8
    if tag == TAG_FLOAT:
        _need(buf, pos, 8)
        v = _F64.unpack_from(buf, pos)[0]
        if math.isnan(v):
            raise InvalidValue("NaN is not a storable value")
        return v, pos + 8
    if tag in (TAG_TEXT, TAG_BYTES):
        _need(buf, pos, 4)
        (n,) = _U32.unpack_from(buf, pos)
        pos += 4
        _need(buf, pos, n)
        raw = bytes(buf[pos : pos + n])
        if tag == TAG_BYTES:
            return raw, pos + n
        try:
            return raw.decode("utf-8"), pos + n
        except UnicodeDecodeError:
            raise InvalidValue("text is not valid UTF-8") from None
    raise InvalidValue(f"unknown value tag {tag}")


def _need(buf: bytes, pos: int, n: int) -> None:
    if pos + n > len(buf):
        raise InvalidValue("truncated value")


def decode_text(buf: bytes, pos: int) -> tuple[str, int]:
    v, pos = decode_value(buf, pos)
    if type(v) is not str:
        raise InvalidValue("expected a text value")
    return v, pos


def encode_u32(n: int, out: bytearray) -> None:
    out += _U32.pack(n)


def decode_u32(buf: bytes, pos: int) -> tuple[int, int]:
    _need(buf, pos, 4)
    return _U32.unpack_from(buf, pos)[0], pos + 4


def encode_text(s: str, out: bytearray) -> None:
    _encode_text(s, out)


# records ------------------------------------------------------------------


class Record:
    """A keyed row.  Immutable; attributes are kept sorted by name."""

    __slots__ = ("key", "attrs", "_bytes", "_sid")

    def __init__(self, key: str, attrs: Mapping[str, Any] | Iterable[tuple[str, Any]] | None = None, **kw: Any):
        if type(key) is not str or not key:
            raise InvalidValue(f"record key must be non-empty text, got {key!r}")
        check_value(key)
        if isinstance(attrs, Mapping):
            items = dict(attrs)
        else:
            pairs = list(attrs or ())
            items = dict(pairs)
            if len(items) != len(pairs):
                raise InvalidValue("duplicate attribute names")
        for n in kw:
            if n in items:
                raise InvalidValue(f"duplicate attribute name {n!r}")
        items.update(kw)
        for name in items:
            if type(name) is not str or not name:
                raise InvalidValue(f"attribute names must be non-empty text, got {name!r}")
            check_value(name)
        clean = {name: check_value(items[name]) for name in sorted(items)}
        self.key = key
        self.attrs = clean
        self._bytes = None
        self._sid = None

    @classmethod
    def _trusted(cls, key: str, attrs: dict[str, Any]) -> "Record":
        # attrs already validated and sorted
        r = object.__new__(cls)
        r.key = key
        r.attrs = attrs
        r._bytes = None
        r._sid = None
        return r

    def get(self, name: str, default: Any = None) -> Any:
        return self.attrs.get(name, default)

    def __getitem__(self, name: str) -> Any:
        return self.attrs[name]

    def __contains__(self, name: str) -> bool:
        return name in self.attrs

    def evolve(self, set_attrs: Mapping[str, Any] | None = None, unset: Iterable[str] = ()) -> "Record":
        attrs = dict(self.attrs)
        for n in unset:
            attrs.pop(n, None)
        if set_attrs:
            for n, v in set_attrs.items():
                if type(n) is not str or not n:
                    raise InvalidValue(f"attribute names must be non-empty text, got {n!r}")
                attrs[n] = check_value(v)
        return Record._trusted(self.key, {n: attrs[n] for n in sorted(attrs)})

    @property
    def schema(self) -> frozenset[tuple[str, str]]:
        return frozenset((n, type_name(v)) for n, v in self.attrs.items())

    def canonical(self) -> bytes:
        b = self._bytes
        if b is None:
            out = bytearray()
            _encode_text(self.key, out)
            out += _U32.pack(len(self.attrs))
            for n, v in self.attrs.items():
                _encode_text(n, out)
                encode_value(v, out)
            b = self._bytes = bytes(out)
        return b

    def state_id(self) -> bytes:
        s = self._sid
        if s is None:
            s = self._sid = hashlib.sha256(self.canonical()).digest()
        return s

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Record):
            return NotImplemented
        return self is other or self.canonical() == other.canonical()

    def __hash__(self) -> int:
        return hash(self.state_id())

    def __repr__(self) -> str:
        inner = ", ".join(f"{n}={v!r}" for n, v in self.attrs.items())
        return f"Record({self.key!r}{', ' if inner else ''}{inner})"


def canonical_serialize(r: Record) -> bytes:
    return r.canonical()


def parse_record(buf: bytes, pos: int = 0) -> tuple[Record, int]:
    """Decode one canonical record starting at ``pos``; returns it and the end offset.

    Hot path for snapshot loading, so value decoding is inlined here rather
    than going through :func:`decode_value`.
    """
    start = pos
    size = len(buf)
    u32 = _U32.unpack_from
    try:
        if buf[pos] != TAG_TEXT:
            raise InvalidValue("expected a text value")
        (ln,) = u32(buf, pos + 1)
        pos += 5
        if pos + ln > size:
            raise InvalidValue("truncated value")
        key = buf[pos : pos + ln].decode("utf-8")
        pos += ln
        if not key:
            raise InvalidValue("empty record key")
        (n,) = u32(buf, pos)
        pos += 4
        attrs: dict[str, Any] = {}
        prev = ""
        for _ in range(n):
            if buf[pos] != TAG_TEXT:
                raise InvalidValue("expected a text value")
            (ln,) = u32(buf, pos + 1)
            pos += 5
            if pos + ln > size:
                raise InvalidValue("truncated value")
            name = buf[pos : pos + ln].decode("utf-8")
            pos += ln
            if not name or name <= prev:
                raise InvalidValue("attribute names must be non-empty and strictly increasing")
            prev = name
            tag = buf[pos]
            pos += 1
            if tag == TAG_INT:
                if pos + 8 > size:
                    raise InvalidValue("truncated value")
                v = _I64.unpack_from(buf, pos)[0]
                pos += 8
            elif tag == TAG_TEXT or tag == TAG_BYTES:
                (ln,) = u32(buf, pos)
                pos += 4
                if pos + ln > size:
                    raise InvalidValue("truncated value")
                v = bytes(buf[pos : pos + ln])
                if tag == TAG_TEXT:
                    v = v.decode("utf-8")
                pos += ln
            else:
                v, pos = decode_value(buf, pos - 1)
            attrs[name] = v
    except (IndexError, struct.error):
        raise InvalidValue("truncated value") from None
    except UnicodeDecodeError:
        raise InvalidValue("text is not valid UTF-8") from None
    r = Record._trusted(key, attrs)
    r._bytes = bytes(buf[start:pos])
    return r, pos


def deserialize_record(buf: bytes) -> Record:
    r, pos = parse_record(buf, 0)
    if pos != len(buf):
        raise InvalidValue("trailing bytes after record")
    return r


def content_hash(b: bytes) -> bytes:
    return hashlib.sha256(b).digest()


def record_state_id(r: Record) -> bytes:
    return r.state_id()


# tables and datasets ------------------------------------------------------


@dataclass
class Table:
    name: str
    records: dict[str, Record] = field(default_factory=dict)

    def __post_init__(self):
        if type(self.name) is not str or not self.name:
            raise InvalidDataset(f"table name must be non-empty text, got {self.name!r}")

    @classmethod
    def of(cls, name: str, records: Iterable[Record]) -> "Table":
        t = cls(name)
        for r in records:
            if r.key in t.records:
                raise InvalidDataset(f"duplicate key {r.key!r} in table {name!r}")
            t.records[r.key] = r
        return t

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self) -> Iterator[Record]:
        return iter(self.records.values())

    def copy(self) -> "Table":
        return Table(self.name, dict(self.records))


@dataclass(frozen=True, order=True)
class ForeignKey:
    from_table: str
    from_attr: str
    to_table: str


@dataclass
class Dataset:
    tables: dict[str, Table] = field(default_factory=dict)
    constraints: tuple[ForeignKey, ...] = ()

    def __post_init__(self):
        self.constraints = tuple(sorted(set(self.constraints)))
        for name, t in self.tables.items():
            if t.name != name:
                raise InvalidDataset(f"table registered as {name!r} is named {t.name!r}")

    @classmethod
    def of(cls, tables: Iterable[Table], constraints: Iterable[ForeignKey] = ()) -> "Dataset":
        d: dict[str, Table] = {}
        for t in tables:
            if t.name in d:
                raise InvalidDataset(f"duplicate table name {t.name!r}")
            d[t.name] = t
        return cls(d, tuple(constraints))

    def copy(self) -> "Dataset":
        return Dataset({n: t.copy() for n, t in self.tables.items()}, self.constraints)

    def __getitem__(self, name: str) -> Table:
        return self.tables[name]

    def __contains__(self, name: str) -> bool:
        return name in self.tables

    def record_count(self) -> int:
        return sum(len(t) for t in self.tables.values())

    def iter_records(self) -> Iterator[tuple[str, Record]]:
        for name in sorted(self.tables):
            for r in self.tables[name].records.values():
                yield name, r

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        if self.constraints != other.constraints or self.tables.keys() != other.tables.keys():
            return False
        for name, t in self.tables.items():
            o = other.tables[name].records
            if t.records.keys() != o.keys():
                return False
            for k, r in t.records.items():
                if r != o[k]:
                    return False
        return True

    def unknown_constraint_tables(self) -> list[str]:
        return sorted({n for fk in self.constraints for n in (fk.from_table, fk.to_table) if n not in self.tables})


def validate_dataset(ds: Dataset) -> None:
    for name, t in ds.tables.items():
        for k, r in t.records.items():
            if r.key != k:
                raise InvalidDataset(f"record stored under {k!r} has key {r.key!r}")
    missing = ds.unknown_constraint_tables()
    if missing:
        raise InvalidDataset(f"constraints reference unknown tables: {missing}")


def encode_dataset(ds: Dataset) -> bytes:
    """Body of a snapshot: tables sorted by name, records sorted by key."""
    out = bytearray()
    encode_u32(len(ds.tables), out)
    for name in sorted(ds.tables):
        recs = ds.tables[name].records
        _encode_text(name, out)
        encode_u32(len(recs), out)
        for k in sorted(recs):
            out += recs[k].canonical()
    encode_u32(len(ds.constraints), out)
    for fk in ds.constraints:
        _encode_text(fk.from_table, out)
        _encode_text(fk.from_attr, out)
        _encode_text(fk.to_table, out)
    return bytes(out)


def decode_dataset(buf: bytes, pos: int = 0) -> tuple[Dataset, int]:
    ntables, pos = decode_u32(buf, pos)
    tables = {}
    for _ in range(ntables):
        name, pos = decode_text(buf, pos)
        n, pos = decode_u32(buf, pos)
        recs = {}
        for _ in range(n):
            r, pos = parse_record(buf, pos)
            recs[r.key] = r
        tables[name] = Table(name, recs)
    nfk, pos = decode_u32(buf, pos)
    fks = []
    for _ in range(nfk):
        a, pos = decode_text(buf, pos)
        b, pos = decode_text(buf, pos)
        c, pos = decode_text(buf, pos)
        fks.append(ForeignKey(a, b, c))
    return Dataset(tables, tuple(fks)), pos


def dataset_hash(ds: Dataset) -> bytes:
    return content_hash(encode_dataset(ds))


def snapshot_size(ds: Dataset) -> int:
    """Byte length of ``encode_dataset(ds)`` without building it."""
    n = 4 + 4
    for name, t in ds.tables.items():
        n += 5 + len(name.encode("utf-8")) + 4
        for r in t.records.values():
            n += len(r.canonical())
    for fk in ds.constraints:
        n += 15 + sum(len(s.encode("utf-8")) for s in (fk.from_table, fk.from_attr, fk.to_table))
    return n


def blob_record(key: str, content: bytes) -> Record:
    """Unstructured data: one record holding the whole file."""
    return Record(key, {"content": bytes(content)})
