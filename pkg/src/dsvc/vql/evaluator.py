"""Evaluating VQL against a repository.

A query's FROM list is a cross product filtered by WHERE.  Conjuncts that
mention a single FROM item are applied to that item's rows before joining,
and equality conjuncts between two items drive a hash join; the result is
the same as the plain nested loop.

``EXISTS (SELECT ... FROM R(VNUM) WHERE <attribute comparisons>)`` is served
by the record-first index: the satisfying states' version bitmaps are OR-ed
once and each outer version is then a bitmap probe.  Everything else reads
versions through the version-first store.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any, Iterable

from ..delta import diff_recs, restrict
from ..errors import (
    NonScalarVersionSubquery,
    UnknownTable,
    UnknownVersion,
    UnresolvedReference,
    VqlTypeError,
)
from ..model import Dataset, Record, value_sort_key
from ..predicate import KEY_ATTR, Comparison, Predicate, compare, record_value
from .ast import (
    Agg,
    And,
    Call,
    ColumnRef,
    Compare,
    Exists,
    Literal,
    Not,
    Or,
    Select,
    Star,
    TableAt,
    VersionLit,
    VersionsOf,
    VnumRef,
)
from .parser import parse
from .printer import expr_text, ref_text

_FLIP = {"=": "=", "!=": "!=", "<": ">", "<=": ">=", ">": "<", ">=": "<="}


@dataclass
class ResultSet:
    columns: tuple[str, ...]
    rows: list[tuple]

    def __len__(self) -> int:
        return len(self.rows)

    def column(self, name: str) -> list:
        i = self.columns.index(name)
        return [r[i] for r in self.rows]

    def to_tsv(self) -> str:
        lines = ["\t".join(_tsv_escape(c) for c in self.columns)]
        for r in self.rows:
            lines.append("\t".join(_tsv_cell(v) for v in r))
        return "\n".join(lines) + "\n"

    def to_jsonl(self) -> str:
        from ..jsonvalues import value_to_json

        out = []
        for r in self.rows:
            out.append(json.dumps({c: value_to_json(v) for c, v in zip(self.columns, r)}, sort_keys=True))
        return "".join(line + "\n" for line in out)


def _tsv_escape(s: str) -> str:
    return s.replace("\\", "\\\\").replace("\t", "\\t").replace("\n", "\\n").replace("\r", "\\r")


def _tsv_cell(v: Any) -> str:
    if v is None:
        return "\\N"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, bytes):
        return "\\x" + v.hex()
    return _tsv_escape(str(v))


def sort_rows(rows: Iterable[tuple]) -> list[tuple]:
    return sorted(rows, key=lambda r: tuple(value_sort_key(v) for v in r))


# scopes -------------------------------------------------------------------


@dataclass
class _Scope:
    """FROM items of one SELECT, plus the row currently bound to each label."""

    items: dict[str, Any]
    row: dict[str, Any] = field(default_factory=dict)
    versions: dict[str, int] = field(default_factory=dict)  # TableAt label -> version read


def _labels(q: Select) -> dict[str, Any]:
    out: dict[str, Any] = {}
    for f in q.from_:
        if f.label in out:
            raise UnresolvedReference(f"FROM item {f.label!r} appears twice; give one an alias")
        out[f.label] = f
    return out


def _resolve_column(ref: ColumnRef, scopes: list[_Scope]) -> tuple[int, str]:
    """(scope depth, label) owning a column reference; innermost scope first."""
    for depth in range(len(scopes) - 1, -1, -1):
        items = scopes[depth].items
        if ref.qualifier is not None:
            f = items.get(ref.qualifier)
            if f is None:
                continue
            if isinstance(f, VersionsOf):
                raise UnresolvedReference(f"{ref.qualifier} is a version list; only VNUM can be selected from it")
            return depth, ref.qualifier
        tables = [lab for lab, f in items.items() if isinstance(f, TableAt)]
        if len(tables) == 1:
            return depth, tables[0]
        if len(tables) > 1:
            raise UnresolvedReference(f"column {ref.name!r} is ambiguous; qualify it with one of {sorted(tables)}")
    raise UnresolvedReference(f"cannot resolve column {ref_text(ref)!r}")


def _resolve_vnum(ref: VnumRef, scopes: list[_Scope]) -> tuple[int, str]:
    for depth in range(len(scopes) - 1, -1, -1):
        items = scopes[depth].items
        if ref.qualifier is not None:
            f = items.get(ref.qualifier)
            if f is None:
                continue
            if not isinstance(f, VersionsOf):
                raise UnresolvedReference(f"{ref.qualifier} has no VNUM column")
            return depth, ref.qualifier
        vs = [lab for lab, f in items.items() if isinstance(f, VersionsOf)]
        if len(vs) == 1:
            return depth, vs[0]
        if len(vs) > 1:
            raise UnresolvedReference(f"VNUM is ambiguous; qualify it with one of {sorted(vs)}")
    raise UnresolvedReference(f"cannot resolve {ref_text(ref)}: no VERSIONS(...) in scope")


def _local_refs(e, scopes: list[_Scope]) -> set[str]:
    """Labels of the innermost scope that expression ``e`` depends on."""
    depth = len(scopes) - 1
    out: set[str] = set()

    def walk(x, ss):
        if isinstance(x, (ColumnRef, VnumRef)):
            d, lab = _resolve_column(x, ss) if isinstance(x, ColumnRef) else _resolve_vnum(x, ss)
            if d == depth:
                out.add(lab)
        elif isinstance(x, Call):
            walk(x.a, ss)
            walk(x.b, ss)
        elif isinstance(x, Compare):
            walk(x.left, ss)
            walk(x.right, ss)
        elif isinstance(x, (And, Or)):
            walk(x.left, ss)
            walk(x.right, ss)
        elif isinstance(x, Not):
            walk(x.expr, ss)
        elif isinstance(x, Exists):
            walk_select(x.query, ss)

    def walk_select(q: Select, ss):
        inner = ss + [_Scope(_labels(q))]
        for f in q.from_:
            if isinstance(f, TableAt) and f.version is not None and not isinstance(f.version, VersionLit):
                if isinstance(f.version, VnumRef):
                    walk(f.version, ss)
                else:
                    walk_select(f.version, ss)
        if q.where is not None:
            walk(q.where, inner)
        if not isinstance(q.items, Star):
            for it in q.items:
                walk(it.arg if isinstance(it, Agg) else it, inner)

    walk(e, scopes)
    return out


def _conjuncts(e) -> list:
    if e is None:
        return []
    if isinstance(e, And):
        return _conjuncts(e.left) + _conjuncts(e.right)
    return [e]


def _hash_key(v: Any):
    """Key under which equal values (as :func:`compare` defines equality) collide."""
    if v is None or v != v:
        return None
    if isinstance(v, bool):
        return (1, v)
    if isinstance(v, (int, float)):
        return (2, v)  # 1 == 1.0 and hash(1) == hash(1.0)
    if isinstance(v, str):
        return (3, v)
    return (4, v)


# evaluator ----------------------------------------------------------------


class Evaluator:
    def __init__(self, repo, use_record_first: bool = True):
        self.repo = repo
        self.use_record_first = use_record_first
        self._datasets: dict[int, Dataset] = {}
        self._rows: dict[tuple[str, int], list[Record]] = {}
        self._diff: dict[tuple[str, int, int], int] = {}
        self._bitmaps: dict[tuple, Any] = {}
        self._index = None
        self.stats = {"record_first_probes": 0, "version_first_scans": 0}

    # data access -------------------------------------------------------

    def dataset(self, v: int) -> Dataset:
        if v not in self._datasets:
            if v not in self.repo.graph.nodes:
                raise UnknownVersion(f"unknown version {v}")
            self._datasets[v] = self.repo.store.materialize(v)
        return self._datasets[v]

    def table_rows(self, name: str, v: int) -> list[Record]:
        key = (name, v)
        if key not in self._rows:
            ds = self.dataset(v)
            t = ds.tables.get(name)
            if t is None:
                raise UnknownTable(f"table {name!r} does not exist in version {v}")
            self._rows[key] = [t.records[k] for k in sorted(t.records)]
            self.stats["version_first_scans"] += 1
        return self._rows[key]

    def index(self):
        if self._index is None:
            self._index = self.repo.rf_index()
        return self._index

    def versions_of(self, name: str) -> list[int]:
        """Every version in which table ``name`` exists (empty or not)."""
        if self.use_record_first:
            bm = self.index().table_versions.get(name)
            return list(bm) if bm is not None else []
        return [v for v in self.repo.graph.versions() if name in self.dataset(v).tables]

    def default_version(self) -> int:
        branch = self.repo.config.default_branch
        v = self.repo.graph.refs.get(branch)
        if v is None:
            raise UnknownVersion(f"branch {branch!r} has no versions")
        return v

    # queries -----------------------------------------------------------

    def run(self, q: Select) -> ResultSet:
        return self._select(q, [])

    def _select(self, q: Select, outer: list[_Scope]) -> ResultSet:
        scope = _Scope(_labels(q))
        scopes = outer + [scope]
        cols, project, is_agg = self._projection(q, scopes)
        out = []
        for _ in self._bindings(q, scopes):
            out.append(project())
        if isinstance(q.items, Star):
            cols, rows = self._star_columns(q, out)
        elif is_agg:
            rows = [self._aggregate(q.items, out)]
        else:
            rows = sort_rows(out)
        return ResultSet(tuple(cols), rows)

    def _source_rows(self, f, scopes: list[_Scope]) -> tuple[list, int | None]:
        if isinstance(f, VersionsOf):
            return self.versions_of(f.name), None
        v = self._version_of(f, scopes[:-1])
        return self.table_rows(f.name, v), v

    def _version_of(self, f: TableAt, outer: list[_Scope]) -> int:
        ver = f.version
        if ver is None:
            return self.default_version()
        if isinstance(ver, VersionLit):
            return ver.version
        if isinstance(ver, VnumRef):
            return self._vnum(ver, outer)
        res = self._select(ver, outer)
        if len(res.columns) != 1 or len(res.rows) != 1 or type(res.rows[0][0]) is not int:
            raise NonScalarVersionSubquery(
                f"version subquery for {f.name} must yield exactly one version number, got {res.rows[:3]}")
        return res.rows[0][0]

    def _bindings(self, q: Select, scopes: list[_Scope]):
        """Yield once per satisfying combination, with ``scopes[-1].row`` bound."""
        scope = scopes[-1]
        sources = {}
        for f in q.from_:
            rows, v = self._source_rows(f, scopes)
            sources[f.label] = rows
            if v is not None:
                scope.versions[f.label] = v
        conj = _conjuncts(q.where)
        deps = [(c, _local_refs(c, scopes)) for c in conj]
        # constant conjuncts (only outer references) decide the whole query at once
        for c, d in deps:
            if not d and not self._truth(c, scopes):
                return
        order = [f.label for f in q.from_]
        for lab in order:
            singles = [c for c, d in deps if d == {lab}]
            if singles:
                keep = []
                for r in sources[lab]:
                    scope.row[lab] = r
                    if all(self._truth(c, scopes) for c in singles):
                        keep.append(r)
                sources[lab] = keep
        multi = [(c, d) for c, d in deps if len(d) > 1]
        yield from self._join(order, 0, sources, multi, scopes, set())

    def _join(self, order, i, sources, multi, scopes, bound: set):
        scope = scopes[-1]
        if i == len(order):
            yield None
            return
        lab = order[i]
        now = bound | {lab}
        ready = [c for c, d in multi if d <= now and not d <= bound]
        probe = None
        for c in ready:
            if isinstance(c, Compare) and c.op == "=":
                sides = self._join_sides(c, lab, bound, scopes)
                if sides is not None:
                    probe = (c, sides)
                    break
        rows = sources[lab]
        if probe is not None:
            c, (mine, theirs) = probe
            table: dict[Any, list] = {}
            for r in rows:
                scope.row[lab] = r
                k = _hash_key(self._value(mine, scopes))
                if k is not None:
                    table.setdefault(k, []).append(r)
            k = _hash_key(self._value(theirs, scopes))
            rows = table.get(k, []) if k is not None else []
            ready = [x for x in ready if x is not c]
        for r in rows:
            scope.row[lab] = r
            if all(self._truth(c, scopes) for c in ready):
                yield from self._join(order, i + 1, sources, multi, scopes, now)

    def _join_sides(self, c: Compare, lab: str, bound: set, scopes):
        """For ``a = b`` with one side on ``lab`` and the other on bound items, (lab side, other side)."""
        dl = _local_refs(c.left, scopes) if not isinstance(c.left, Literal) else set()
        dr = _local_refs(c.right, scopes) if not isinstance(c.right, Literal) else set()
        if dl == {lab} and dr and dr <= bound:
            return c.left, c.right
        if dr == {lab} and dl and dl <= bound:
            return c.right, c.left
        return None

    # expressions -------------------------------------------------------

    def _value(self, o, scopes: list[_Scope]) -> Any:
        if isinstance(o, Literal):
            return o.value
        if isinstance(o, ColumnRef):
            depth, lab = _resolve_column(o, scopes)
            row = scopes[depth].row[lab]
            return record_value(row, o.name)
        if isinstance(o, VnumRef):
            return self._vnum(o, scopes)
        if isinstance(o, Call):
            return self._call(o, scopes)
        raise VqlTypeError(f"not a value: {o!r}")

    def _vnum(self, ref: VnumRef, scopes: list[_Scope]) -> int:
        depth, lab = _resolve_vnum(ref, scopes)
        if lab not in scopes[depth].row:
            raise UnresolvedReference(f"{ref_text(ref)} is not bound here")
        return scopes[depth].row[lab]

    def _vterm(self, t, scopes) -> int:
        if isinstance(t, VersionLit):
            return t.version
        return self._vnum(t, scopes)

    def _call(self, c: Call, scopes) -> int:
        a, b = self._vterm(c.a, scopes), self._vterm(c.b, scopes)
        for v in (a, b):
            if c.table not in self.dataset(v).tables:
                raise UnknownTable(f"table {c.table!r} does not exist in version {v}")
        if c.fn == "DISTANCE":
            return self.repo.graph.distance(a, b)
        key = (c.table, min(a, b), max(a, b))
        if key not in self._diff:
            self._diff[key] = diff_recs(restrict(self.dataset(a), [c.table]), restrict(self.dataset(b), [c.table]))
        return self._diff[key]

    def _truth(self, e, scopes: list[_Scope]) -> bool:
        if isinstance(e, Compare):
            return compare(e.op, self._value(e.left, scopes), self._value(e.right, scopes))
        if isinstance(e, And):
            return self._truth(e.left, scopes) and self._truth(e.right, scopes)
        if isinstance(e, Or):
            return self._truth(e.left, scopes) or self._truth(e.right, scopes)
        if isinstance(e, Not):
            return not self._truth(e.expr, scopes)
        if isinstance(e, Exists):
            return self._exists(e.query, scopes)
        raise VqlTypeError(f"not a condition: {e!r}")

    def _exists(self, q: Select, scopes: list[_Scope]) -> bool:
        route = record_first_route(q) if self.use_record_first else None
        if route is None:
            return any(True for _ in self._bindings(q, scopes + [_Scope(_labels(q))]))
        table, vref, pred = route
        v = self._vnum(vref, scopes)
        idx = self.index()
        tv = idx.table_versions.get(table)
        if tv is None or v not in tv:
            if v not in self.repo.graph.nodes:
                raise UnknownVersion(f"unknown version {v}")
            raise UnknownTable(f"table {table!r} does not exist in version {v}")
        key = (table, pred)
        bm = self._bitmaps.get(key)
        if bm is None:
            from ..rfindex import versions_matching

            bm = self._bitmaps[key] = versions_matching(idx, table, pred)
        self.stats["record_first_probes"] += 1
        return v in bm

    # projection --------------------------------------------------------

    def _projection(self, q: Select, scopes: list[_Scope]):
        scope = scopes[-1]
        if isinstance(q.items, Star):
            labels = [f.label for f in q.from_]
            return labels, (lambda: tuple(scope.row[lab] for lab in labels)), False
        aggs = [isinstance(i, Agg) for i in q.items]
        if any(aggs) and not all(aggs):
            raise VqlTypeError("aggregates cannot be mixed with plain columns (there is no GROUP BY)")
        exprs = [i.arg if isinstance(i, Agg) else i for i in q.items]
        for x in exprs:  # resolve eagerly so errors surface even on empty inputs
            if isinstance(x, ColumnRef):
                _resolve_column(x, scopes)
            else:
                _resolve_vnum(x, scopes)
        cols = [_item_name(i) for i in q.items]
        return cols, (lambda: tuple(self._value(x, scopes) for x in exprs)), all(aggs)

    def _aggregate(self, items, rows: list[tuple]) -> tuple:
        out = []
        for i, it in enumerate(items):
            vals = [r[i] for r in rows if r[i] is not None]
            if it.fn == "COUNT":
                out.append(len(vals))
            elif not vals:
                out.append(None)
            elif it.fn == "MIN":
                out.append(min(vals, key=value_sort_key))
            else:
                out.append(max(vals, key=value_sort_key))
        return tuple(out)

    def _star_columns(self, q: Select, bound: list[tuple]) -> tuple[list[str], list[tuple]]:
        """Expand ``*``: VNUM for version lists, ``_key`` plus every attribute seen for tables."""
        labels = [f.label for f in q.from_]
        single = len(labels) == 1
        per_item = []
        for j, f in enumerate(q.from_):
            if isinstance(f, VersionsOf):
                per_item.append(["VNUM"])
            else:
                names = set()
                for row in bound:
                    names.update(row[j].attrs)
                per_item.append([KEY_ATTR] + sorted(names))
        cols = []
        for lab, names in zip(labels, per_item):
            cols.extend(names if single else [f"{lab}.{n}" for n in names])
        rows = []
        for row in bound:
            vals = []
            for j, f in enumerate(q.from_):
                if isinstance(f, VersionsOf):
                    vals.append(row[j])
                else:
                    vals.extend(record_value(row[j], n) for n in per_item[j])
            rows.append(tuple(vals))
        return cols, sort_rows(rows)

    # explain -----------------------------------------------------------

    def explain(self, q: Select) -> str:
        lines: list[str] = []
        self._explain_select(q, 0, lines)
        return "\n".join(lines) + "\n"

    def _explain_select(self, q: Select, depth: int, lines: list[str]) -> None:
        pad = "  " * depth
        items = "*" if isinstance(q.items, Star) else ", ".join(_item_name(i) for i in q.items)
        lines.append(f"{pad}Select {items}")
        if q.where is not None:
            lines.append(f"{pad}  Filter {expr_text(q.where)}")
        if len(q.from_) > 1:
            lines.append(f"{pad}  NestedLoopJoin")
            inner = depth + 2
        else:
            inner = depth + 1
        for f in q.from_:
            ipad = "  " * inner
            if isinstance(f, VersionsOf):
                lines.append(f"{ipad}VersionsScan {f.name}" + (f" AS {f.alias}" if f.alias else ""))
                continue
            ver = f.version
            if ver is None:
                desc = f"{f.name}@{self.repo.config.default_branch}"
            elif isinstance(ver, VersionLit):
                desc = f"{f.name}@{ver.version}"
            elif isinstance(ver, VnumRef):
                desc = f"{f.name}({ref_text(ver)})"
            else:
                desc = f"{f.name}(subquery)"
            lines.append(f"{ipad}VersionFirstScan {desc}" + (f" AS {f.alias}" if f.alias else ""))
            if isinstance(ver, Select):
                lines.append(f"{ipad}  VersionSubquery")
                self._explain_select(ver, inner + 2, lines)
        for e in _exists_nodes(q.where):
            route = record_first_route(e.query) if self.use_record_first else None
            if route is not None:
                table, vref, pred = route
                lines.append(f"{pad}  Exists RecordFirstScan {table}({ref_text(vref)}) [{pred}]")
            else:
                lines.append(f"{pad}  Exists")
                self._explain_select(e.query, depth + 2, lines)


def _exists_nodes(e) -> list[Exists]:
    if e is None or isinstance(e, Compare):
        return []
    if isinstance(e, Exists):
        return [e]
    if isinstance(e, Not):
        return _exists_nodes(e.expr)
    return _exists_nodes(e.left) + _exists_nodes(e.right)


def _item_name(i) -> str:
    if isinstance(i, Agg):
        return f"{i.fn}({ref_text(i.arg)})"
    return ref_text(i)


def record_first_route(q: Select):
    """``(table, vnum_ref, predicate)`` when an EXISTS body can be answered from the index.

    That is a single ``R(VNUM)`` item whose WHERE is a conjunction of
    comparisons between one of its columns and a literal.
    """
    if len(q.from_) != 1:
        return None
    f = q.from_[0]
    if not isinstance(f, TableAt) or not isinstance(f.version, VnumRef):
        return None
    pred = simple_predicate(q.where, f.label)
    return None if pred is None else (f.name, f.version, pred)


def simple_predicate(where, label: str | None = None) -> Predicate | None:
    """The conjunction of column-vs-literal comparisons ``where`` consists of, else None."""
    terms = []
    for c in _conjuncts(where):
        if not isinstance(c, Compare):
            return None
        left, right, op = c.left, c.right, c.op
        if isinstance(left, Literal) and isinstance(right, ColumnRef):
            left, right, op = right, left, _FLIP[op]
        if not (isinstance(left, ColumnRef) and isinstance(right, Literal)):
            return None
        if left.qualifier is not None and left.qualifier != label:
            return None
        terms.append(Comparison(left.name, op, right.value))
    return Predicate(tuple(terms))


def parse_predicate(text: str) -> Predicate:
    """Parse ``attr op literal [AND ...]`` as used by ``update-where``."""
    q = parse(f"SELECT * FROM t WHERE {text}")
    pred = simple_predicate(q.where)
    if pred is None:
        raise VqlTypeError("expected comparisons of an attribute with a literal joined by AND")
    return pred


def evaluate(repo, query: str | Select, use_record_first: bool = True) -> ResultSet:
    q = parse(query) if isinstance(query, str) else query
    return Evaluator(repo, use_record_first).run(q)


def explain(repo, query: str | Select, use_record_first: bool = True) -> str:
    q = parse(query) if isinstance(query, str) else query
    return Evaluator(repo, use_record_first).explain(q)
