"""Canonical text for VQL trees; ``parse(to_text(q)) == q``."""
from __future__ import annotations

import math

from .ast import Agg, And, Call, ColumnRef, Compare, Exists, Literal, Not, Or, Select, Star, TableAt, VersionLit, VersionsOf, VnumRef


def literal_text(v) -> str:
    if v is None:
        return "NULL"
    if v is True:
        return "TRUE"
    if v is False:
        return "FALSE"
    if isinstance(v, str):
        return "'" + v.replace("'", "''") + "'"
    if isinstance(v, float):
        if math.isinf(v):
            return "1e999" if v > 0 else "-1e999"
        s = repr(v)
        return s if any(c in s for c in ".e") else s + ".0"
    return str(v)


def ref_text(r) -> str:
    if isinstance(r, VnumRef):
        return f"{r.qualifier}.VNUM" if r.qualifier else "VNUM"
    if isinstance(r, ColumnRef):
        return f"{r.qualifier}.{r.name}" if r.qualifier else r.name
    if isinstance(r, VersionLit):
        return str(r.version)
    raise TypeError(r)


def _operand(o) -> str:
    if isinstance(o, Literal):
        return literal_text(o.value)
    if isinstance(o, Call):
        return f"{o.fn}({o.table}, {ref_text(o.a)}, {ref_text(o.b)})"
    return ref_text(o)


def _item(i) -> str:
    if isinstance(i, Agg):
        return f"{i.fn}({ref_text(i.arg)})"
    return ref_text(i)


def _from(f) -> str:
    if isinstance(f, VersionsOf):
        s = f"VERSIONS({f.name})"
    else:
        s = f.name
        if isinstance(f.version, VersionLit):
            s += f"({f.version.version})"
        elif isinstance(f.version, VnumRef):
            s += f"({ref_text(f.version)})"
        elif isinstance(f.version, Select):
            s += f"({to_text(f.version)})"
    return s + (f" {f.alias}" if f.alias else "")


_PREC = {Or: 1, And: 2, Not: 3}


def expr_text(e, parent: int = 0) -> str:
    if isinstance(e, Compare):
        return f"{_operand(e.left)} {e.op} {_operand(e.right)}"
    if isinstance(e, Exists):
        return f"EXISTS ({to_text(e.query)})"
    p = _PREC[type(e)]
    if isinstance(e, Not):
        s = f"NOT {expr_text(e.expr, p)}"
    else:
        word = "OR" if isinstance(e, Or) else "AND"
        # left-associative: a right child of the same precedence needs parentheses
        s = f"{expr_text(e.left, p)} {word} {expr_text(e.right, p + 1)}"
    return f"({s})" if p < parent else s


def to_text(q: Select) -> str:
    items = "*" if isinstance(q.items, Star) else ", ".join(_item(i) for i in q.items)
    s = f"SELECT {items} FROM " + ", ".join(_from(f) for f in q.from_)
    if q.where is not None:
        s += " WHERE " + expr_text(q.where)
    return s
