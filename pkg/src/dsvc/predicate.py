"""Conjunctions of attribute comparisons over single records.

Shared by predicate updates on working copies and by the record-first
index.  The pseudo-attribute ``_key`` refers to the record key.  A record
that lacks the attribute, or holds a null, satisfies no comparison on it;
values of incomparable types (text vs. number, say) are unequal and unordered.
"""
from __future__ import annotations

import operator
from dataclasses import dataclass
from typing import Any

from .model import Record, check_value

KEY_ATTR = "_key"

_OPS = {
    "=": operator.eq,
    "!=": operator.ne,
    "<": operator.lt,
    "<=": operator.le,
    ">": operator.gt,
    ">=": operator.ge,
}


def _family(v: Any) -> int:
    t = type(v)
    if t is bool:
        return 1
    if t is int or t is float:
        return 2
    if t is str:
        return 3
    if t is bytes:
        return 4
    return 0


def compare(op: str, a: Any, b: Any) -> bool:
    """SQL-ish comparison: null never matches, mixed families only satisfy ``!=``."""
    if a is None or b is None:
        return False
    if _family(a) != _family(b):
        return op == "!="
    return _OPS[op](a, b)


def record_value(r: Record, attr: str) -> Any:
    if attr == KEY_ATTR:
        return r.key
    return r.attrs.get(attr)


@dataclass(frozen=True)
class Comparison:
    attr: str
    op: str
    value: Any

    def __post_init__(self):
        if self.op not in _OPS:
            raise ValueError(f"unknown comparison operator {self.op!r}")
        check_value(self.value)

    def matches(self, r: Record) -> bool:
        return compare(self.op, record_value(r, self.attr), self.value)

    def __str__(self) -> str:
        v = self.value
        lit = "'" + v.replace("'", "''") + "'" if isinstance(v, str) else ("NULL" if v is None else repr(v).lower() if isinstance(v, bool) else repr(v))
        return f"{self.attr} {self.op} {lit}"


@dataclass(frozen=True)
class Predicate:
    terms: tuple[Comparison, ...] = ()

    def matches(self, r: Record) -> bool:
        return all(t.matches(r) for t in self.terms)

    def __call__(self, r: Record) -> bool:
        return self.matches(r)

    def __str__(self) -> str:
        return " AND ".join(str(t) for t in self.terms) or "TRUE"

    def to_json(self) -> list:
        from .jsonvalues import value_to_json

        return [[t.attr, t.op, value_to_json(t.value)] for t in self.terms]

    @classmethod
    def from_json(cls, data: list) -> "Predicate":
        from .jsonvalues import value_from_json

        return cls(tuple(Comparison(a, op, value_from_json(v)) for a, op, v in data))


def where(**eq: Any) -> Predicate:
    """Equality conjunction, e.g. ``where(dept="a")``."""
    return Predicate(tuple(Comparison(k, "=", v) for k, v in sorted(eq.items())))
