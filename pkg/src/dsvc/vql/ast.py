"""Syntax tree for VQL queries.  Nodes are frozen so parsed trees compare structurally."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Union


@dataclass(frozen=True)
class Literal:
    value: Any


@dataclass(frozen=True)
class VersionLit:
    """A version given directly: ``124`` or ``v124``."""

    version: int


@dataclass(frozen=True)
class VnumRef:
    qualifier: str | None = None


@dataclass(frozen=True)
class ColumnRef:
    qualifier: str | None
    name: str


@dataclass(frozen=True)
class Call:
    fn: str  # DIFF_RECS | DISTANCE
    table: str
    a: "VersionTerm"
    b: "VersionTerm"


@dataclass(frozen=True)
class Compare:
    op: str
    left: "Operand"
    right: "Operand"


@dataclass(frozen=True)
class And:
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Or:
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Not:
    expr: "Expr"


@dataclass(frozen=True)
class Exists:
    query: "Select"


@dataclass(frozen=True)
class Star:
    pass


@dataclass(frozen=True)
class Agg:
    fn: str  # MIN | MAX | COUNT
    arg: Union[ColumnRef, VnumRef]


@dataclass(frozen=True)
class TableAt:
    """``R``, ``R(124)``, ``R(VNUM)`` or ``R(<subquery>)``; bare ``R`` has ``version=None``."""

    name: str
    version: Union[VersionLit, VnumRef, "Select", None] = None
    alias: str | None = None

    @property
    def label(self) -> str:
        if self.alias:
            return self.alias
        if isinstance(self.version, VersionLit):
            return f"{self.name}({self.version.version})"
        return self.name


@dataclass(frozen=True)
class VersionsOf:
    name: str
    alias: str | None = None

    @property
    def label(self) -> str:
        return self.alias or self.name


@dataclass(frozen=True)
class Select:
    items: Union[Star, tuple]
    from_: tuple
    where: Union["Expr", None] = None


VersionTerm = Union[VersionLit, VnumRef]
Operand = Union[Literal, ColumnRef, VnumRef, Call]
Expr = Union[Compare, And, Or, Not, Exists]
FromItem = Union[TableAt, VersionsOf]
