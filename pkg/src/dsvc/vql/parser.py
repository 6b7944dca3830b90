"""Tokenizer and recursive-descent parser for VQL.

Keywords are case-insensitive.  Errors report ``line:column`` of the
offending token together with the tokens that would have been accepted.
"""
from __future__ import annotations

import re
from dataclasses import dataclass

from ..errors import UnknownFunction, VqlSyntaxError
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

KEYWORDS = {
    "SELECT", "FROM", "WHERE", "AND", "OR", "NOT", "EXISTS", "VERSIONS", "VNUM",
    "MIN", "MAX", "COUNT", "DIFF_RECS", "DISTANCE", "NULL", "TRUE", "FALSE", "AS",
}
AGGREGATES = ("MIN", "MAX", "COUNT")
FUNCTIONS = ("DIFF_RECS", "DISTANCE")
COMPARE_OPS = ("=", "!=", "<>", "<", "<=", ">", ">=")

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<float>(?:\d+\.\d*|\.\d+)(?:[eE][+-]?\d+)?|\d+[eE][+-]?\d+)
  | (?P<int>\d+)
  | (?P<string>'(?:[^']|'')*')
  | (?P<name>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<op><=|>=|!=|<>|[=<>(),.*\-])
    """,
    re.VERBOSE,
)
_VERSION_NAME = re.compile(r"^[vV](\d+)$")


@dataclass(frozen=True)
class Token:
    kind: str  # int float string name kw op eof
    text: str
    value: object
    line: int
    col: int

    def describe(self) -> str:
        return "end of input" if self.kind == "eof" else repr(self.text)


def tokenize(text: str) -> list[Token]:
    toks = []
    pos = 0
    line, line_start = 1, 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        col = pos - line_start + 1
        if m is None:
            if text[pos] == "'":
                raise VqlSyntaxError("unterminated string literal", line, col)
            raise VqlSyntaxError(f"unexpected character {text[pos]!r}", line, col)
        kind = m.lastgroup
        s = m.group()
        if kind == "ws":
            nl = s.count("\n")
            if nl:
                line += nl
                line_start = pos + s.rfind("\n") + 1
        elif kind == "int":
            toks.append(Token("int", s, int(s), line, col))
        elif kind == "float":
            toks.append(Token("float", s, float(s), line, col))
        elif kind == "string":
            toks.append(Token("string", s, s[1:-1].replace("''", "'"), line, col))
        elif kind == "name":
            up = s.upper()
            if up in KEYWORDS:
                toks.append(Token("kw", s, up, line, col))
            else:
                toks.append(Token("name", s, s, line, col))
        else:
            toks.append(Token("op", s, "!=" if s == "<>" else s, line, col))
        pos = m.end()
    toks.append(Token("eof", "", None, line, len(text) - line_start + 1))
    return toks


class Parser:
    def __init__(self, text: str):
        self.toks = tokenize(text)
        self.i = 0

    # token helpers -------------------------------------------------------

    @property
    def tok(self) -> Token:
        return self.toks[self.i]

    def peek(self, k: int = 1) -> Token:
        return self.toks[min(self.i + k, len(self.toks) - 1)]

    def at_kw(self, *kws: str) -> bool:
        return self.tok.kind == "kw" and self.tok.value in kws

    def at_op(self, *ops: str) -> bool:
        return self.tok.kind == "op" and self.tok.value in ops

    def advance(self) -> Token:
        t = self.tok
        self.i += 1
        return t

    def error(self, expected, message: str | None = None):
        t = self.tok
        raise VqlSyntaxError(message or f"unexpected {t.describe()}", t.line, t.col, expected)

    def expect_kw(self, kw: str) -> Token:
        if not self.at_kw(kw):
            self.error([kw])
        return self.advance()

    def expect_op(self, op: str) -> Token:
        if not self.at_op(op):
            self.error([op])
        return self.advance()

    def expect_name(self) -> str:
        if self.tok.kind != "name":
            self.error(["name"])
        return self.advance().value

    # grammar -------------------------------------------------------------

    def parse(self) -> Select:
        q = self.query()
        if self.tok.kind != "eof":
            self.error(["end of input"])
        return q

    def query(self) -> Select:
        self.expect_kw("SELECT")
        items = self.items()
        self.expect_kw("FROM")
        from_ = [self.from_item()]
        while self.at_op(","):
            self.advance()
            from_.append(self.from_item())
        where = None
        if self.at_kw("WHERE"):
            self.advance()
            where = self.expr()
        return Select(items, tuple(from_), where)

    def items(self):
        if self.at_op("*"):
            self.advance()
            return Star()
        out = [self.item()]
        while self.at_op(","):
            self.advance()
            out.append(self.item())
        return tuple(out)

    def item(self):
        if self.at_kw(*AGGREGATES):
            fn = self.advance().value
            self.expect_op("(")
            if self.at_kw("VNUM"):
                self.advance()
                arg = VnumRef(None)
            elif self.tok.kind == "name":
                arg = self.qualified_ref()
            else:
                self.error(["VNUM", "name"])
            self.expect_op(")")
            return Agg(fn, arg)
        if self.at_kw("VNUM"):
            self.advance()
            return VnumRef(None)
        if self.tok.kind == "name":
            ref = self.qualified_ref()
            if isinstance(ref, (ColumnRef, VnumRef)):
                return ref
        self.error(["*", "VNUM", "MIN", "MAX", "COUNT", "name"])

    def qualified_ref(self):
        """``name``, ``q.name``, ``q.VNUM`` or ``R(v).name``."""
        name_tok = self.tok
        name = self.expect_name()
        qual = None
        if self.at_op("("):
            # NAME( is only legal as R(<version>).column; anything else is a call
            unknown = UnknownFunction(f"unknown function {name}() at {name_tok.line}:{name_tok.col}")
            self.advance()
            try:
                ver = self.version_expr()
                self.expect_op(")")
            except VqlSyntaxError:
                raise unknown from None
            if not self.at_op("."):
                raise unknown
            if not isinstance(ver, VersionLit):
                self.error(["."], "only R(<version number>) can qualify a column")
            qual = f"{name}({ver.version})"
        elif self.at_op("."):
            qual = name
        else:
            return ColumnRef(None, name)
        self.expect_op(".")
        if self.at_kw("VNUM"):
            self.advance()
            return VnumRef(qual)
        return ColumnRef(qual, self.expect_name())

    def from_item(self):
        if self.at_kw("VERSIONS"):
            self.advance()
            self.expect_op("(")
            name = self.expect_name()
            self.expect_op(")")
            return VersionsOf(name, self.alias())
        name = self.expect_name()
        version = None
        if self.at_op("("):
            self.advance()
            version = self.version_expr()
            self.expect_op(")")
        return TableAt(name, version, self.alias())

    def alias(self) -> str | None:
        if self.at_kw("AS"):
            self.advance()
            return self.expect_name()
        if self.tok.kind == "name":
            return self.advance().value
        return None

    def version_expr(self):
        if self.at_kw("SELECT"):
            return self.query()
        return self.vterm()

    def vterm(self):
        t = self.tok
        if t.kind == "int":
            self.advance()
            return VersionLit(t.value)
        if t.kind == "name":
            m = _VERSION_NAME.match(t.text)
            if m and not (self.peek().kind == "op" and self.peek().value == "."):
                self.advance()
                return VersionLit(int(m.group(1)))
            qual = self.advance().value
            self.expect_op(".")
            self.expect_kw("VNUM")
            return VnumRef(qual)
        if self.at_kw("VNUM"):
            self.advance()
            return VnumRef(None)
        self.error(["integer", "vN", "VNUM", "SELECT"])

    # expressions ---------------------------------------------------------

    def expr(self):
        left = self.and_expr()
        while self.at_kw("OR"):
            self.advance()
            left = Or(left, self.and_expr())
        return left

    def and_expr(self):
        left = self.not_expr()
        while self.at_kw("AND"):
            self.advance()
            left = And(left, self.not_expr())
        return left

    def not_expr(self):
        if self.at_kw("NOT"):
            self.advance()
            return Not(self.not_expr())
        return self.primary()

    def primary(self):
        if self.at_kw("EXISTS"):
            self.advance()
            self.expect_op("(")
            q = self.query()
            self.expect_op(")")
            return Exists(q)
        if self.at_op("("):  # operands are never parenthesised, so "(" opens a boolean group
            self.advance()
            e = self.expr()
            self.expect_op(")")
            return e
        left = self.operand()
        if not self.at_op(*COMPARE_OPS):
            self.error(list(COMPARE_OPS))
        op = self.advance().value
        right = self.operand()
        return Compare(op, left, right)

    def operand(self):
        t = self.tok
        if t.kind in ("int", "float", "string"):
            self.advance()
            return Literal(t.value)
        if self.at_op("-") and self.peek().kind in ("int", "float"):
            self.advance()
            return Literal(-self.advance().value)
        if self.at_kw("NULL"):
            self.advance()
            return Literal(None)
        if self.at_kw("TRUE", "FALSE"):
            self.advance()
            return Literal(t.value == "TRUE")
        if self.at_kw("VNUM"):
            self.advance()
            return VnumRef(None)
        if self.at_kw(*FUNCTIONS):
            fn = self.advance().value
            self.expect_op("(")
            table = self.expect_name()
            self.expect_op(",")
            a = self.vterm()
            self.expect_op(",")
            b = self.vterm()
            self.expect_op(")")
            return Call(fn, table, a, b)
        if t.kind == "name":
            return self.qualified_ref()
        self.error(["literal", "name", "VNUM", "DIFF_RECS", "DISTANCE", "EXISTS", "NOT", "("])


def parse(text: str) -> Select:
    return Parser(text).parse()
