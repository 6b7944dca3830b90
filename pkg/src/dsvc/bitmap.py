"""Compressed sets of version ids.

Ids are split into a high part (``v >> 16``) selecting a container and a
16-bit low part stored in it.  A container is either a sorted array of lows
or a list of inclusive runs ``(start, last)``; runs are used when they take at
most half the bytes of the array form.  A temporal interval over a linear
history is exactly one run.
"""
from __future__ import annotations

import bisect
import struct
from typing import Iterable, Iterator

ARRAY, RUNS = 0, 1
_CHDR = struct.Struct(">QBI")
_U16 = struct.Struct(">H")
_U16x2 = struct.Struct(">HH")


def _to_runs(values: list[int]) -> list[tuple[int, int]]:
    runs: list[tuple[int, int]] = []
    if not values:
        return runs
    start = last = values[0]
    for v in values[1:]:
        if v == last + 1:
            last = v
        else:
            runs.append((start, last))
            start = last = v
    runs.append((start, last))
    return runs


def _count_runs(values: list[int]) -> int:
    n = 0
    prev = -2
    for v in values:
        if v != prev + 1:
            n += 1
        prev = v
    return n


class _Container:
    __slots__ = ("kind", "data", "card")

    def __init__(self, kind: int, data: list, card: int):
        self.kind = kind
        self.data = data
        self.card = card

    @classmethod
    def from_sorted(cls, values: list[int]) -> "_Container":
        nruns = _count_runs(values)
        if 2 + 4 * nruns <= len(values):  # <= half of 2 bytes per array entry
            return cls(RUNS, _to_runs(values), len(values))
        return cls(ARRAY, list(values), len(values))

    @classmethod
    def from_runs(cls, runs: list[tuple[int, int]]) -> "_Container":
        card = sum(b - a + 1 for a, b in runs)
        if 2 + 4 * len(runs) <= card:
            return cls(RUNS, runs, card)
        return cls(ARRAY, [v for a, b in runs for v in range(a, b + 1)], card)

    def values(self) -> list[int]:
        if self.kind == ARRAY:
            return self.data
        return [v for a, b in self.data for v in range(a, b + 1)]

    def runs(self) -> list[tuple[int, int]]:
        return self.data if self.kind == RUNS else _to_runs(self.data)

    def __contains__(self, low: int) -> bool:
        if self.kind == ARRAY:
            i = bisect.bisect_left(self.data, low)
            return i < len(self.data) and self.data[i] == low
        i = bisect.bisect_right(self.data, (low, 1 << 17)) - 1
        return i >= 0 and self.data[i][0] <= low <= self.data[i][1]

    def add(self, low: int) -> bool:
        if low in self:
            return False
        if self.kind == RUNS:
            runs = self.data
            if runs and runs[-1][1] == low - 1:
                runs[-1] = (runs[-1][0], low)
            else:
                vals = self.values()
                bisect.insort(vals, low)
                self._reset(vals)
                return True
            self.card += 1
            return True
        bisect.insort(self.data, low)
        self.card += 1
        if self.card % 32 == 0:
            self._reset(self.data)
        return True

    def discard(self, low: int) -> bool:
        if low not in self:
            return False
        vals = list(self.values())
        vals.remove(low)
        self._reset(vals)
        return True

    def _reset(self, vals: list[int]) -> None:
        c = _Container.from_sorted(vals)
        self.kind, self.data, self.card = c.kind, c.data, c.card

    def nbytes(self) -> int:
        return 2 + 4 * len(self.data) if self.kind == RUNS else 2 * self.card


def _merge_runs(a: list[tuple[int, int]], b: list[tuple[int, int]]) -> list[tuple[int, int]]:
    out: list[tuple[int, int]] = []
    for s, e in sorted(a + b):
        if out and s <= out[-1][1] + 1:
            if e > out[-1][1]:
                out[-1] = (out[-1][0], e)
        else:
            out.append((s, e))
    return out


def _intersect_runs(a: list[tuple[int, int]], b: list[tuple[int, int]]) -> list[tuple[int, int]]:
    out = []
    i = j = 0
    while i < len(a) and j < len(b):
        s = max(a[i][0], b[j][0])
        e = min(a[i][1], b[j][1])
        if s <= e:
            out.append((s, e))
        if a[i][1] < b[j][1]:
            i += 1
        else:
            j += 1
    return out


def _subtract_runs(a: list[tuple[int, int]], b: list[tuple[int, int]]) -> list[tuple[int, int]]:
    out = []
    j = 0
    for s, e in a:
        cur = s
        while j < len(b) and b[j][1] < cur:
            j += 1
        k = j
        while k < len(b) and b[k][0] <= e:
            if b[k][0] > cur:
                out.append((cur, b[k][0] - 1))
            cur = max(cur, b[k][1] + 1)
            if cur > e:
                break
            k += 1
        if cur <= e:
            out.append((cur, e))
    return out


class VersionBitmap:
    """Exact compressed set of non-negative integers."""

    __slots__ = ("_c",)

    def __init__(self, values: Iterable[int] = ()):
        self._c: dict[int, _Container] = {}
        buckets: dict[int, list[int]] = {}
        for v in values:
            if v < 0:
                raise ValueError("bitmap values must be non-negative")
            buckets.setdefault(v >> 16, []).append(v & 0xFFFF)
        for hi, lows in buckets.items():
            self._c[hi] = _Container.from_sorted(sorted(set(lows)))

    @classmethod
    def from_range(cls, start: int, stop: int) -> "VersionBitmap":
        bm = cls()
        v = start
        while v < stop:
            hi = v >> 16
            end = min(stop, (hi + 1) << 16)
            bm._c[hi] = _Container.from_runs([(v & 0xFFFF, (end - 1) & 0xFFFF)])
            v = end
        return bm

    def add(self, v: int) -> None:
        if v < 0:
            raise ValueError("bitmap values must be non-negative")
        c = self._c.get(v >> 16)
        if c is None:
            self._c[v >> 16] = _Container(ARRAY, [v & 0xFFFF], 1)
        else:
            c.add(v & 0xFFFF)

    def discard(self, v: int) -> None:
        c = self._c.get(v >> 16)
        if c is not None and c.discard(v & 0xFFFF) and c.card == 0:
            del self._c[v >> 16]

    def __contains__(self, v: int) -> bool:
        c = self._c.get(v >> 16)
        return c is not None and (v & 0xFFFF) in c

    def __iter__(self) -> Iterator[int]:
        for hi in sorted(self._c):
            base = hi << 16
            for low in self._c[hi].values():
                yield base + low

    def __len__(self) -> int:
        return sum(c.card for c in self._c.values())

    def __bool__(self) -> bool:
        return bool(self._c)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, VersionBitmap):
            return NotImplemented
        if self._c.keys() != other._c.keys():
            return False
        return all(self._c[h].runs() == other._c[h].runs() for h in self._c)

    def __repr__(self) -> str:
        return f"VersionBitmap({list(self)})"

    def copy(self) -> "VersionBitmap":
        bm = VersionBitmap()
        for hi, c in self._c.items():
            bm._c[hi] = _Container(c.kind, list(c.data), c.card)
        return bm

    def _combine(self, other: "VersionBitmap", op: str) -> "VersionBitmap":
        out = VersionBitmap()
        if op == "or":
            his = self._c.keys() | other._c.keys()
        elif op == "and":
            his = self._c.keys() & other._c.keys()
        else:
            his = set(self._c.keys())
        for hi in his:
            a, b = self._c.get(hi), other._c.get(hi)
            if b is None:
                runs = a.runs() if op != "and" else []
            elif a is None:
                runs = b.runs() if op == "or" else []
            elif op == "or":
                runs = _merge_runs(a.runs(), b.runs())
            elif op == "and":
                runs = _intersect_runs(a.runs(), b.runs())
            else:
                runs = _subtract_runs(a.runs(), b.runs())
            if runs:
                out._c[hi] = _Container.from_runs(list(runs))
        return out

    @classmethod
    def union_all(cls, bitmaps: Iterable["VersionBitmap"]) -> "VersionBitmap":
        runs: dict[int, list[tuple[int, int]]] = {}
        for bm in bitmaps:
            for hi, c in bm._c.items():
                runs.setdefault(hi, []).extend(c.runs())
        out = cls()
        for hi, rs in runs.items():
            out._c[hi] = _Container.from_runs(_merge_runs(rs, []))
        return out

    def __or__(self, other: "VersionBitmap") -> "VersionBitmap":
        return self._combine(other, "or")

    def __and__(self, other: "VersionBitmap") -> "VersionBitmap":
        return self._combine(other, "and")

    def __sub__(self, other: "VersionBitmap") -> "VersionBitmap":
        return self._combine(other, "sub")

    def complement(self, universe: "VersionBitmap") -> "VersionBitmap":
        return universe - self

    def container_kinds(self) -> dict[int, str]:
        return {hi: ("runs" if c.kind == RUNS else "array") for hi, c in self._c.items()}

    def nbytes(self) -> int:
        return sum(c.nbytes() for c in self._c.values())

    def to_bytes(self) -> bytes:
        out = bytearray(struct.pack(">I", len(self._c)))
        for hi in sorted(self._c):
            c = self._c[hi]
            out += _CHDR.pack(hi, c.kind, len(c.data))
            if c.kind == ARRAY:
                out += b"".join(_U16.pack(v) for v in c.data)
            else:
                out += b"".join(_U16x2.pack(a, b) for a, b in c.data)
        return bytes(out)

    @classmethod
    def from_bytes(cls, data: bytes, pos: int = 0) -> tuple["VersionBitmap", int]:
        (n,) = struct.unpack_from(">I", data, pos)
        pos += 4
        bm = cls()
        for _ in range(n):
            hi, kind, m = _CHDR.unpack_from(data, pos)
            pos += _CHDR.size
            if kind == ARRAY:
                vals = [_U16.unpack_from(data, pos + 2 * i)[0] for i in range(m)]
                pos += 2 * m
                bm._c[hi] = _Container(ARRAY, vals, m)
            elif kind == RUNS:
                runs = [_U16x2.unpack_from(data, pos + 4 * i) for i in range(m)]
                pos += 4 * m
                bm._c[hi] = _Container(RUNS, runs, sum(b - a + 1 for a, b in runs))
            else:
                raise ValueError(f"unknown container kind {kind}")
        return bm, pos
