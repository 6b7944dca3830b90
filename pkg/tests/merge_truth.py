"""Hand-written merge truth table: every pair of base-relative ops under both strategies."""
from dsvc import Dataset, Record, Table
from dsvc.delta import compute_delta
from dsvc.merge import ConflictKind, Strategy, classify

BASE = Record("k", {"age": 30, "city": "Oslo", "dept": "a"})


def one(r):
    return Dataset.of([Table.of("T", [r] if r is not None else [])])


def op_of(old, new):
    (_, op), = compute_delta(one(old), one(new)).iter_ops()
    return op


# ops relative to BASE (inserts relative to an empty base)
INS = op_of(None, Record("k", {"age": 1}))
INS_SAME = op_of(None, Record("k", {"age": 1}))
INS_OTHER = op_of(None, Record("k", {"age": 2}))
UPD_AGE = op_of(BASE, BASE.evolve({"age": 31}))
UPD_AGE_OTHER = op_of(BASE, BASE.evolve({"age": 32}))
UPD_CITY = op_of(BASE, BASE.evolve({"city": "Rome"}))
DEL = op_of(BASE, None)

R, C = Strategy.ROW, Strategy.CELL
ROWROW, CELLCELL, DELUPD = ConflictKind.ROW_ROW, ConflictKind.CELL_CELL, ConflictKind.DELETE_UPDATE


def kinds(a, b, base, strategy):
    return [(c.kind, c.attr) for c in classify(a, b, base, strategy, "T", "k")]


# (side A, side B, base, expected under Row, expected under Cell); written by hand
TRUTH_TABLE = [
    (INS, INS_SAME, None, [], []),
    (INS, INS_OTHER, None, [(ROWROW, None)], [(ROWROW, None)]),
    (INS, UPD_AGE, None, [(ROWROW, None)], [(ROWROW, None)]),
    (INS, DEL, None, [(ROWROW, None)], [(DELUPD, None)]),
    (UPD_AGE, INS, None, [(ROWROW, None)], [(ROWROW, None)]),
    (UPD_AGE, UPD_AGE, BASE, [], []),
    (UPD_AGE, UPD_AGE_OTHER, BASE, [(ROWROW, None)], [(CELLCELL, "age")]),
    (UPD_AGE, UPD_CITY, BASE, [(ROWROW, None)], []),
    (UPD_AGE, DEL, BASE, [(ROWROW, None)], [(DELUPD, None)]),
    (DEL, INS, None, [(ROWROW, None)], [(DELUPD, None)]),
    (DEL, UPD_AGE, BASE, [(ROWROW, None)], [(DELUPD, None)]),
    (DEL, DEL, BASE, [], []),
]
