"""``dsvc``: git-style command line over a repository.

The working copy of a repository lives in ``worktree.json`` as the checked
out base plus a journal of edits, so edits made by separate invocations
accumulate until ``commit`` or ``rollback``.

Exit status: 0 success, 1 user error, 2 merge conflicts reported, 3 hook
rejection, 4 internal error or corruption.
"""
from __future__ import annotations

import argparse
import csv
import json
import os
import re
import sys
from pathlib import Path
from typing import Any

from .delta import Delete, Insert, compute_delta
from .errors import CorruptRepository, DsvcError, InvalidValue
from .graph import Provenance
from .jsonvalues import value_from_json, value_to_json
from .merge import Conflicted, load_resolutions, merge
from .model import Dataset, Record, Table
from .repository import FULL, RepoConfig, Repository, Sampled, WorkingCopy
from .store import write_json

WORKTREE = "worktree.json"
_INT_RE = re.compile(r"^-?[0-9]+$")
_DECIMAL_RE = re.compile(r"^[-+]?([0-9]+\.?[0-9]*|\.[0-9]+)([eE][-+]?[0-9]+)?$")
_VERSION_RE = re.compile(r"^[vV]?([0-9]+)$")


class UsageError(DsvcError):
    pass


# values ---------------------------------------------------------------------


def parse_cli_value(text: str) -> Any:
    """A VQL literal (``12``, ``1.5``, ``'text'``, ``NULL``, ``TRUE``) or else the raw text."""
    from .vql.parser import tokenize

    try:
        toks = tokenize(text)[:-1]
    except DsvcError:
        return text
    if len(toks) == 1:
        t = toks[0]
        if t.kind in ("int", "float", "string"):
            return t.value
        if t.kind == "kw" and t.value in ("NULL", "TRUE", "FALSE"):
            return None if t.value == "NULL" else t.value == "TRUE"
    if len(toks) == 2 and toks[0].text == "-" and toks[1].kind in ("int", "float"):
        return -toks[1].value
    return text


def parse_assignments(pairs: list[str]) -> dict[str, Any]:
    out = {}
    for p in pairs:
        name, eq, value = p.partition("=")
        if not eq or not name:
            raise UsageError(f"expected ATTR=VALUE, got {p!r}")
        out[name] = parse_cli_value(value)
    return out


def parse_ref(text: str) -> int | str:
    m = _VERSION_RE.match(text)
    return int(m.group(1)) if m else text


# csv / jsonl ----------------------------------------------------------------


def infer_column(cells: list[str]) -> str:
    """``int`` iff every non-empty cell is an integer, else ``float`` iff all parse, else ``text``."""
    present = [c for c in cells if c != ""]
    if all(_INT_RE.match(c) for c in present):
        return "int"
    if all(_DECIMAL_RE.match(c) for c in present):
        return "float"
    return "text"


def read_csv_table(path: Path, key: str) -> Table:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise InvalidValue(f"{path}: header row required")
    header, body = rows[0], rows[1:]
    if key not in header:
        raise InvalidValue(f"{path}: no key column {key!r}")
    if len(set(header)) != len(header):
        raise InvalidValue(f"{path}: duplicate column names")
    for i, r in enumerate(body, 2):
        if len(r) != len(header):
            raise InvalidValue(f"{path}:{i}: expected {len(header)} cells, got {len(r)}")
    kinds = {h: infer_column([r[j] for r in body]) for j, h in enumerate(header) if h != key}
    conv = {"int": int, "float": float, "text": str}
    records = []
    ki = header.index(key)
    for r in body:
        attrs = {h: conv[kinds[h]](c) for h, c in zip(header, r) if h != key and c != ""}
        records.append(Record(r[ki], attrs))
    return Table.of(path.stem, records)


def read_jsonl_table(path: Path, key: str) -> Table:
    records = []
    with open(path, encoding="utf-8") as fh:
        for i, line in enumerate(fh, 1):
            if not line.strip():
                continue
            obj = json.loads(line)
            if not isinstance(obj, dict):
                raise InvalidValue(f"{path}:{i}: each line must be a JSON object")
            attrs = {n: value_from_json(v) for n, v in obj.items()}
            k = attrs.pop(key, None)
            if type(k) is int:
                k = str(k)
            if type(k) is not str:
                raise InvalidValue(f"{path}:{i}: key field {key!r} must be text or integer")
            records.append(Record(k, attrs))
    return Table.of(path.stem, records)


def read_dataset(directory: str, fmt: str, key: str) -> Dataset:
    d = Path(directory)
    if not d.is_dir():
        raise UsageError(f"{d} is not a directory")
    reader = read_csv_table if fmt == "csv" else read_jsonl_table
    return Dataset.of(reader(p, key) for p in sorted(d.glob(f"*.{fmt}")))


def _csv_cell(v: Any) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, bytes):
        return v.hex()
    return repr(v) if isinstance(v, float) else str(v)


def write_dataset(ds: Dataset, directory: str, fmt: str, key: str) -> list[Path]:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    written = []
    for name in sorted(ds.tables):
        recs = [ds.tables[name].records[k] for k in sorted(ds.tables[name].records)]
        if any(key in r.attrs for r in recs):
            raise UsageError(f"table {name} has an attribute named {key!r}; choose another --key")
        path = d / f"{name}.{fmt}"
        if fmt == "csv":
            cols = sorted({a for r in recs for a in r.attrs})
            with open(path, "w", newline="", encoding="utf-8") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow([key] + cols)
                for r in recs:
                    w.writerow([r.key] + [_csv_cell(r.attrs.get(c)) for c in cols])
        else:
            with open(path, "w", encoding="utf-8") as fh:
                for r in recs:
                    obj = {key: r.key, **{n: value_to_json(v) for n, v in r.attrs.items()}}
                    fh.write(json.dumps(obj, sort_keys=True) + "\n")
        written.append(path)
    return written


# output ---------------------------------------------------------------------


def emit(columns: list[str], rows: list[tuple], fmt: str, out=None) -> None:
    from .vql.evaluator import ResultSet

    rs = ResultSet(tuple(columns), rows)
    (out or sys.stdout).write(rs.to_tsv() if fmt == "tsv" else rs.to_jsonl())


# working copy persistence -------------------------------------------------


def load_worktree(repo: Repository) -> WorkingCopy:
    path = repo.root / WORKTREE
    if not path.exists():
        return repo.checkout()
    data = json.loads(path.read_text("utf-8"))
    m = data["mode"]
    mode = FULL if m["kind"] == "full" else Sampled(m["rate"], m["seed"])
    base = data["base"]
    ds = repo.materialize(base) if base is not None else Dataset()
    wc = WorkingCopy(repo, base, data["branch"], mode, ds)
    wc.replay(data["journal"])
    return wc


def save_worktree(repo: Repository, wc: WorkingCopy) -> None:
    write_json(repo.root / WORKTREE, wc.to_json())


# commands -------------------------------------------------------------------


def cmd_init(args, out):
    cfg = RepoConfig(default_branch=args.default_branch) if args.default_branch else None
    repo = Repository.init(args.path, cfg)
    out.write(f"initialized empty repository in {repo.root}\n")


def cmd_create(args, out):
    repo = Repository.open(args.repo)
    if bool(args.from_csv) == bool(args.from_jsonl):
        raise UsageError("give exactly one of --from-csv or --from-jsonl")
    ds = read_dataset(args.from_csv or args.from_jsonl, "csv" if args.from_csv else "jsonl", args.key)
    v = repo.create_dataset(args.name, ds, Provenance(args.message or f"create {args.name}"))
    save_worktree(repo, repo.checkout())
    out.write(f"{v}\n")


def cmd_branch(args, out):
    repo = Repository.open(args.repo)
    if args.name is None:
        current = load_worktree(repo).branch
        for b, v in sorted(repo.refs.items()):
            out.write(f"{'*' if b == current else ' '} {b}\t{'' if v is None else v}\n")
        return
    v = repo.branch(args.name, parse_ref(args.from_) if args.from_ else None)
    out.write(f"{args.name}\t{v}\n")


def cmd_checkout(args, out):
    repo = Repository.open(args.repo)
    if (args.repo / Path(WORKTREE)).exists() and load_worktree(repo).is_dirty() and not args.force:
        raise UsageError("working copy has uncommitted edits; commit, rollback or pass --force")
    mode = Sampled(args.sample, args.seed) if args.sample is not None else FULL
    wc = repo.checkout(parse_ref(args.ref), mode, args.branch)
    save_worktree(repo, wc)
    if args.out:
        write_dataset(wc.dataset(), args.out, "csv", args.key)
    out.write(f"{wc.branch}\t{wc.base_version}\n")


def cmd_status(args, out):
    repo = Repository.open(args.repo)
    wc = load_worktree(repo)
    mode = "full" if not wc.sampled else f"sampled rate={wc.mode.rate} seed={wc.mode.seed}"
    head = repo.head(wc.branch)
    out.write(f"branch {wc.branch}\nbase {wc.base_version}\nmode {mode}\n")
    if head != wc.base_version:
        out.write(f"stale: {wc.branch} has moved to {head}\n")
    d = wc.staged()
    rows = []
    for t, op in d.iter_ops():
        rows.append((type(op).__name__.lower(), t, op.key))
    for t in d.created_tables:
        rows.append(("create-table", t, ""))
    for t in d.dropped_tables:
        rows.append(("drop-table", t, ""))
    if not rows and d.new_constraints is None:
        out.write("nothing to commit\n")
    for r in sorted(rows):
        out.write("\t".join(r) + "\n")
    if d.new_constraints is not None:
        out.write("constraints changed\n")


def _edit(args, out, fn):
    repo = Repository.open(args.repo)
    wc = load_worktree(repo)
    result = fn(wc)
    save_worktree(repo, wc)
    if result is not None:
        out.write(f"{result}\n")


def cmd_add_record(args, out):
    _edit(args, out, lambda wc: wc.insert(args.table, Record(args.key, parse_assignments(args.attrs))) and None)


def cmd_del_record(args, out):
    _edit(args, out, lambda wc: wc.delete(args.table, args.key) and None)


def cmd_set(args, out):
    _edit(args, out, lambda wc: wc.update(args.table, args.key, parse_assignments(args.attrs), args.unset or ()) and None)


def cmd_update_where(args, out):
    from .vql import parse_predicate

    pred = parse_predicate(args.where)
    assignments = parse_assignments(args.set)
    _edit(args, out, lambda wc: f"{wc.update_where(args.table, pred, assignments)} records updated")


def cmd_create_table(args, out):
    _edit(args, out, lambda wc: wc.create_table(args.table) and None)


def cmd_drop_table(args, out):
    _edit(args, out, lambda wc: wc.drop_table(args.table) and None)


def cmd_commit(args, out):
    repo = Repository.open(args.repo)
    wc = load_worktree(repo)
    prov = Provenance(args.message, args.author or "", 0, args.program, args.code_commit, tuple(args.source or ()))
    v = repo.commit(wc, prov)
    save_worktree(repo, wc)
    out.write(f"{v}\n")


def cmd_rollback(args, out):
    repo = Repository.open(args.repo)
    wc = load_worktree(repo)
    wc.rollback()
    save_worktree(repo, wc)
    out.write(f"{wc.branch}\t{wc.base_version}\n")


def cmd_reset(args, out):
    if not args.hard:
        raise UsageError("only reset --hard is supported")
    repo = Repository.open(args.repo)
    wc = load_worktree(repo)
    v = repo.reset_hard(wc.branch, parse_ref(args.target))
    save_worktree(repo, repo.checkout(wc.branch))
    out.write(f"{wc.branch}\t{v}\n")


def cmd_merge(args, out):
    repo = Repository.open(args.repo)
    wc = load_worktree(repo)
    if wc.is_dirty():
        raise UsageError("working copy has uncommitted edits; commit or rollback first")
    into = args.into or wc.branch
    res = load_resolutions(args.resolutions) if args.resolutions else None
    prov = Provenance(args.message or f"merge {args.source} into {into}")
    outcome = merge(repo, into, parse_ref(args.source), args.strategy, res, provenance=prov)
    if isinstance(outcome, Conflicted):
        for c in outcome.to_json():
            out.write(json.dumps(c, sort_keys=True) + "\n")
        return 2
    if into == wc.branch:
        save_worktree(repo, repo.checkout(into, wc.mode))
    out.write(f"{outcome.new_version}\n" if outcome.committed else f"already up to date at {outcome.new_version}\n")


def cmd_log(args, out):
    repo = Repository.open(args.repo)
    target = parse_ref(args.ref) if args.ref else load_worktree(repo).branch
    if repo.graph.refs.get(target, 0) is None:
        return
    rows = []
    for n in repo.log(target):
        p = n.provenance
        parents = ",".join(f"{v}:{k.value}" for v, k in n.parents)
        rows.append((n.id, parents, n.branch, p.timestamp, p.author, p.message))
    rows.sort(key=lambda r: -r[0])
    emit(["version", "parents", "branch", "timestamp", "author", "message"], rows, args.format, out)


def cmd_diff(args, out):
    repo = Repository.open(args.repo)
    a, b = repo.resolve(parse_ref(args.a)), repo.resolve(parse_ref(args.b))
    if args.summary:
        out.write(f"{repo.diff(a, b)} records differ\n")
        return
    d = compute_delta(repo.materialize(a), repo.materialize(b))
    rows = []
    for t, op in d.iter_ops():
        if isinstance(op, Insert):
            detail = json.dumps({n: value_to_json(v) for n, v in op.record.attrs.items()}, sort_keys=True)
        elif isinstance(op, Delete):
            detail = ""
        else:
            detail = json.dumps({"set": {n: value_to_json(v) for n, v in op.set_attrs.items()},
                                 "unset": list(op.unset_attrs)}, sort_keys=True)
        rows.append((type(op).__name__.lower(), t, op.key, detail))
    for t in d.created_tables:
        rows.append(("create-table", t, "", ""))
    for t in d.dropped_tables:
        rows.append(("drop-table", t, "", ""))
    emit(["op", "table", "key", "detail"], rows, args.format, out)


def cmd_query(args, out):
    from .vql import evaluate, explain, parse

    repo = Repository.open(args.repo)
    q = parse(args.vql)
    if args.explain:
        out.write(explain(repo, q, not args.no_record_first))
        return
    rs = evaluate(repo, q, not args.no_record_first)
    out.write(rs.to_tsv() if args.format == "tsv" else rs.to_jsonl())


def cmd_hooks(args, out):
    repo = Repository.open(args.repo)
    if args.hooks_cmd == "install":
        hid = repo.hooks.install(args.event, args.path, args.order)
        out.write(f"{hid}\n")
    else:
        rows = [(e.event.value, e.order, e.seq, e.id) for e in repo.hooks.list(args.event)]
        emit(["event", "order", "seq", "id"], rows, args.format, out)


def cmd_replan(args, out):
    repo = Repository.open(args.repo)
    plan = repo.replan(args.max_chain)
    out.write(f"planned {len(plan.placements)} versions, {plan.snapshot_count()} snapshots, "
              f"max chain {plan.max_chain}, store {repo.store.store_bytes()} bytes\n")


def cmd_compact(args, out):
    repo = Repository.open(args.repo)
    rep = repo.compact(args.budget)
    out.write(json.dumps(rep.to_json(), sort_keys=True) + "\n")


def cmd_export(args, out):
    repo = Repository.open(args.repo)
    ds = repo.materialize(parse_ref(args.ref))
    for p in write_dataset(ds, args.out, args.format, args.key):
        out.write(f"{p}\n")


def cmd_verify(args, out):
    repo = Repository.open(args.repo)
    rep = repo.verify()
    for p in rep.problems:
        out.write(json.dumps({"problem": p}) + "\n")
    out.write(json.dumps({"ok": rep.ok, "versions": rep.versions}) + "\n")
    return 0 if rep.ok else 4


# argument parsing -----------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="dsvc", description="Version control for keyed-record datasets.")
    ap.add_argument("-C", "--repo", default=os.environ.get("DSVC_REPO", "."), type=Path,
                    help="repository directory (default: $DSVC_REPO or .)")
    ap.add_argument("--format", choices=["tsv", "json"], default=None, help="tabular output format")
    sub = ap.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("init", help="create an empty repository")
    p.add_argument("path")
    p.add_argument("--default-branch")
    p.set_defaults(fn=cmd_init)

    p = sub.add_parser("create", help="import the root version from a directory of files")
    p.add_argument("name")
    p.add_argument("--from-csv")
    p.add_argument("--from-jsonl")
    p.add_argument("--key", default="id")
    p.add_argument("-m", "--message")
    p.set_defaults(fn=cmd_create)

    p = sub.add_parser("branch", help="list branches or create one")
    p.add_argument("name", nargs="?")
    p.add_argument("--from", dest="from_")
    p.set_defaults(fn=cmd_branch)

    p = sub.add_parser("checkout", help="switch the working copy")
    p.add_argument("ref")
    p.add_argument("--sample", type=float)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--branch", help="branch to commit to when checking out a bare version")
    p.add_argument("--out", help="also write the checked-out tables to this directory")
    p.add_argument("--key", default="id")
    p.add_argument("--force", action="store_true", help="discard uncommitted edits")
    p.set_defaults(fn=cmd_checkout)

    p = sub.add_parser("status", help="show the branch, base version and staged edits")
    p.set_defaults(fn=cmd_status)

    p = sub.add_parser("add-record", help="stage an inserted record")
    p.add_argument("--table", required=True)
    p.add_argument("--key", required=True)
    p.add_argument("attrs", nargs="*", metavar="ATTR=VALUE")
    p.set_defaults(fn=cmd_add_record)

    p = sub.add_parser("del-record", help="stage a deleted record")
    p.add_argument("--table", required=True)
    p.add_argument("--key", required=True)
    p.set_defaults(fn=cmd_del_record)

    p = sub.add_parser("set", help="update attributes of one record")
    p.add_argument("--table", required=True)
    p.add_argument("--key", required=True)
    p.add_argument("--unset", action="append", metavar="ATTR")
    p.add_argument("attrs", nargs="*", metavar="ATTR=VALUE")
    p.set_defaults(fn=cmd_set)

    p = sub.add_parser("update-where", help="update every record matching a predicate")
    p.add_argument("--table", required=True)
    p.add_argument("--where", required=True)
    p.add_argument("--set", action="append", required=True, metavar="ATTR=VALUE")
    p.set_defaults(fn=cmd_update_where)

    p = sub.add_parser("create-table", help="stage a new empty table")
    p.add_argument("--table", required=True)
    p.set_defaults(fn=cmd_create_table)

    p = sub.add_parser("drop-table", help="stage dropping a table")
    p.add_argument("--table", required=True)
    p.set_defaults(fn=cmd_drop_table)

    p = sub.add_parser("commit", help="record the staged edits as a new version")
    p.add_argument("-m", "--message", required=True)
    p.add_argument("--author")
    p.add_argument("--program")
    p.add_argument("--code-commit")
    p.add_argument("--source", type=int, action="append", help="version this data was derived from")
    p.set_defaults(fn=cmd_commit)

    p = sub.add_parser("rollback", help="discard uncommitted edits")
    p.set_defaults(fn=cmd_rollback)

    p = sub.add_parser("reset", help="move the current branch back to an ancestor")
    p.add_argument("--hard", action="store_true")
    p.add_argument("target")
    p.set_defaults(fn=cmd_reset)

    p = sub.add_parser("merge", help="three-way merge a branch or version into a branch")
    p.add_argument("source")
    p.add_argument("--into")
    p.add_argument("--strategy", choices=["row", "cell"], default="cell")
    p.add_argument("--resolutions")
    p.add_argument("-m", "--message")
    p.set_defaults(fn=cmd_merge)

    p = sub.add_parser("log", help="list ancestors of a version, newest first")
    p.add_argument("ref", nargs="?")
    p.set_defaults(fn=cmd_log)

    p = sub.add_parser("diff", help="compare two versions record by record")
    p.add_argument("a")
    p.add_argument("b")
    p.add_argument("--summary", action="store_true")
    p.set_defaults(fn=cmd_diff)

    p = sub.add_parser("query", help="run a VQL query")
    p.add_argument("vql")
    p.add_argument("--explain", action="store_true")
    p.add_argument("--no-record-first", action="store_true", help="read every version through the delta store")
    p.set_defaults(fn=cmd_query)

    p = sub.add_parser("hooks", help="install or list hooks")
    hs = p.add_subparsers(dest="hooks_cmd", required=True)
    hi = hs.add_parser("install")
    hi.add_argument("event")
    hi.add_argument("path")
    hi.add_argument("--order", type=int, default=0)
    hl = hs.add_parser("list")
    hl.add_argument("event", nargs="?")
    p.set_defaults(fn=cmd_hooks)

    p = sub.add_parser("replan", help="re-encode storage under a fresh plan")
    p.add_argument("--max-chain", type=int)
    p.set_defaults(fn=cmd_replan)

    p = sub.add_parser("compact", help="shrink the store to a byte budget")
    p.add_argument("--budget", type=int, required=True)
    p.set_defaults(fn=cmd_compact)

    p = sub.add_parser("export", help="write a version out as CSV or JSONL files")
    p.add_argument("ref")
    p.add_argument("--format", dest="export_format", choices=["csv", "jsonl"], default="csv")
    p.add_argument("--out", required=True)
    p.add_argument("--key", default="id")
    p.set_defaults(fn=cmd_export)

    p = sub.add_parser("verify", help="cross-check every version")
    p.set_defaults(fn=cmd_verify)
    return ap


def main(argv: list[str] | None = None, out=None, err=None) -> int:
    out = out or sys.stdout
    err = err or sys.stderr
    args = build_parser().parse_args(argv)
    if args.cmd == "export":
        args.format = args.export_format
    elif args.cmd != "checkout" and args.format is None and args.cmd != "init":
        args.format = _configured_format(args.repo)
    try:
        rc = args.fn(args, out)
        return rc or 0
    except DsvcError as exc:
        err.write(f"dsvc: {exc}\n")
        return exc.exit_code
    except (OSError, ValueError) as exc:
        err.write(f"dsvc: {exc}\n")
        return 1
    except Exception as exc:  # noqa: BLE001
        err.write(f"dsvc: internal error: {exc!r}\n")
        return CorruptRepository.exit_code


def _configured_format(root: Path) -> str:
    try:
        return json.loads((root / "config.json").read_text("utf-8")).get("output_format", "tsv")
    except (OSError, ValueError):
        return "tsv"


if __name__ == "__main__":
    sys.exit(main())
