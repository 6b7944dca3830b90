"""Repositories: the version graph, branch refs, working copies and the commit path.

On-disk layout of a repository directory::

    graph.json       version graph, refs and the dataset name
    refs/<branch>    one line holding the head version id (empty before the first commit)
    manifest.json    storage placement of every version
    objects/xx/...   content-addressed snapshots and deltas
    sketches/<v>     KMV sketch of each version
    plan.json        last storage plan (after replan/compact)
    rfindex.bin      record-first index (optional, derived)
    hooks.json, hooks/<event>/...
    config.json      repository and command-line settings
    lock             advisory writer lock
"""
from __future__ import annotations

import contextlib
import fcntl
import hashlib
import json
import os
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Iterable, Iterator, Mapping

from .bitmap import VersionBitmap
from .delta import Delta, apply_delta, compute_delta, diff_recs, encode_delta
from .errors import (
    AlreadyExists,
    BranchExists,
    BudgetInfeasible,
    ConfigError,
    ConstraintNameUnknown,
    CorruptRepository,
    Duplicate,
    DuplicateInsert,
    EmptyCommit,
    InvalidDataset,
    IoFailure,
    ResetRefused,
    SampledRowUpdateForbidden,
    StaleBase,
    UnknownBranch,
    UnknownKey,
    UnknownTable,
    UnknownVersion,
)
from .graph import EdgeKind, Provenance, VersionGraph, VersionNode
from .hooks import HookContext, HookEvent, HookRegistry
from .model import Dataset, ForeignKey, Record, Table, dataset_hash, validate_dataset
from .predicate import Predicate
from .rfindex import RecordFirstIndex
from .sketch import Sketch, build_sketch
from .store import (
    MATERIALIZE,
    DeltaFrom,
    Materialize,
    VersionFirstStore,
    _atomic_write,
    chain_depths,
    tombstone_union_read,
    write_json,
)

DEFAULT_BRANCH = "master"


@dataclass
class RepoConfig:
    """Settings stored in ``config.json``; unknown keys are rejected."""

    default_branch: str = DEFAULT_BRANCH
    output_format: str = "tsv"
    max_chain: int = 8
    sketch_k: int = 256
    compaction_budget: int | None = None
    compress: bool = True
    author: str = ""

    def __post_init__(self):
        if self.output_format not in ("tsv", "json"):
            raise ConfigError(f"output_format must be tsv or json, not {self.output_format!r}")
        if int(self.max_chain) < 1:
            raise ConfigError("max_chain must be at least 1")
        if int(self.sketch_k) < 1:
            raise ConfigError("sketch_k must be positive")

    @classmethod
    def from_json(cls, d: Mapping[str, Any]) -> "RepoConfig":
        known = {f.name for f in fields(cls)}
        extra = sorted(set(d) - known)
        if extra:
            raise ConfigError(f"unknown configuration keys: {', '.join(extra)}")
        return cls(**d)

    def to_json(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class Full:
    pass


@dataclass(frozen=True)
class Sampled:
    rate: float
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.rate <= 1:
            raise ValueError("sample rate must be in (0, 1]")


FULL = Full()
CheckoutMode = Full | Sampled


def in_sample(key: str, rate: float, seed: int) -> bool:
    """Deterministic key sample: 64-bit hash of (seed, key) below ``rate * 2**64``."""
    h = hashlib.sha256(seed.to_bytes(8, "big", signed=True) + key.encode("utf-8")).digest()
    return int.from_bytes(h[:8], "big") < int(rate * (1 << 64))


def now_timestamp() -> int:
    sde = os.environ.get("SOURCE_DATE_EPOCH")
    return int(sde) if sde else int(time.time())


# working copies -----------------------------------------------------------


class WorkingCopy:
    """Local, uncommitted edits on top of ``base_version``.

    Row edits go straight into a copy-on-write view of the tables; the staged
    delta is always ``compute_delta(base, view)``, so edits to one key compose
    (insert then delete cancels, two updates merge).  Every action is also
    journalled: a sampled copy replays the journal against the full dataset at
    commit time, which is how predicate updates reach rows outside the sample.
    """

    def __init__(self, repo: "Repository", base_version: int | None, branch: str,
                 mode: CheckoutMode = FULL, full_base: Dataset | None = None):
        self.repo = repo
        self.base_version = base_version
        self.branch = branch
        self.mode = mode
        self._full_base = full_base if full_base is not None else Dataset()
        self.base = self._view_of(self._full_base)
        self.journal: list[list] = []
        self._reset_view()

    # views -------------------------------------------------------------

    def _view_of(self, ds: Dataset) -> Dataset:
        if isinstance(self.mode, Full):
            return ds
        m = self.mode
        tables = {n: Table(n, {k: r for k, r in t.records.items() if in_sample(k, m.rate, m.seed)})
                  for n, t in ds.tables.items()}
        return Dataset(tables, ds.constraints)

    def _reset_view(self) -> None:
        self._tables: dict[str, dict[str, Record]] = {n: t.records for n, t in self.base.tables.items()}
        self._owned: set[str] = set()
        self._constraints = self.base.constraints
        self.sample_keys = {n: set(t.records) for n, t in self.base.tables.items()} if self.sampled else None

    @property
    def sampled(self) -> bool:
        return isinstance(self.mode, Sampled)

    @property
    def full_base(self) -> Dataset:
        return self._full_base

    def _writable(self, table: str) -> dict[str, Record]:
        if table not in self._tables:
            raise UnknownTable(f"unknown table {table!r}")
        if table not in self._owned:
            self._tables[table] = dict(self._tables[table])
            self._owned.add(table)
        return self._tables[table]

    def dataset(self) -> Dataset:
        """The working view (the sample, for sampled copies) with edits applied."""
        return Dataset({n: Table(n, recs) for n, recs in self._tables.items()}, self._constraints)

    def staged(self) -> Delta:
        return compute_delta(self.base, self.dataset())

    def is_dirty(self) -> bool:
        return bool(self.journal)

    # row edits ---------------------------------------------------------

    def _check_row_access(self, table: str, key: str, inserting: bool = False) -> None:
        if not self.sampled:
            return
        in_view = key in self.sample_keys.get(table, ())
        if in_view:
            return
        full = self._full_base.tables.get(table)
        if inserting and (full is None or key not in full.records):
            return
        raise SampledRowUpdateForbidden(
            f"{table}/{key} is outside the sample; use a predicate update instead")

    def insert(self, table: str, record: Record) -> "WorkingCopy":
        recs = self._writable(table)
        self._check_row_access(table, record.key, inserting=True)
        if record.key in recs:
            raise DuplicateInsert(f"{table}/{record.key} already exists")
        recs[record.key] = record
        if self.sampled:
            self.sample_keys.setdefault(table, set()).add(record.key)
        self.journal.append(["insert", table, record])
        return self

    def delete(self, table: str, key: str) -> "WorkingCopy":
        recs = self._writable(table)
        self._check_row_access(table, key)
        if key not in recs:
            raise UnknownKey(f"{table}/{key} does not exist")
        del recs[key]
        self.journal.append(["delete", table, key])
        return self

    def update(self, table: str, key: str, set_attrs: Mapping[str, Any] | None = None,
               unset: Iterable[str] = ()) -> "WorkingCopy":
        recs = self._writable(table)
        self._check_row_access(table, key)
        if key not in recs:
            raise UnknownKey(f"{table}/{key} does not exist")
        set_attrs = dict(set_attrs or {})
        unset = sorted(set(unset))
        recs[key] = recs[key].evolve(set_attrs, unset)
        self.journal.append(["update", table, key, set_attrs, unset])
        return self

    def update_where(self, table: str, predicate: Predicate, assignments: Mapping[str, Any]) -> int:
        """Set ``assignments`` on every row satisfying ``predicate``; returns rows changed in the view."""
        recs = self._writable(table)
        assignments = dict(assignments)
        n = _apply_where(recs, predicate, assignments)
        self.journal.append(["where", table, predicate, assignments])
        return n

    # schema edits ------------------------------------------------------

    def create_table(self, name: str) -> "WorkingCopy":
        Table(name)  # validates the name
        if name in self._tables:
            raise InvalidDataset(f"table {name!r} already exists")
        self._tables[name] = {}
        self._owned.add(name)
        if self.sampled:
            self.sample_keys[name] = set()
        self.journal.append(["create_table", name])
        return self

    def drop_table(self, name: str) -> "WorkingCopy":
        if name not in self._tables:
            raise UnknownTable(f"unknown table {name!r}")
        if self.sampled:
            raise SampledRowUpdateForbidden("tables cannot be dropped from a sampled checkout")
        del self._tables[name]
        self._owned.discard(name)
        self.journal.append(["drop_table", name])
        return self

    def set_constraints(self, constraints: Iterable[ForeignKey]) -> "WorkingCopy":
        self._constraints = tuple(sorted(set(constraints)))
        self.journal.append(["constraints", list(self._constraints)])
        return self

    def rollback(self) -> "WorkingCopy":
        """Discard every uncommitted edit; the base version stays the same."""
        self.journal = []
        self._reset_view()
        return self

    # commit support ----------------------------------------------------

    def result_dataset(self) -> Dataset:
        """The full dataset this copy would commit."""
        if not self.sampled:
            return self.dataset()
        return replay_journal(self._full_base, self.journal)

    def _rebase(self, version: int, ds: Dataset) -> None:
        self.base_version = version
        self._full_base = ds
        self.base = self._view_of(ds)
        self.journal = []
        self._reset_view()

    # persistence (used by the command line) ----------------------------

    def to_json(self) -> dict:
        from .jsonvalues import record_to_json, value_to_json

        def enc(entry):
            kind = entry[0]
            if kind == "insert":
                return [kind, entry[1], record_to_json(entry[2])]
            if kind == "update":
                return [kind, entry[1], entry[2], {k: value_to_json(v) for k, v in entry[3].items()}, entry[4]]
            if kind == "where":
                return [kind, entry[1], entry[2].to_json(), {k: value_to_json(v) for k, v in entry[3].items()}]
            if kind == "constraints":
                return [kind, [[fk.from_table, fk.from_attr, fk.to_table] for fk in entry[1]]]
            return list(entry)

        mode = {"kind": "full"} if not self.sampled else {"kind": "sampled", "rate": self.mode.rate, "seed": self.mode.seed}
        return {"base": self.base_version, "branch": self.branch, "mode": mode,
                "journal": [enc(e) for e in self.journal]}

    def replay(self, journal: list) -> None:
        from .jsonvalues import record_from_json, value_from_json

        for e in journal:
            kind = e[0]
            if kind == "insert":
                self.insert(e[1], record_from_json(e[2]))
            elif kind == "delete":
                self.delete(e[1], e[2])
            elif kind == "update":
                self.update(e[1], e[2], {k: value_from_json(v) for k, v in e[3].items()}, e[4])
            elif kind == "where":
                self.update_where(e[1], Predicate.from_json(e[2]), {k: value_from_json(v) for k, v in e[3].items()})
            elif kind == "create_table":
                self.create_table(e[1])
            elif kind == "drop_table":
                self.drop_table(e[1])
            elif kind == "constraints":
                self.set_constraints(ForeignKey(*fk) for fk in e[1])
            else:
                raise CorruptRepository(f"unknown working-copy journal entry {kind!r}")


def _apply_where(recs: dict[str, Record], predicate: Predicate, assignments: dict[str, Any]) -> int:
    n = 0
    for k, r in list(recs.items()):
        if predicate.matches(r):
            new = r.evolve(assignments)
            if new != r:
                recs[k] = new
                n += 1
    return n


def replay_journal(base: Dataset, journal: list) -> Dataset:
    """Apply journalled actions to ``base``; predicate updates reach every matching row."""
    tables = {n: dict(t.records) for n, t in base.tables.items()}
    constraints = base.constraints

    def tab(name):
        if name not in tables:
            raise UnknownTable(f"unknown table {name!r}")
        return tables[name]

    for e in journal:
        kind = e[0]
        if kind == "insert":
            recs = tab(e[1])
            if e[2].key in recs:
                raise DuplicateInsert(f"{e[1]}/{e[2].key} already exists")
            recs[e[2].key] = e[2]
        elif kind == "delete":
            recs = tab(e[1])
            if e[2] not in recs:
                raise UnknownKey(f"{e[1]}/{e[2]} does not exist")
            del recs[e[2]]
        elif kind == "update":
            recs = tab(e[1])
            if e[2] not in recs:
                raise UnknownKey(f"{e[1]}/{e[2]} does not exist")
            recs[e[2]] = recs[e[2]].evolve(e[3], e[4])
        elif kind == "where":
            _apply_where(tab(e[1]), e[2], e[3])
        elif kind == "create_table":
            tables[e[1]] = {}
        elif kind == "drop_table":
            tables.pop(e[1])
        elif kind == "constraints":
            constraints = tuple(e[1])
    return Dataset({n: Table(n, recs) for n, recs in tables.items()}, constraints)


# repository ---------------------------------------------------------------


@dataclass
class VerifyReport:
    versions: int = 0
    problems: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.problems


class Repository:
    def __init__(self, root: str | os.PathLike):
        self.root = Path(root)
        if not (self.root / "graph.json").exists():
            raise CorruptRepository(f"{self.root} is not a repository")
        self.config = self._load_config()
        self.store = VersionFirstStore(self.root, compress=self.config.compress)
        self.hooks = HookRegistry(self.root)
        self._lock_depth = 0
        self._lock_fh = None
        self._rf: RecordFirstIndex | None = None
        self._load_graph()

    # lifecycle ---------------------------------------------------------

    @classmethod
    def init(cls, path: str | os.PathLike, config: RepoConfig | None = None) -> "Repository":
        root = Path(path)
        if root.exists() and (not root.is_dir() or any(root.iterdir())):
            raise AlreadyExists(f"{root} exists and is not empty")
        config = config or RepoConfig()
        try:
            root.mkdir(parents=True, exist_ok=True)
            (root / "refs").mkdir()
            (root / "sketches").mkdir()
            (root / "lock").touch()
            write_json(root / "config.json", config.to_json())
            VersionFirstStore.create(root, compress=config.compress)
            g = VersionGraph({}, {config.default_branch: None})
            write_json(root / "graph.json", g.to_json(None))
            _atomic_write(root / "refs" / config.default_branch, b"")
        except OSError as exc:
            raise IoFailure(str(exc)) from None
        return cls(root)

    @classmethod
    def open(cls, path: str | os.PathLike) -> "Repository":
        return cls(path)

    def close(self) -> None:
        self.store.clear_cache()
        self._rf = None

    def __enter__(self) -> "Repository":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def _load_config(self) -> RepoConfig:
        p = self.root / "config.json"
        if not p.exists():
            return RepoConfig()
        try:
            return RepoConfig.from_json(json.loads(p.read_text("utf-8")))
        except ValueError as exc:
            raise ConfigError(f"bad config.json: {exc}") from None

    def _load_graph(self) -> None:
        try:
            data = json.loads((self.root / "graph.json").read_text("utf-8"))
        except (OSError, ValueError) as exc:
            raise CorruptRepository(f"unreadable graph.json: {exc}") from None
        self.graph = VersionGraph.from_json(data)
        self.dataset_name: str | None = data.get("dataset")
        # versions written to the store by an interrupted commit are not part of the repository
        for v in [v for v in self.store.nodes if v not in self.graph.nodes]:
            del self.store.nodes[v]

    def _save_graph(self) -> None:
        write_json(self.root / "graph.json", self.graph.to_json(self.dataset_name))
        refs_dir = self.root / "refs"
        for b, v in self.graph.refs.items():
            p = refs_dir / b
            p.parent.mkdir(parents=True, exist_ok=True)
            data = b"" if v is None else f"{v}\n".encode()
            if not p.exists() or p.read_bytes() != data:
                _atomic_write(p, data)

    @contextlib.contextmanager
    def lock(self) -> Iterator[None]:
        """Exclusive writer lock (re-entrant within one process)."""
        if self._lock_depth == 0:
            self._lock_fh = open(self.root / "lock", "a+b")
            fcntl.flock(self._lock_fh, fcntl.LOCK_EX)
            self._load_graph()
        self._lock_depth += 1
        try:
            yield
        finally:
            self._lock_depth -= 1
            if self._lock_depth == 0:
                fcntl.flock(self._lock_fh, fcntl.LOCK_UN)
                self._lock_fh.close()
                self._lock_fh = None

    # queries -----------------------------------------------------------

    @property
    def refs(self) -> dict[str, int | None]:
        return dict(self.graph.refs)

    def resolve(self, target: int | str) -> int:
        return self.graph.resolve(target)

    def head(self, branch: str) -> int | None:
        if branch not in self.graph.refs:
            raise UnknownBranch(f"unknown branch {branch!r}")
        return self.graph.refs[branch]

    def versions(self) -> list[int]:
        return self.graph.versions()

    def materialize(self, target: int | str) -> Dataset:
        v = self.resolve(target)
        return self.store.materialize(v)

    def log(self, target: int | str) -> list[VersionNode]:
        return self.graph.log(self.resolve(target))

    def distance(self, a: int | str, b: int | str) -> int:
        return self.graph.distance(self.resolve(a), self.resolve(b))

    def lca(self, a: int | str, b: int | str) -> int:
        return self.graph.lca(self.resolve(a), self.resolve(b))

    def diff(self, a: int | str, b: int | str) -> int:
        return diff_recs(self.materialize(a), self.materialize(b))

    def sketch(self, v: int) -> Sketch:
        p = self.root / "sketches" / str(v)
        if p.exists():
            sk = Sketch.from_bytes(p.read_bytes())
            if sk.k == self.config.sketch_k:
                return sk
        return build_sketch(self.store.materialize(v, touch=False), self.config.sketch_k)

    # record-first index ------------------------------------------------

    def rf_index(self) -> RecordFirstIndex:
        """Record-first index covering every version (loaded from disk or rebuilt in memory)."""
        if self._rf is not None and set(self._rf.universe) == set(self.graph.nodes):
            return self._rf
        p = self.root / "rfindex.bin"
        idx = None
        if p.exists():
            try:
                idx = RecordFirstIndex.load(p)
            except (CorruptRepository, ValueError, IndexError):
                idx = None
            if idx is not None and not set(idx.universe) <= set(self.graph.nodes):
                idx = None
        if idx is None:
            idx = RecordFirstIndex()
        for v in self.graph.versions():
            if v not in idx:
                idx.add_version(v, self.store.materialize(v, touch=False))
        self._rf = idx
        return idx

    def save_rf_index(self) -> None:
        with self.lock():
            self.rf_index().save(self.root / "rfindex.bin")

    # create / branch / checkout -----------------------------------------

    def create_dataset(self, name: str, ds: Dataset, provenance: Provenance | None = None) -> int:
        if not name:
            raise InvalidDataset("dataset name must be non-empty")
        validate_dataset(ds)
        with self.lock():
            if self.dataset_name is not None or self.graph.nodes:
                raise Duplicate(f"this repository already holds dataset {self.dataset_name!r}")
            branch = self.config.default_branch
            prov = self._provenance(provenance, f"create {name}")
            self.dataset_name = name
            try:
                vid = self._write_version(ds, [], prov, branch)
            except BaseException:
                self.dataset_name = None
                raise
        self._fire_post(HookEvent.POST_COMMIT, vid, [], branch, sorted(ds.tables))
        return vid

    def branch(self, name: str, from_: int | str | None = None) -> int:
        if not name or "/" in name or name.startswith(".") or name.isdigit() or (name[:1] in "vV" and name[1:].isdigit()):
            raise ValueError(f"invalid branch name {name!r}")
        with self.lock():
            if name in self.graph.refs:
                raise BranchExists(f"branch {name!r} already exists")
            src = from_ if from_ is not None else self.config.default_branch
            v = self.resolve(src)
            self.graph.refs[name] = v
            self._save_graph()
        return v

    def checkout(self, target: int | str | None = None, mode: CheckoutMode = FULL, branch: str | None = None) -> WorkingCopy:
        """Working copy of ``target`` (a branch name or version).

        Checking out a branch tracks it; checking out a bare version tracks
        ``branch`` if given and otherwise the default branch.
        """
        target = self.config.default_branch if target is None else target
        if isinstance(target, str) and target in self.graph.refs:
            branch = target
            v = self.graph.refs[target]
        else:
            v = self.resolve(target)
            branch = branch or self.config.default_branch
        ds = self.store.materialize(v) if v is not None else Dataset()
        return WorkingCopy(self, v, branch, mode, ds)

    # commit --------------------------------------------------------------

    def _provenance(self, p: Provenance | None, default_message: str = "") -> Provenance:
        p = p or Provenance()
        return Provenance(
            p.message or default_message,
            p.author or self.config.author or os.environ.get("USER", ""),
            p.timestamp or now_timestamp(),
            p.program,
            p.code_commit_id,
            tuple(p.source_datasets),
        )

    def commit(self, wc: WorkingCopy, provenance: Provenance | None = None) -> int:
        with self.lock():
            branch = wc.branch
            if branch not in self.graph.refs:
                raise UnknownBranch(f"unknown branch {branch!r}")
            head = self.graph.refs[branch]
            if head != wc.base_version:
                raise StaleBase(f"working copy is based on {wc.base_version} but {branch} is at {head}")
            if head is None:
                raise UnknownVersion(f"branch {branch!r} has no versions; create the dataset first")
            new_ds = wc.result_dataset()
            missing = new_ds.unknown_constraint_tables()
            if missing:
                raise ConstraintNameUnknown(f"constraints reference unknown tables: {', '.join(missing)}")
            validate_dataset(new_ds)
            delta = compute_delta(wc.full_base, new_ds)
            if delta.is_empty():
                raise EmptyCommit("nothing to commit")
            prov = self._provenance(provenance)
            parents = [(head, self._edge_kind(head, branch))]
            parents += self._derivation_edges(prov, parents)
            self.hooks.fire(HookContext(str(self.root), self.dataset_name or "", HookEvent.PRE_COMMIT, None,
                                        [p for p, _ in parents], branch, delta.changed_tables()))
            vid = self._write_version(new_ds, parents, prov, branch, base=wc.full_base, delta=delta)
        wc._rebase(vid, new_ds)
        self._fire_post(HookEvent.POST_COMMIT, vid, [p for p, _ in parents], branch, delta.changed_tables())
        return vid

    def commit_dataset(self, branch: str, ds: Dataset, provenance: Provenance | None = None,
                       expected_head: int | None = None) -> int:
        """Commit ``ds`` as the next version of ``branch`` (bulk edits, imports)."""
        wc = self.checkout(branch)
        if expected_head is not None and wc.base_version != expected_head:
            raise StaleBase(f"{branch} is at {wc.base_version}, expected {expected_head}")
        wc._tables = {n: t.records for n, t in ds.tables.items()}
        wc._owned = set()
        wc._constraints = ds.constraints
        wc.journal = [["bulk"]]
        return self.commit(wc, provenance)

    def _edge_kind(self, head: int, branch: str) -> EdgeKind:
        return EdgeKind.SUCCESSOR if self.graph.nodes[head].branch == branch else EdgeKind.BRANCH

    def _derivation_edges(self, prov: Provenance, parents: list) -> list:
        have = {p for p, _ in parents}
        out = []
        for s in prov.source_datasets:
            if s not in self.graph.nodes:
                raise UnknownVersion(f"source dataset version {s} does not exist")
            if s not in have:
                out.append((s, EdgeKind.DERIVATION))
                have.add(s)
        return out

    def _choose_placement(self, ds: Dataset, parent: int | None, base: Dataset | None, delta: Delta | None):
        if parent is None:
            return MATERIALIZE, None
        if chain_depths(self.store.placements()).get(parent, 0) + 1 > self.config.max_chain:
            return MATERIALIZE, None
        if base is None:
            base = self.store.materialize(parent, touch=False)
        if delta is None:
            delta = compute_delta(base, ds)
        from .model import snapshot_size

        if len(encode_delta(delta, compress=False)) < snapshot_size(ds):
            return DeltaFrom(parent), base
        return MATERIALIZE, None

    def _write_version(self, ds: Dataset, parents: list[tuple[int, EdgeKind]], prov: Provenance, branch: str,
                       base: Dataset | None = None, delta: Delta | None = None) -> int:
        """Persist a new version; caller holds the lock.  graph.json is the commit point."""
        vid = self.graph.next_id()
        first = parents[0][0] if parents else None
        if first is not None and base is None:
            base = self.store.materialize(first, touch=False)
            delta = None
        placement, pbase = self._choose_placement(ds, first, base, delta)
        self.store.put_version(vid, ds, placement, flush=False, base=pbase)
        sk = build_sketch(ds, self.config.sketch_k)
        _atomic_write(self.root / "sketches" / str(vid), sk.to_bytes())
        node = VersionNode(vid, list(parents), prov, dataset_hash(ds), branch)
        graph = self.graph.copy()
        graph.add_node(node)
        graph.refs[branch] = vid
        self.store.flush()
        old_graph, self.graph = self.graph, graph
        try:
            self._save_graph()
        except BaseException:
            self.graph = old_graph
            raise
        self._update_rf_index(vid, ds, first, base, delta)
        return vid

    def _update_rf_index(self, vid: int, ds: Dataset, parent: int | None, base: Dataset | None, delta: Delta | None) -> None:
        p = self.root / "rfindex.bin"
        if self._rf is None and not p.exists():
            return
        idx = self._rf
        if idx is None:
            try:
                idx = RecordFirstIndex.load(p)
            except (CorruptRepository, ValueError, IndexError):
                p.unlink()
                return
        if parent is not None and delta is None and base is not None:
            delta = compute_delta(base, ds)
        if parent is not None and parent in idx:
            idx.add_version(vid, ds, parent, delta)
        else:
            idx.add_version(vid, ds)
        self._rf = idx
        if p.exists():
            idx.save(p)

    def _fire_post(self, event: HookEvent, vid: int | None, parents: list[int], branch: str, tables: list[str]) -> None:
        self.hooks.fire(HookContext(str(self.root), self.dataset_name or "", event, vid, parents, branch, tables))

    def commit_merge(self, into: str, source_head: int, ds: Dataset, provenance: Provenance | None = None,
                     expected_head: int | None = None) -> int:
        """Commit a merge result with two Merge parents (``into``'s head first)."""
        with self.lock():
            head = self.head(into)
            if expected_head is not None and head != expected_head:
                raise StaleBase(f"{into} moved from {expected_head} to {head} during the merge")
            validate_dataset(ds)
            missing = ds.unknown_constraint_tables()
            if missing:
                raise ConstraintNameUnknown(f"constraints reference unknown tables: {', '.join(missing)}")
            prov = self._provenance(provenance, f"merge {source_head} into {into}")
            if not prov.source_datasets:
                prov.source_datasets = (head, source_head)
            parents = [(head, EdgeKind.MERGE), (source_head, EdgeKind.MERGE)]
            base = self.store.materialize(head, touch=False)
            delta = compute_delta(base, ds)
            self.hooks.fire(HookContext(str(self.root), self.dataset_name or "", HookEvent.PRE_COMMIT, None,
                                        [head, source_head], into, delta.changed_tables()))
            vid = self._write_version(ds, parents, prov, into, base=base, delta=delta)
        self._fire_post(HookEvent.POST_COMMIT, vid, [head, source_head], into, delta.changed_tables())
        self._fire_post(HookEvent.POST_MERGE, vid, [head, source_head], into, delta.changed_tables())
        return vid

    def reset_hard(self, branch: str, target: int | str) -> int:
        """Move ``branch`` back to an ancestor of its head; no version is created or deleted."""
        with self.lock():
            head = self.head(branch)
            v = self.resolve(target)
            if head is None or not self.graph.is_ancestor(v, head):
                raise ResetRefused(f"version {v} is not an ancestor of {branch}'s head")
            dropped = self.graph.ancestors(head) - self.graph.ancestors(v)
            for other, oh in self.graph.refs.items():
                if other == branch or oh is None:
                    continue
                shared = dropped & self.graph.ancestors(oh)
                if shared:
                    raise ResetRefused(
                        f"versions {sorted(shared)} are also in the history of branch {other!r}")
            self.graph.refs[branch] = v
            self._save_graph()
        return v

    # storage planning ----------------------------------------------------

    def _materialize_all(self) -> dict[int, Dataset]:
        out = {}
        for v in self.graph.versions():
            out[v] = self.store.materialize(v, touch=False)
        return out

    def _cost_graph(self, datasets: dict[int, Dataset]):
        from .planner import build_cost_graph

        vs = self.graph.versions()
        edges = [(p, n.id) for n in self.graph.nodes.values() for p in n.parent_ids]
        sketches = {v: self.sketch(v) for v in vs}
        snap = {v: self.store.meta[v]["snapshot_bytes"] for v in vs}
        counts = {v: self.store.meta[v]["record_count"] for v in vs}
        exact = _exact_sizer(datasets)
        return build_cost_graph(vs, edges, sketches, snap, counts, exact), exact

    def replan(self, max_chain: int | None = None):
        """Re-encode the store under a freshly computed plan and write ``plan.json``."""
        from .planner import refine_and_plan

        L = max_chain or self.config.max_chain
        with self.lock():
            if not self.graph.nodes:
                from .planner import StoragePlan

                return StoragePlan({}, L)
            datasets = self._materialize_all()
            cg, exact = self._cost_graph(datasets)
            plan = refine_and_plan(cg, L, exact)
            self.store.apply_placements(plan.placements, datasets)
            write_json(self.root / "plan.json", plan.to_json())
        return plan

    def compact(self, budget: int):
        """Convert least-recently-used snapshots to deltas until the store fits in ``budget`` bytes."""
        from .planner import CompactionReport

        with self.lock():
            before = self.store.store_bytes()
            largest = max((m.get("snapshot_bytes", 0) for m in self.store.meta.values()), default=0)
            if budget <= largest:
                raise BudgetInfeasible(f"budget {budget} does not exceed the largest snapshot ({largest} bytes)")
            report = CompactionReport(budget, before, before)
            if before > budget:
                self._compact_into(report)
            report.bytes_after = self.store.store_bytes()
            write_json(self.root / "plan.json", {"L": self.config.max_chain,
                                                 "placements": {str(v): p.to_json() for v, p in self.store.placements().items()}})
        if report.conversions:
            self._fire_post(HookEvent.POST_COMPACT, None, [], "", [])
        if report.bytes_after > budget:
            err = BudgetInfeasible(f"could only reduce the store to {report.bytes_after} bytes (budget {budget})")
            err.report = report
            raise err
        return report

    def _compact_into(self, report) -> None:
        L = self.config.max_chain
        heads = self.graph.heads()
        datasets = self._materialize_all()
        cg, _ = self._cost_graph(datasets)
        neighbours: dict[int, list[int]] = {}
        for (u, v) in cg.edges:
            neighbours.setdefault(v, []).append(u)
        while self.store.store_bytes() > report.budget:
            placements = self.store.placements()
            depth = chain_depths(placements)
            children: dict[int, list[int]] = {}
            for v, p in placements.items():
                if isinstance(p, DeltaFrom):
                    children.setdefault(p.base, []).append(v)
            cands = sorted((v for v, p in placements.items() if isinstance(p, Materialize) and v not in heads),
                           key=lambda v: (self.store.last_access.get(v, 0.0), v))
            converted = False
            for v in cands:
                sub = [v]
                for x in sub:
                    sub.extend(children.get(x, ()))
                height = max(depth[x] for x in sub)
                subset = set(sub)
                best = None
                for u in sorted(set(neighbours.get(v, ()))):
                    if u in subset or depth[u] + 1 + height > L:
                        continue
                    size = len(self.store.encode_placement(v, datasets[v], DeltaFrom(u), datasets[u]))
                    if size < self.store.nodes[v].nbytes and (best is None or size < best[0]):
                        best = (size, u)
                if best is None:
                    continue
                self.store.apply_placements({v: DeltaFrom(best[1])}, datasets)
                report.conversions.append((v, best[1]))
                converted = True
                break
            if not converted:
                return

    # verification --------------------------------------------------------

    def verify(self) -> VerifyReport:
        """Cross-check every version through the delta path, the tombstone read and a fresh record-first index."""
        rep = VerifyReport()
        self.graph.check()
        self.store.clear_cache()
        fresh = RecordFirstIndex()
        from .rfindex import retrieve_version_rf

        for v in self.graph.versions():
            rep.versions += 1
            try:
                ds = self.store.materialize(v, touch=False)
            except CorruptRepository as exc:
                rep.problems.append(f"v{v}: {exc}")
                continue
            if dataset_hash(ds) != self.graph.nodes[v].dataset_hash:
                rep.problems.append(f"v{v}: dataset hash mismatch")
            if tombstone_union_read(self.store, v) != ds:
                rep.problems.append(f"v{v}: tombstone read disagrees with delta application")
            fresh.add_version(v, ds)
            if retrieve_version_rf(fresh, v) != ds:
                rep.problems.append(f"v{v}: record-first retrieval disagrees")
        try:
            fresh.check()
        except CorruptRepository as exc:
            rep.problems.append(str(exc))
        return rep

    def state_digest(self) -> str:
        """Hash of every file in the repository directory (used for atomicity checks)."""
        return directory_digest(self.root)


def _exact_sizer(datasets: dict[int, Dataset]):
    memo: dict[tuple[int, int], int] = {}

    def size(u: int, v: int) -> int:
        if (u, v) not in memo:
            memo[(u, v)] = len(encode_delta(compute_delta(datasets[u], datasets[v]), compress=False))
        return memo[(u, v)]

    return size


def directory_digest(root: str | os.PathLike) -> str:
    root = Path(root)
    h = hashlib.sha256()
    for p in sorted(root.rglob("*")):
        rel = p.relative_to(root).as_posix()
        if p.is_dir():
            h.update(b"d" + rel.encode() + b"\0")
        elif p.is_file():
            h.update(b"f" + rel.encode() + b"\0" + hashlib.sha256(p.read_bytes()).digest())
    return h.hexdigest()
