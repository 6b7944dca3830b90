"""Version graph: DAG of dataset versions, branch refs, and graph queries."""
from __future__ import annotations

import enum
from collections import deque
from dataclasses import dataclass, field

from .errors import CorruptRepository, NoCommonAncestor, UnknownBranch, UnknownVersion


class EdgeKind(str, enum.Enum):
    SUCCESSOR = "successor"
    BRANCH = "branch"
    MERGE = "merge"
    DERIVATION = "derivation"


@dataclass
class Provenance:
    message: str = ""
    author: str = ""
    timestamp: int = 0
    program: str | None = None
    code_commit_id: str | None = None
    source_datasets: tuple[int, ...] = ()

    def to_json(self) -> dict:
        return {
            "message": self.message,
            "author": self.author,
            "timestamp": self.timestamp,
            "program": self.program,
            "code_commit_id": self.code_commit_id,
            "source_datasets": list(self.source_datasets),
        }

    @classmethod
    def from_json(cls, d: dict) -> "Provenance":
        return cls(
            d.get("message", ""),
            d.get("author", ""),
            int(d.get("timestamp", 0)),
            d.get("program"),
            d.get("code_commit_id"),
            tuple(d.get("source_datasets", ())),
        )


@dataclass
class VersionNode:
    id: int
    parents: list[tuple[int, EdgeKind]]
    provenance: Provenance
    dataset_hash: bytes
    branch: str = "master"

    @property
    def parent_ids(self) -> list[int]:
        return [p for p, _ in self.parents]

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "parents": [[p, k.value] for p, k in self.parents],
            "provenance": self.provenance.to_json(),
            "dataset_hash": self.dataset_hash.hex(),
            "branch": self.branch,
        }

    @classmethod
    def from_json(cls, d: dict) -> "VersionNode":
        return cls(
            int(d["id"]),
            [(int(p), EdgeKind(k)) for p, k in d["parents"]],
            Provenance.from_json(d.get("provenance", {})),
            bytes.fromhex(d["dataset_hash"]),
            d.get("branch", "master"),
        )


@dataclass
class VersionGraph:
    nodes: dict[int, VersionNode] = field(default_factory=dict)
    refs: dict[str, int | None] = field(default_factory=dict)
    _children: dict[int, list[int]] = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        self._children = {}
        for n in sorted(self.nodes):
            self._children.setdefault(n, [])
            for p in self.nodes[n].parent_ids:
                self._children.setdefault(p, []).append(n)

    # structure ---------------------------------------------------------

    def add_node(self, node: VersionNode) -> None:
        if node.id in self.nodes:
            raise CorruptRepository(f"version {node.id} already exists")
        pids = node.parent_ids
        if len(set(pids)) != len(pids):
            raise CorruptRepository("duplicate parents")
        for p in pids:
            if p not in self.nodes:
                raise UnknownVersion(p)
            if p >= node.id:
                raise CorruptRepository(f"child id {node.id} must exceed parent id {p}")
        self.nodes[node.id] = node
        self._children[node.id] = []
        for p in pids:
            self._children[p].append(node.id)

    def next_id(self) -> int:
        return max(self.nodes, default=0) + 1

    def children(self, v: int) -> list[int]:
        return self._children.get(v, [])

    def roots(self) -> list[int]:
        return sorted(n for n, node in self.nodes.items() if not node.parents)

    def heads(self) -> set[int]:
        return {v for v in self.refs.values() if v is not None}

    def check(self) -> None:
        """Raise if the graph violates its structural invariants."""
        for n, node in self.nodes.items():
            pids = node.parent_ids
            if len(set(pids)) != len(pids):
                raise CorruptRepository(f"version {n} lists a parent twice")
            for p in pids:
                if p not in self.nodes:
                    raise CorruptRepository(f"version {n} has unknown parent {p}")
                if p >= n:
                    raise CorruptRepository(f"version {n} is not newer than its parent {p}")
            if sum(1 for _, k in node.parents if k == EdgeKind.MERGE) == 1:
                raise CorruptRepository(f"merge version {n} has a single merge parent")
        if self._has_cycle():
            raise CorruptRepository("version graph has a cycle")
        for b, v in self.refs.items():
            if v is not None and v not in self.nodes:
                raise CorruptRepository(f"ref {b} points at unknown version {v}")

    def _has_cycle(self) -> bool:
        indeg = {n: len(node.parents) for n, node in self.nodes.items()}
        q = deque(n for n, d in indeg.items() if d == 0)
        seen = 0
        while q:
            n = q.popleft()
            seen += 1
            for c in self.children(n):
                indeg[c] -= 1
                if indeg[c] == 0:
                    q.append(c)
        return seen != len(self.nodes)

    # lookups -----------------------------------------------------------

    def resolve(self, target: int | str) -> int:
        """Version id for a version number, ``"v12"``, ``"12"`` or a branch name."""
        if isinstance(target, int):
            if target not in self.nodes:
                raise UnknownVersion(f"unknown version {target}")
            return target
        if target in self.refs:
            v = self.refs[target]
            if v is None:
                raise UnknownVersion(f"branch {target!r} has no versions")
            return v
        s = target[1:] if target[:1] in ("v", "V") else target
        if s.isdigit():
            return self.resolve(int(s))
        raise UnknownBranch(f"unknown branch or version {target!r}")

    def ancestors(self, v: int) -> set[int]:
        """``v`` and everything reachable through parent edges."""
        if v not in self.nodes:
            raise UnknownVersion(f"unknown version {v}")
        seen = {v}
        stack = [v]
        while stack:
            for p in self.nodes[stack.pop()].parent_ids:
                if p not in seen:
                    seen.add(p)
                    stack.append(p)
        return seen

    def descendants(self, v: int) -> set[int]:
        seen = {v}
        stack = [v]
        while stack:
            for c in self.children(stack.pop()):
                if c not in seen:
                    seen.add(c)
                    stack.append(c)
        return seen

    def is_ancestor(self, a: int, b: int) -> bool:
        return a in self.ancestors(b)

    def distance(self, src: int, dst: int) -> int:
        """Shortest directed path length src -> dst, or -1 if dst is not a descendant."""
        for v in (src, dst):
            if v not in self.nodes:
                raise UnknownVersion(f"unknown version {v}")
        if src == dst:
            return 0
        if dst < src:
            return -1
        dist = {src: 0}
        q = deque([src])
        while q:
            n = q.popleft()
            for c in self.children(n):
                if c not in dist and c <= dst:
                    dist[c] = dist[n] + 1
                    if c == dst:
                        return dist[c]
                    q.append(c)
        return -1

    def generation(self) -> dict[int, int]:
        """Longest-path depth from a root, for every node."""
        gen = {}
        for n in sorted(self.nodes):
            ps = self.nodes[n].parent_ids
            gen[n] = 1 + max((gen[p] for p in ps), default=-1)
        return gen

    def lca(self, a: int, b: int) -> int:
        """Merge base: the deepest lowest common ancestor, ties to the largest id."""
        common = self.ancestors(a) & self.ancestors(b)
        if not common:
            raise NoCommonAncestor(f"versions {a} and {b} share no ancestor")
        lowest = set(common)
        for c in common:
            if c in lowest:
                lowest -= self.ancestors(c) - {c}
        gen = self.generation()
        return max(lowest, key=lambda c: (gen[c], c))

    def log(self, v: int) -> list[VersionNode]:
        """Ancestors of ``v``, newest first; parents always come after children."""
        return [self.nodes[n] for n in sorted(self.ancestors(v), reverse=True)]

    def versions(self) -> list[int]:
        return sorted(self.nodes)

    # persistence -------------------------------------------------------

    def to_json(self, dataset: str | None = None) -> dict:
        out = {
            "nodes": [self.nodes[n].to_json() for n in sorted(self.nodes)],
            "refs": {b: self.refs[b] for b in sorted(self.refs)},
        }
        if dataset is not None:
            out["dataset"] = dataset
        return out

    @classmethod
    def from_json(cls, d: dict) -> "VersionGraph":
        nodes = {}
        for nd in d.get("nodes", []):
            node = VersionNode.from_json(nd)
            nodes[node.id] = node
        refs = {b: (None if v is None else int(v)) for b, v in d.get("refs", {}).items()}
        g = cls(nodes, refs)
        g.check()
        return g

    def copy(self) -> "VersionGraph":
        return VersionGraph(dict(self.nodes), dict(self.refs))

