"""Shared fixtures: the FIX3 scenario, random datasets and random version DAGs.

Every builder keeps its own in-memory copy of each committed dataset so tests
can compare what the repository returns against what was put in.
"""
from __future__ import annotations

import random
from collections import deque
from dataclasses import dataclass, field

from dsvc import Dataset, Provenance, Record, Repository, Table
from dsvc.merge import TakeA, detect_conflicts, three_way
from dsvc.planner import CostGraph

NAMES = ["Sam", "Amol", "Mike", "Aditya", "Hector", "Rosa", "Ines", "Kofi", "Lin", "Omar"]
DEPTS = ["a", "b", "c", "d"]


def rec(name: str, **attrs) -> Record:
    return Record(name, {"name": name, **attrs})


def fix3(path) -> tuple[Repository, dict[str, int]]:
    """Base {Sam, Amol}; master adds Mike; branch Version-1.1 adds Aditya then deletes Amol."""
    repo = Repository.init(path)
    base = Dataset.of([Table.of("T", [rec("Sam"), rec("Amol")])])
    v1 = repo.create_dataset("fix3", base, Provenance("base", "t", 1))
    wc = repo.checkout("master")
    wc.insert("T", rec("Mike"))
    v2 = repo.commit(wc, Provenance("add Mike", "t", 2))
    repo.branch("Version-1.1", v1)
    wc = repo.checkout("Version-1.1")
    wc.insert("T", rec("Aditya"))
    v3 = repo.commit(wc, Provenance("add Aditya", "t", 3))
    wc.delete("T", "Amol")
    v4 = repo.commit(wc, Provenance("delete Amol", "t", 4))
    return repo, {"base": v1, "master": v2, "aditya": v3, "branch": v4}


def keys(ds: Dataset, table: str = "T") -> set[str]:
    return set(ds.tables[table].records)


# random data ----------------------------------------------------------------


def random_value(rng: random.Random):
    r = rng.random()
    if r < 0.05:
        return None
    if r < 0.1:
        return rng.random() < 0.5
    if r < 0.55:
        return rng.randint(-50, 50)
    if r < 0.7:
        return rng.choice([0.5, -1.25, 3.0, 10.75, 1e-3])
    if r < 0.97:
        return rng.choice(DEPTS + NAMES)
    return bytes(rng.randrange(256) for _ in range(rng.randint(0, 4)))


def random_record(rng: random.Random, key: str, attrs=("name", "age", "dept", "score")) -> Record:
    chosen = [a for a in attrs if rng.random() < 0.8]
    return Record(key, {a: random_value(rng) for a in chosen})


def random_dataset(rng: random.Random, n: int, tables=("R", "S")) -> Dataset:
    out = []
    for t in tables:
        ks = rng.sample(range(max(n * 3, 1)), n)
        out.append(Table.of(t, [random_record(rng, f"k{k}") for k in ks]))
    return Dataset.of(out)


def mutate(rng: random.Random, ds: Dataset, edits: int, schema_changes: bool = True) -> Dataset:
    """A copy of ``ds`` with ``edits`` random inserts, deletes and updates (and rarely a table created or dropped)."""
    out = ds.copy()
    names = sorted(out.tables)
    if schema_changes and rng.random() < 0.08:
        if len(names) > 1 and rng.random() < 0.5:
            del out.tables[rng.choice(names)]
        else:
            t = f"X{rng.randrange(3)}"
            if t not in out.tables:
                out.tables[t] = Table(t, {})
        names = sorted(out.tables)
    if not names:
        out.tables["R"] = Table("R", {})
        names = ["R"]
    for _ in range(edits):
        t = out.tables[rng.choice(names)]
        ks = sorted(t.records)
        r = rng.random()
        if not ks or r < 0.35:
            k = f"k{rng.randrange(10 * (len(ks) + 5))}"
            t.records[k] = random_record(rng, k)
        elif r < 0.6:
            del t.records[rng.choice(ks)]
        else:
            k = rng.choice(ks)
            old = t.records[k]
            attrs = dict(old.attrs)
            if attrs and rng.random() < 0.2:
                del attrs[rng.choice(sorted(attrs))]
            else:
                attrs[rng.choice(["name", "age", "dept", "score", "extra"])] = random_value(rng)
            t.records[k] = Record(k, attrs)
    return out


def naive_diff(a: Dataset, b: Dataset) -> int:
    """Count keys whose presence or content differs, table by table."""
    n = 0
    for t in set(a.tables) | set(b.tables):
        ra = a.tables[t].records if t in a.tables else {}
        rb = b.tables[t].records if t in b.tables else {}
        for k in set(ra) | set(rb):
            if k not in ra or k not in rb or ra[k].canonical() != rb[k].canonical():
                n += 1
    return n


def bfs_distance(g, a: int, b: int) -> int:
    """Shortest directed path length from ``a`` down to ``b``; -1 when ``b`` is not a descendant."""
    children = {v: [] for v in g.nodes}
    for v, node in g.nodes.items():
        for p in node.parent_ids:
            children[p].append(v)
    dist = {a: 0}
    q = deque([a])
    while q:
        x = q.popleft()
        for c in children[x]:
            if c not in dist:
                dist[c] = dist[x] + 1
                q.append(c)
    return dist.get(b, -1)


def random_cost_graph(rng: random.Random, n: int, density: float = 0.6) -> CostGraph:
    nodes = list(range(1, n + 1))
    roots = {v: float(rng.randint(50, 200)) for v in nodes}
    edges = {}
    for u in nodes:
        for v in nodes:
            if u != v and rng.random() < density:
                edges[(u, v)] = float(rng.randint(1, 150))
    return CostGraph(nodes, roots, edges)


def exhaustive_plan_cost(cg: CostGraph, L: int) -> float:
    """Cheapest parent assignment (None = snapshot) whose delta chains are acyclic and at most L long."""
    nodes = sorted(cg.nodes)
    options = {v: [(None, cg.root_weights[v])] + sorted((u, w) for (u, x), w in cg.edges.items() if x == v)
               for v in nodes}
    best = [float("inf")]
    chosen: dict = {}

    def chain_ok() -> bool:
        for v in nodes:
            steps, cur = 0, v
            while chosen[cur] is not None:
                cur, steps = chosen[cur], steps + 1
                if steps > L:
                    return False
        return True

    def walk(i: int, cost: float) -> None:
        if cost >= best[0]:
            return
        if i == len(nodes):
            if chain_ok():
                best[0] = cost
            return
        for u, w in options[nodes[i]]:
            chosen[nodes[i]] = u
            walk(i + 1, cost + w)

    walk(0, 0.0)
    return best[0]


# random repositories -------------------------------------------------------


@dataclass
class RandomRepo:
    repo: Repository
    oracle: dict[int, Dataset] = field(default_factory=dict)
    branches: list[str] = field(default_factory=list)


def random_repo(path, rng: random.Random, n_versions: int, n_records: int, edits: int | None = None,
                merge_rate: float = 0.15, branch_rate: float = 0.25, max_chain: int | None = None) -> RandomRepo:
    """A repository with a random branch/merge topology and its snapshot oracle."""
    from dsvc import RepoConfig

    cfg = RepoConfig(max_chain=max_chain) if max_chain else None
    repo = Repository.init(path, cfg)
    rr = RandomRepo(repo, branches=["master"])
    base = random_dataset(rng, n_records)
    v = repo.create_dataset("rand", base, Provenance("root", "t", 1))
    rr.oracle[v] = base
    edits = edits if edits is not None else max(1, n_records // 10)
    while len(rr.oracle) < n_versions:
        r = rng.random()
        if r < branch_rate:
            name = f"b{len(rr.branches)}"
            repo.branch(name, rng.choice(sorted(rr.oracle)))
            rr.branches.append(name)
            continue
        if r < branch_rate + merge_rate and len(rr.branches) > 1:
            into, src = rng.sample(rr.branches, 2)
            h_into, h_src = repo.head(into), repo.head(src)
            if repo.graph.is_ancestor(h_src, h_into) or repo.graph.is_ancestor(h_into, h_src):
                continue
            lca = repo.graph.lca(h_into, h_src)
            b, a, s = rr.oracle[lca], rr.oracle[h_into], rr.oracle[h_src]
            res = {(c.table, c.key): TakeA() for c in detect_conflicts(b, a, s)}
            ds, left = three_way(b, a, s, "cell", res)
            assert not left
            if ds == a:
                continue
            nv = repo.commit_merge(into, h_src, ds, Provenance(f"merge {src}", "t", len(rr.oracle) + 1))
            rr.oracle[nv] = ds
            continue
        br = rng.choice(rr.branches)
        head = repo.head(br)
        new = mutate(rng, rr.oracle[head], rng.randint(1, edits))
        if new == rr.oracle[head]:
            continue
        nv = repo.commit_dataset(br, new, Provenance(f"edit {br}", "t", len(rr.oracle) + 1))
        rr.oracle[nv] = new
    return rr
