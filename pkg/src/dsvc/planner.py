"""Choosing which versions to materialize and which to store as deltas.

The candidate encodings form a cost graph: a virtual root (id 0) with an edge
to every version weighted by its snapshot size, and delta edges ``u -> v``
weighted by the size of the delta rebuilding ``v`` from ``u``.  A storage plan
is a spanning arborescence of that graph whose delta chains are at most ``L``
hops long.  :func:`plan` is the heuristic used in practice;
:func:`optimal_plan_bruteforce` is the exhaustive reference for small graphs.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable

from .errors import InfeasibleGraph, TooLarge
from .store import MATERIALIZE, DeltaFrom, Materialize, Placement, chain_depths, check_forest

ROOT = 0
BRUTEFORCE_MAX_NODES = 8
HUB_MOVE_MAX_NODES = 40  # the hub neighbourhood is roughly cubic; skip it on large graphs


@dataclass
class CostGraph:
    nodes: list[int]
    root_weights: dict[int, float]
    edges: dict[tuple[int, int], float] = field(default_factory=dict)
    exact: set[tuple[int, int]] = field(default_factory=set)

    def incoming(self) -> dict[int, list[tuple[int, float]]]:
        inc: dict[int, list[tuple[int, float]]] = {v: [(ROOT, self.root_weights[v])] for v in self.nodes}
        for (u, v), w in sorted(self.edges.items()):
            inc[v].append((u, w))
        return inc

    def weight(self, u: int, v: int) -> float:
        return self.root_weights[v] if u == ROOT else self.edges[(u, v)]


@dataclass
class StoragePlan:
    placements: dict[int, Placement]
    max_chain: int
    cost: float = 0.0

    def parents(self) -> dict[int, int]:
        return {v: (ROOT if isinstance(p, Materialize) else p.base) for v, p in self.placements.items()}

    def depths(self) -> dict[int, int]:
        return chain_depths(self.placements)

    def check(self) -> None:
        """Raise unless placements form a forest with chains of at most ``max_chain`` deltas."""
        check_forest(self.placements)
        for v, d in self.depths().items():
            if d > self.max_chain:
                raise InfeasibleGraph(f"version {v} sits {d} deltas from a snapshot (limit {self.max_chain})")

    def snapshot_count(self) -> int:
        return sum(isinstance(p, Materialize) for p in self.placements.values())

    def to_json(self) -> dict:
        return {"L": self.max_chain, "placements": {str(v): self.placements[v].to_json() for v in sorted(self.placements)}}


def plan_cost(cg: CostGraph, parents: dict[int, int]) -> float:
    return sum(cg.weight(u, v) for v, u in parents.items())


def _to_plan(cg: CostGraph, parents: dict[int, int], L: int) -> StoragePlan:
    pl = {v: (MATERIALIZE if u == ROOT else DeltaFrom(u)) for v, u in sorted(parents.items())}
    return StoragePlan(pl, L, plan_cost(cg, parents))


# minimum arborescence -----------------------------------------------------


def min_arborescence(nodes: list[int], edges: list[tuple[int, int, float]], root: int = ROOT) -> dict[int, int]:
    """Chu-Liu/Edmonds: cheapest incoming edge per node, contracting cycles.

    Ties between equal-weight edges go to the lexicographically lower
    original ``(u, v)`` pair.  Returns ``node -> parent``.
    """
    # each working edge: (u, v, w, orig_u, orig_v)
    work = [(u, v, w, u, v) for u, v, w in edges if v != root and u != v]
    return _edmonds(set(nodes), work, root, itertools.count(-1, -1))


def _edmonds(nodes: set[int], edges: list, root: int, fresh) -> dict[int, int]:
    best: dict[int, tuple] = {}
    for e in edges:
        u, v, w, ou, ov = e
        cur = best.get(v)
        if cur is None or (w, ou, ov) < (cur[2], cur[3], cur[4]):
            best[v] = e
    for v in nodes:
        if v != root and v not in best:
            raise InfeasibleGraph(f"node {v} is unreachable from the root")
    cycle = _find_cycle({v: e[0] for v, e in best.items()}, root)
    if cycle is None:
        return {v: e[0] for v, e in best.items()}
    cset = set(cycle)
    c = next(fresh)
    new_edges = []
    origin = {}
    for e in edges:
        u, v, w, ou, ov = e
        if u in cset and v in cset:
            continue
        if v in cset:
            ne = (u, c, w - best[v][2], ou, ov)
            origin[(ne[0], ne[3], ne[4])] = (u, v)
        elif u in cset:
            ne = (c, v, w, ou, ov)
            origin[(ne[0], ne[3], ne[4])] = (u, v)
        else:
            ne = e
        new_edges.append(ne)
    sub = _edmonds((nodes - cset) | {c}, new_edges, root, fresh)
    # find which edge entered the contracted node
    out: dict[int, int] = {}
    entering = None
    for v, u in sub.items():
        if v == c:
            entering = u
        else:
            out[v] = u
    # map parents: edges leaving c map back to their real tail inside the cycle
    chosen_in = _pick(new_edges, entering, c)
    real_u, real_v = origin[(chosen_in[0], chosen_in[3], chosen_in[4])]
    for v, u in list(out.items()):
        if u == c:
            e = _pick(new_edges, c, v)
            out[v] = origin[(e[0], e[3], e[4])][0]
    for v in cycle:
        out[v] = best[v][0]
    out[real_v] = real_u
    return out


def _pick(edges: list, u: int, v: int) -> tuple:
    """Cheapest edge u -> v under the same tie-break used for selection."""
    cands = [e for e in edges if e[0] == u and e[1] == v]
    return min(cands, key=lambda e: (e[2], e[3], e[4]))


def _find_cycle(parent: dict[int, int], root: int) -> list[int] | None:
    state: dict[int, int] = {}
    for start in sorted(parent):
        path = []
        v = start
        while v != root and v not in state:
            state[v] = 1
            path.append(v)
            v = parent[v]
        if v != root and state.get(v) == 1 and v in path:
            return path[path.index(v):]
        for p in path:
            state[p] = 2
    return None


# heuristic planning -------------------------------------------------------


def _subtree(children: dict[int, list[int]], v: int) -> list[int]:
    out = [v]
    i = 0
    while i < len(out):
        out.extend(children.get(out[i], ()))
        i += 1
    return out


def _children(parents: dict[int, int]) -> dict[int, list[int]]:
    ch: dict[int, list[int]] = {}
    for v, u in parents.items():
        ch.setdefault(u, []).append(v)
    for lst in ch.values():
        lst.sort()
    return ch


def _depths(parents: dict[int, int]) -> dict[int, int]:
    pl = {v: (MATERIALIZE if u == ROOT else DeltaFrom(u)) for v, u in parents.items()}
    return chain_depths(pl)


def _repair(cg: CostGraph, parents: dict[int, int], L: int, inc: dict[int, list[tuple[int, float]]]) -> None:
    """Fix chains longer than ``L`` by materializing or re-parenting one node at a time.

    The deepest node ``x`` is fixed each round; the chosen move touches a node
    ``y`` on x's chain and brings its whole subtree within the limit, so the
    number of violating nodes strictly decreases.
    """
    while True:
        depth = _depths(parents)
        x = max(depth, key=lambda v: (depth[v], -v))
        dx = depth[x]
        if dx <= L:
            return
        children = _children(parents)
        chain = []
        y = x
        while y != ROOT:
            chain.append(y)
            y = parents[y]
        best = None
        for y in chain:
            dy = depth[y]
            if dx - dy > L:
                continue
            below = set(_subtree(children, y))
            cur = cg.weight(parents[y], y)
            for u, w in inc[y]:
                if u == parents[y] or u in below:
                    continue
                du = -1 if u == ROOT else depth[u]
                if du + 1 + (dx - dy) > L:
                    continue
                cand = (w - cur, 0 if u == ROOT else 1, y, u)
                if best is None or cand < best:
                    best = cand
        if best is None:
            raise InfeasibleGraph("cannot satisfy the chain-length limit")
        parents[best[2]] = best[3]


def _improve(cg: CostGraph, parents: dict[int, int], L: int, inc: dict[int, list[tuple[int, float]]]) -> None:
    """Single-node re-parenting moves while any strictly lowers total cost."""
    improved = True
    while improved:
        improved = False
        depth = _depths(parents)
        children = _children(parents)
        best = None
        for y in sorted(parents):
            below = _subtree(children, y)
            height = max(depth[b] for b in below) - depth[y]
            bset = set(below)
            cur = cg.weight(parents[y], y)
            for u, w in inc[y]:
                if u == parents[y] or u in bset:
                    continue
                du = -1 if u == ROOT else depth[u]
                if du + 1 + height > L:
                    continue
                gain = cur - w
                if gain > 1e-9 and (best is None or (-gain, y, u) < best):
                    best = (-gain, y, u)
        if best is not None:
            parents[best[1]] = best[2]
            improved = True


def _hub_moves(cg: CostGraph, parents: dict[int, int], L: int, inc) -> bool:
    """Try promoting each node to a snapshot that others hang off; keep the best strict gain."""
    base = plan_cost(cg, parents)
    best = None
    for y in sorted(parents):
        trial = dict(parents)
        trial[y] = ROOT
        gains = []
        for x in sorted(parents):
            w = cg.edges.get((y, x))
            if x != y and w is not None and w < cg.weight(trial[x], x):
                gains.append((w - cg.weight(trial[x], x), x))
        for _, x in sorted(gains):
            trial[x] = y
        try:
            _repair(cg, trial, L, inc)
        except InfeasibleGraph:
            continue
        _improve(cg, trial, L, inc)
        cost = plan_cost(cg, trial)
        if cost < base - 1e-9 and (best is None or cost < best[0] - 1e-9):
            best = (cost, trial)
    if best is None:
        return False
    parents.clear()
    parents.update(best[1])
    return True


def _plan_exact_L(cg: CostGraph, L: int, inc) -> dict[int, int]:
    edges = [(ROOT, v, cg.root_weights[v]) for v in cg.nodes]
    edges += [(u, v, w) for (u, v), w in sorted(cg.edges.items()) if u in cg.root_weights and v in cg.root_weights]
    parents = min_arborescence(cg.nodes, edges)
    _repair(cg, parents, L, inc)
    _improve(cg, parents, L, inc)
    if len(cg.nodes) <= HUB_MOVE_MAX_NODES:
        while _hub_moves(cg, parents, L, inc):
            pass
    return parents


def _tree_plan(cg: CostGraph, L: int) -> dict[int, int] | None:
    """Exact plan when every version has at most one candidate delta parent.

    Such a candidate graph is a forest (a path is the common case), and a
    depth-indexed dynamic program over it finds the optimum directly.
    Returns None for any other shape.
    """
    par: dict[int, int] = {}
    for (u, v) in cg.edges:
        if v in par:
            return None
        par[v] = u
    kids: dict[int, list[int]] = {}
    for v, u in par.items():
        kids.setdefault(u, []).append(v)
    tops = [v for v in cg.nodes if v not in par]
    seen = 0
    order: list[int] = []
    stack = list(tops)
    while stack:
        v = stack.pop()
        order.append(v)
        seen += 1
        stack.extend(kids.get(v, ()))
    if seen != len(cg.nodes):
        return None  # a cycle of delta edges
    # best[v][d]: cheapest encoding of v's children subtrees with v at delta depth d
    best: dict[int, list[float]] = {}
    choice: dict[tuple[int, int, int], bool] = {}
    for v in reversed(order):
        row = []
        for d in range(L + 1):
            total = 0.0
            for c in kids.get(v, ()):
                snap = cg.root_weights[c] + best[c][0]
                delta = cg.edges[(v, c)] + best[c][d + 1] if d < L else math.inf
                choice[(v, c, d)] = delta < snap
                total += min(snap, delta)
            row.append(total)
        best[v] = row
    parents: dict[int, int] = {}
    stack2 = [(v, 0) for v in tops]
    for v in tops:
        parents[v] = ROOT
    while stack2:
        v, d = stack2.pop()
        for c in kids.get(v, ()):
            if choice[(v, c, d)]:
                parents[c] = v
                stack2.append((c, d + 1))
            else:
                parents[c] = ROOT
                stack2.append((c, 0))
    return parents


def plan(cg: CostGraph, L: int) -> StoragePlan:
    """Heuristic plan: minimum arborescence, then depth repair and local improvement.

    Any plan feasible for a smaller limit is feasible for ``L``, so the
    cheapest of the runs for limits ``1..L`` is returned; raising ``L`` can
    therefore never make the plan more expensive.
    """
    if L < 1:
        raise ValueError("chain-length limit must be at least 1")
    if not cg.nodes:
        return StoragePlan({}, L, 0.0)
    exact = _tree_plan(cg, L)
    if exact is not None:
        result = _to_plan(cg, exact, L)
        result.check()
        return result
    inc = cg.incoming()
    best = None
    for limit in range(1, min(L, max(len(cg.nodes) - 1, 1)) + 1):
        parents = _plan_exact_L(cg, limit, inc)
        cost = plan_cost(cg, parents)
        key = (cost, sorted(parents.items()))
        if best is None or key < best[0]:
            best = (key, parents)
    result = _to_plan(cg, best[1], L)
    result.check()
    return result


def optimal_plan_bruteforce(cg: CostGraph, L: int) -> StoragePlan:
    """Exhaustive minimum over every depth-limited spanning arborescence (at most 8 nodes)."""
    n = len(cg.nodes)
    if n > BRUTEFORCE_MAX_NODES:
        raise TooLarge(f"{n} nodes exceeds the exhaustive limit of {BRUTEFORCE_MAX_NODES}")
    if n == 0:
        return StoragePlan({}, L, 0.0)
    inc = cg.incoming()
    order = sorted(cg.nodes)
    choices = [sorted(inc[v], key=lambda uw: (uw[1], uw[0])) for v in order]
    best: list = [math.inf, None]
    floor = [min(w for _, w in ch) for ch in choices]
    suffix = [0.0] * (n + 1)
    for i in range(n - 1, -1, -1):
        suffix[i] = suffix[i + 1] + floor[i]
    parents: dict[int, int] = {}

    def feasible() -> bool:
        depth: dict[int, int] = {}
        for v in order:
            seen = []
            cur = v
            while cur != ROOT and cur not in depth:
                if cur in seen:
                    return False
                seen.append(cur)
                cur = parents[cur]
            base = -1 if cur == ROOT else depth[cur]
            for u in reversed(seen):
                base += 1
                depth[u] = base
                if base > L:
                    return False
        return True

    def rec(i: int, cost: float) -> None:
        if cost + suffix[i] > best[0] + 1e-9:
            return
        if i == n:
            if not feasible():
                return
            key = sorted(parents.items())
            if cost < best[0] - 1e-9 or (abs(cost - best[0]) <= 1e-9 and key < best[1]):
                best[0], best[1] = cost, key
            return
        v = order[i]
        for u, w in choices[i]:
            parents[v] = u
            rec(i + 1, cost + w)
        del parents[v]

    rec(0, 0.0)
    if best[1] is None:
        raise InfeasibleGraph("no depth-limited arborescence exists")
    out = _to_plan(cg, dict(best[1]), L)
    return out


# cost graph construction --------------------------------------------------


def build_cost_graph(
    versions: list[int],
    graph_edges: list[tuple[int, int]],
    sketches: dict,
    snapshot_bytes: dict[int, int],
    record_counts: dict[int, int],
    exact_delta_size: Callable[[int, int], int] | None = None,
    m: int = 4,
) -> CostGraph:
    """Candidate edges: version-graph edges in both directions plus each version's
    ``m`` nearest neighbours by sketch estimate.

    Weights are estimated delta sizes, except where both sketches are exact
    (small sets) and ``exact_delta_size`` is available, in which case the
    exact size is used directly.
    """
    from .sketch import estimate_diff

    vs = sorted(versions)
    vset = set(vs)
    cg = CostGraph(vs, {v: float(snapshot_bytes[v]) for v in vs})
    pairs: set[tuple[int, int]] = set()
    for u, v in graph_edges:
        if u in vset and v in vset and u != v:
            pairs.add((u, v))
            pairs.add((v, u))
    est: dict[tuple[int, int], float] = {}

    def estimate(a: int, b: int) -> float:
        key = (min(a, b), max(a, b))
        if key not in est:
            est[key] = estimate_diff(sketches[key[0]], sketches[key[1]])
        return est[key]

    for v in vs:
        near = sorted((estimate(v, u), u) for u in vs if u != v)[:m]
        for _, u in near:
            pairs.add((u, v))
            pairs.add((v, u))
    for u, v in sorted(pairs):
        if exact_delta_size is not None and sketches[u].exact and sketches[v].exact:
            cg.edges[(u, v)] = float(exact_delta_size(u, v))
            cg.exact.add((u, v))
        else:
            cg.edges[(u, v)] = estimated_delta_bytes(estimate(u, v), snapshot_bytes, record_counts, u, v)
    return cg


DELTA_HEADER_BYTES = 64


def estimated_delta_bytes(diff_states: float, snapshot_bytes: dict[int, int], record_counts: dict[int, int], u: int, v: int) -> float:
    per = []
    for x in (u, v):
        if record_counts.get(x):
            per.append(snapshot_bytes[x] / record_counts[x])
    avg = sum(per) / len(per) if per else 0.0
    return DELTA_HEADER_BYTES + diff_states * avg


def refine_and_plan(cg: CostGraph, L: int, exact_delta_size: Callable[[int, int], int], max_rounds: int = 6) -> StoragePlan:
    """Plan on estimates, replace the weights of selected delta edges by exact sizes, and replan until stable."""
    result = plan(cg, L)
    for _ in range(max_rounds):
        todo = [(p.base, v) for v, p in result.placements.items() if isinstance(p, DeltaFrom) and (p.base, v) not in cg.exact]
        if not todo:
            break
        for u, v in todo:
            cg.edges[(u, v)] = float(exact_delta_size(u, v))
            cg.exact.add((u, v))
        result = plan(cg, L)
    return result


@dataclass
class CompactionReport:
    budget: int
    bytes_before: int
    bytes_after: int
    conversions: list[tuple[int, int]] = field(default_factory=list)

    @property
    def reclaimed(self) -> int:
        return self.bytes_before - self.bytes_after

    def to_json(self) -> dict:
        return {
            "budget": self.budget,
            "bytes_before": self.bytes_before,
            "bytes_after": self.bytes_after,
            "reclaimed": self.reclaimed,
            "conversions": [{"version": v, "delta_from": u} for v, u in self.conversions],
        }
