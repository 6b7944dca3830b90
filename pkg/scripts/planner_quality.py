"""Heuristic storage plans against the exhaustive optimum on small random cost graphs.

    python3 scripts/planner_quality.py --graphs 500 --max-nodes 7
"""
import argparse
import random
import statistics
import time

from dsvc.planner import CostGraph, optimal_plan_bruteforce, plan


def random_cost_graph(rng: random.Random, n: int, density: float) -> CostGraph:
    nodes = list(range(1, n + 1))
    roots = {v: float(rng.randint(50, 200)) for v in nodes}
    edges = {(u, v): float(rng.randint(1, 150)) for u in nodes for v in nodes if u != v and rng.random() < density}
    return CostGraph(nodes, roots, edges)


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--graphs", type=int, default=500)
    ap.add_argument("--max-nodes", type=int, default=7)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    rng = random.Random(args.seed)
    print("L\tmean_ratio\tp99_ratio\tworst\toptimal_share\theur_ms\texact_ms")
    for L in (1, 2, 3, 4):
        ratios, th, te = [], 0.0, 0.0
        for _ in range(args.graphs):
            cg = random_cost_graph(rng, rng.randint(1, args.max_nodes), rng.choice([0.3, 0.6, 1.0]))
            t = time.perf_counter()
            h = plan(cg, L)
            th += time.perf_counter() - t
            t = time.perf_counter()
            o = optimal_plan_bruteforce(cg, L)
            te += time.perf_counter() - t
            ratios.append(h.cost / o.cost)
        ratios.sort()
        exact = sum(r <= 1 + 1e-9 for r in ratios) / len(ratios)
        print(f"{L}\t{statistics.mean(ratios):.4f}\t{ratios[int(0.99 * len(ratios)) - 1]:.4f}\t{ratios[-1]:.4f}"
              f"\t{exact:.1%}\t{1000 * th / args.graphs:.2f}\t{1000 * te / args.graphs:.2f}")


if __name__ == "__main__":
    main()
