"""Random market generators shared by the property suites."""

from __future__ import annotations

import numpy as np

from netprice import costs, demand
from netprice.market import GENERAL_MARKET, Commodity, Edge, MarketInstance


def random_dag_edges(rng: np.random.Generator, max_nodes: int = 8, extra: int | None = None):
    """(nodes, [(tail, head)]) of a random DAG from v0 to the last node.

    A random spine guarantees connectivity; extra forward edges (parallel
    ones allowed) create competing routes.
    """
    n = int(rng.integers(2, max_nodes + 1))
    nodes = [f"v{i}" for i in range(n)]
    pairs = []
    spine = sorted(rng.choice(np.arange(1, n - 1), size=int(rng.integers(0, n - 1)), replace=False)) if n > 2 else []
    chain = [0, *spine, n - 1]
    pairs += list(zip(chain, chain[1:]))
    if extra is None:
        extra = int(rng.integers(0, 2 * n))
    for _ in range(extra):
        i, j = sorted(rng.choice(n, size=2, replace=False))
        pairs.append((int(i), int(j)))
    return nodes, [(nodes[i], nodes[j]) for i, j in pairs]


def random_power_market(rng, dem, max_nodes: int = 8) -> MarketInstance:
    nodes, pairs = random_dag_edges(rng, max_nodes)
    edges = [
        Edge(f"e{i}", u, v, costs.power(float(rng.uniform(0.2, 2.0)), float(rng.uniform(1.5, 3.0))))
        for i, (u, v) in enumerate(pairs)
    ]
    return MarketInstance(nodes, edges, [Commodity(nodes[0], nodes[-1], dem)])


def random_pwl_cost(rng, max_pieces: int = 3):
    pieces = int(rng.integers(1, max_pieces + 1))
    breaks = np.cumsum(rng.uniform(0.2, 1.0, size=pieces - 1))
    slopes = np.cumsum(rng.uniform(0.0, 1.0, size=pieces))
    slopes[0] = 0.0
    return costs.pwl_convex([float(b) for b in breaks], [float(s) for s in slopes])


def random_pwl_market(rng, dem=None, max_nodes: int = 7) -> MarketInstance:
    nodes, pairs = random_dag_edges(rng, max_nodes)
    edges = [Edge(f"e{i}", u, v, random_pwl_cost(rng)) for i, (u, v) in enumerate(pairs)]
    dem = dem or demand.affine(4.0, 1.0)
    return MarketInstance(nodes, edges, [Commodity(nodes[0], nodes[-1], dem)])


def random_bundle_market(rng, max_items: int = 5, max_bundles: int = 5) -> MarketInstance:
    """Bundle market over random item subsets with power or pwl item costs."""
    n = int(rng.integers(2, max_items + 1))
    items = []
    for i in range(n):
        if rng.random() < 0.5:
            cost = costs.power(float(rng.uniform(0.2, 2.0)), float(rng.uniform(1.5, 3.0)))
        else:
            cost = random_pwl_cost(rng)
        items.append(Edge(f"i{i}", None, None, cost))
    kinds = {e.cost.kind for e in items}
    if len(kinds) > 1:
        items = [Edge(e.id, None, None, costs.power(float(rng.uniform(0.2, 2.0)), 2.0)) for e in items]
    family = set()
    hub = f"i{int(rng.integers(0, n))}" if rng.random() < 0.6 else None
    for _ in range(int(rng.integers(1, max_bundles + 1))):
        size = int(rng.integers(1, n + 1))
        b = set(rng.choice([f"i{i}" for i in range(n)], size=size, replace=False).tolist())
        if hub:
            b.add(hub)
        family.add(tuple(sorted(b)))
    dem = random_concave_demand(rng)
    return MarketInstance([], items, [Commodity(None, None, dem)], "bundle", sorted(family))


def random_concave_demand(rng):
    return demand.affine(float(rng.uniform(1.0, 5.0)), float(rng.uniform(0.5, 3.0)))


def random_mhr_demand(rng):
    if rng.random() < 0.5:
        return demand.exponential(float(rng.uniform(1.0, 5.0)), float(rng.uniform(0.5, 2.0)), float(rng.uniform(2.0, 6.0)))
    return demand.ced(float(rng.uniform(1.0, 5.0)), float(rng.uniform(1.0, 3.0)), float(rng.uniform(1.0, 4.0)))


def random_fp_demand(rng):
    return demand.poly_concave(float(rng.uniform(1.0, 5.0)), float(rng.uniform(1.0, 3.0)), float(rng.uniform(1.0, 4.0)))


def random_fced_demand(rng):
    return demand.ced(float(rng.uniform(1.0, 5.0)), float(rng.uniform(1.0, 3.0)), float(rng.uniform(1.0, 4.0)))


__all__ = [
    "GENERAL_MARKET",
    "random_dag_edges",
    "random_power_market",
    "random_pwl_cost",
    "random_pwl_market",
    "random_bundle_market",
    "random_concave_demand",
    "random_mhr_demand",
    "random_fp_demand",
    "random_fced_demand",
]
