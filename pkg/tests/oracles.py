"""Independent reference computations.

None of these call into the library's solvers: integrals use mpmath
quadrature, derivatives use finite differences, and min-cost flows use a
generic nonlinear program over path variables.  Tests freeze the values
these produce and compare the library against both.
"""

from __future__ import annotations

import itertools
import math

import mpmath
import numpy as np
from scipy.optimize import minimize


def quad(f, a: float, b: float, kinks=()) -> float:
    """Integral of f over [a, b], split at the given kinks."""
    mpmath.mp.dps = 30
    cuts = [a] + sorted(k for k in kinks if a < k < b) + [b]
    return float(mpmath.quad(lambda t: f(float(t)), cuts))


def central_diff(f, x: float, h: float = 1e-6) -> float:
    return (f(x + h) - f(x - h)) / (2 * h)


def paths_of(nodes, arcs, s, t):
    """All simple s-t paths as lists of arc indices, by brute force."""
    out = []
    adj = {v: [] for v in nodes}
    for i, (u, v) in enumerate(arcs):
        adj[u].append((i, v))

    def walk(u, seen, acc):
        if u == t:
            out.append(list(acc))
            return
        for i, v in adj[u]:
            if v not in seen:
                walk(v, seen | {v}, acc + [i])

    walk(s, {s}, [])
    return out


def min_cost_paths(arcs_cost, paths, x: float):
    """Cheapest split of x over the given paths for convex separable costs (SLSQP)."""
    m = len(arcs_cost)
    n = len(paths)
    A = np.zeros((m, n))
    for j, p in enumerate(paths):
        for i in p:
            A[i, j] = 1.0

    def total(y):
        f = A @ y
        return sum(c(fe) for c, fe in zip(arcs_cost, f))

    y0 = np.full(n, x / n)
    res = minimize(total, y0, method="SLSQP", bounds=[(0, None)] * n,
                   constraints=[{"type": "eq", "fun": lambda y: y.sum() - x}],
                   options={"ftol": 1e-14, "maxiter": 500})
    return float(res.fun), A @ res.x


def brute_best_price(profit, lo: float, hi: float, n: int = 200001) -> tuple[float, float]:
    """Grid maximum of a scalar profit function."""
    qs = np.linspace(lo, hi, n)
    vals = np.array([profit(q) for q in qs])
    i = int(np.argmax(vals))
    return float(qs[i]), float(vals[i])


def high_precision(expr: str) -> float:
    mpmath.mp.dps = 50
    return float(mpmath.mpmathify(eval(expr, {"mp": mpmath})))


def series_parallel_brute(arcs, s, t) -> bool:
    """Two-terminal series-parallel test straight from the recursive definition.

    ``arcs`` is a list of (tail, head) pairs; parallel arcs are allowed.
    Tries every split of the arc set into a series or parallel composition,
    so it is only usable on a handful of arcs.
    """
    from functools import lru_cache

    arcs = tuple(arcs)

    def verts(sub):
        return {v for i in sub for v in arcs[i]}

    @lru_cache(maxsize=None)
    def sp(sub: frozenset, a, b) -> bool:
        if len(sub) == 1:
            (i,) = sub
            return arcs[i] == (a, b)
        items = sorted(sub)
        first, rest = items[0], items[1:]
        for r in range(len(rest) + 1):
            for extra in itertools.combinations(rest, r):
                e1 = frozenset((first,) + extra)
                e2 = sub - e1
                if not e2:
                    continue
                v1, v2 = verts(e1), verts(e2)
                if v1 & v2 <= {a, b} and sp(e1, a, b) and sp(e2, a, b):
                    return True
                shared = v1 & v2
                if len(shared) == 1:
                    (mid,) = shared
                    if mid not in (a, b):
                        if sp(e1, a, mid) and sp(e2, mid, b):
                            return True
                        if sp(e2, a, mid) and sp(e1, mid, b):
                            return True
        return False

    return sp(frozenset(range(len(arcs))), s, t)


def all_subsets(items):
    for r in range(len(items) + 1):
        yield from itertools.combinations(items, r)


__all__ = ["quad", "central_diff", "paths_of", "min_cost_paths", "brute_best_price", "high_precision",
           "all_subsets", "series_parallel_brute", "math"]
