"""Convex min-cost flow, the cost curve R(x) and its one-sided marginals.

Three engines share one residual-graph toolbox:

* smooth costs: path-based active-set Newton with shortest-path column
  generation, falling back to pairwise path rebalancing;
* piecewise-linear costs and capacities: exact successive shortest paths,
  each augmentation stopping at the next kink, capacity or the target;
* anything else: a feasible seed followed by negative-cycle canceling with
  exact line search along each cycle.
"""

from __future__ import annotations

import heapq
import math
from bisect import bisect_left
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import networkx as nx
import numpy as np

from .costs import LEFT, RIGHT, CostFunction
from .demand import DemandFunction
from .errors import DomainError, InconsistencyError, InfeasibleError, SolverError
from .market import GRAPH, FlowSolution, MarketInstance, PathFlow

DEFAULT_TOL = 1e-8
_FLOW_EPS = 1e-14


# -- compiled network -----------------------------------------------------------

class Network:
    """Integer-indexed view of a graph: node indices, edge arrays, costs."""

    def __init__(self, nodes: Sequence[str], tails: Sequence[int], heads: Sequence[int],
                 costs: Sequence[CostFunction], labels: Sequence[str]):
        self.nodes = list(nodes)
        self.index = {v: i for i, v in enumerate(self.nodes)}
        self.tails = list(tails)
        self.heads = list(heads)
        self.costs = list(costs)
        self.labels = list(labels)
        self.n = len(self.nodes)
        self.m = len(self.tails)
        self.out: list[list[int]] = [[] for _ in range(self.n)]
        self.inn: list[list[int]] = [[] for _ in range(self.n)]
        for i, (u, v) in enumerate(zip(self.tails, self.heads)):
            self.out[u].append(i)
            self.inn[v].append(i)
        self.caps = [c.capacity for c in self.costs]

    @classmethod
    def from_instance(cls, inst: MarketInstance) -> "Network":
        if inst.mode != GRAPH:
            raise DomainError("flow routines need a graph-mode market")
        index = {v: i for i, v in enumerate(inst.nodes)}
        return cls(
            inst.nodes,
            [index[e.tail] for e in inst.edges],
            [index[e.head] for e in inst.edges],
            [e.cost for e in inst.edges],
            [e.id for e in inst.edges],
        )

    def extended(self, extra_nodes: Sequence[str], arcs: Sequence[tuple[str, str, CostFunction, str]]) -> "Network":
        nodes = self.nodes + list(extra_nodes)
        index = {v: i for i, v in enumerate(nodes)}
        return Network(
            nodes,
            self.tails + [index[a[0]] for a in arcs],
            self.heads + [index[a[1]] for a in arcs],
            self.costs + [a[2] for a in arcs],
            self.labels + [a[3] for a in arcs],
        )

    def marginals(self, x: Sequence[float], side: str = RIGHT) -> list[float]:
        return [c.marginal(xe, side) for c, xe in zip(self.costs, x)]

    def total_cost(self, x: Sequence[float]) -> float:
        return sum(c.cost(xe) for c, xe in zip(self.costs, x))


class DemandShortfall(CostFunction):
    """Welfare lost when ``y`` of a population does not buy: Λ(T) - Λ(T - y).

    Lets a welfare maximization with free magnitudes be solved as a
    min-cost flow with fixed magnitudes.
    """

    kind = "shortfall"

    def __init__(self, demand: DemandFunction):
        object.__setattr__(self, "demand", demand)
        object.__setattr__(self, "total", demand.cumulative(demand.T))

    @property
    def smooth(self) -> bool:  # type: ignore[override]
        return not self.demand.breakpoints()

    @property
    def piecewise_linear(self) -> bool:  # type: ignore[override]
        return self.demand.kind == "uniform"

    @property
    def capacity(self) -> float:
        return self.demand.T

    def cost(self, y):
        y = min(max(y, 0.0), self.demand.T)
        return self.total - self.demand.cumulative(self.demand.T - y)

    def marginal(self, y, side=RIGHT):
        T = self.demand.T
        if side == RIGHT and y >= T * (1 - 1e-12):
            return math.inf
        return self.demand.value(min(max(T - y, 0.0), T))

    def curvature(self, y):
        T = self.demand.T
        x = min(max(T - y, 0.0), T)
        if x <= 0.0:
            return 0.0
        return abs(self.demand.derivative(x, LEFT))

    def kinks(self):
        T = self.demand.T
        return tuple(sorted(T - b for b in self.demand.breakpoints())) + (T,)

    def to_dict(self):
        return {"kind": self.kind}


# -- shortest paths -------------------------------------------------------------

def dijkstra(net: Network, weights: Sequence[float], source: int, reverse: bool = False):
    """Shortest distances over non-negative weights; infinite weights block arcs.

    Ties keep the first label found, scanning edges in index order.
    """
    dist = [math.inf] * net.n
    pred = [-1] * net.n
    dist[source] = 0.0
    heap = [(0.0, source)]
    done = [False] * net.n
    adj = net.inn if reverse else net.out
    ends = net.tails if reverse else net.heads
    while heap:
        d, u = heapq.heappop(heap)
        if done[u]:
            continue
        done[u] = True
        for i in adj[u]:
            w = weights[i]
            if w == math.inf:
                continue
            v = ends[i]
            nd = d + w
            if nd < dist[v]:
                dist[v] = nd
                pred[v] = i
                heapq.heappush(heap, (nd, v))
    return dist, pred


@dataclass
class ResidualArc:
    tail: int
    head: int
    weight: float
    edge: int
    direction: int  # +1 forward (add flow), -1 backward (remove flow)


def residual_arcs(net: Network, x: Sequence[float], plus: Sequence[float] | None = None,
                  minus: Sequence[float] | None = None, eps: float = 1e-12) -> list[ResidualArc]:
    """Forward arcs weigh the right marginal, reverse arcs minus the left one.

    Saturated capacities drop the forward arc; empty edges have no reverse arc.
    """
    if plus is None:
        plus = net.marginals(x, RIGHT)
    if minus is None:
        minus = net.marginals(x, LEFT)
    arcs = []
    for i in range(net.m):
        u, v = net.tails[i], net.heads[i]
        if plus[i] < math.inf and x[i] < net.caps[i] * (1 - 1e-12) - eps:
            arcs.append(ResidualArc(u, v, plus[i], i, 1))
        if x[i] > eps:
            arcs.append(ResidualArc(v, u, -minus[i], i, -1))
    return arcs


def bellman_ford(n: int, arcs: Sequence[ResidualArc], source: int, reverse: bool = False,
                 slack: float = 1e-12):
    """Label-correcting shortest paths allowing negative weights.

    With ``reverse`` the distances are *to* ``source``.  Raises
    InconsistencyError carrying the cycle when a negative cycle is found.
    """
    dist = [math.inf] * n
    pred: list = [None] * n
    dist[source] = 0.0
    for rounds in range(n + 1):
        changed = False
        for a in arcs:
            u, v = (a.head, a.tail) if reverse else (a.tail, a.head)
            du = dist[u]
            if du == math.inf:
                continue
            nd = du + a.weight
            if nd < dist[v] - slack * (1.0 + abs(dist[v] if dist[v] < math.inf else 0.0)):
                dist[v] = nd
                pred[v] = a
                changed = True
        if not changed:
            return dist, pred
    cycle = _find_cycle(n, pred, reverse)
    err = InconsistencyError("negative cycle in residual graph")
    err.cycle = cycle
    raise err


def _find_cycle(n: int, pred: list, reverse: bool) -> list:
    for start in range(n):
        seen: dict = {}
        v = start
        while v is not None and pred[v] is not None and v not in seen:
            seen[v] = len(seen)
            a = pred[v]
            v = a.tail if not reverse else a.head
            if v is None:
                break
        if v is not None and v in seen:
            cycle, u = [], v
            while True:
                a = pred[u]
                cycle.append(a)
                u = a.tail if not reverse else a.head
                if u == v:
                    break
            return cycle[::-1]
    return []


def find_negative_cycle(n: int, arcs: Sequence[ResidualArc], tol: float) -> list | None:
    """A cycle of total weight below -tol, or None.

    Weights are lifted by tol/n so that only cycles more negative than tol
    register.
    """
    shift = tol / max(n, 1)
    lifted = [ResidualArc(a.tail, a.head, a.weight + shift, a.edge, a.direction) for a in arcs]
    dist = [0.0] * n
    pred: list = [None] * n
    for _ in range(n + 1):
        changed = False
        last = None
        for a, orig in zip(lifted, arcs):
            nd = dist[a.tail] + a.weight
            if nd < dist[a.head] - 1e-15 * (1 + abs(dist[a.head])):
                dist[a.head] = nd
                pred[a.head] = orig
                changed = True
                last = a.head
        if not changed:
            return None
    v = last
    for _ in range(n):
        v = pred[v].tail
    cycle, u = [], v
    while True:
        a = pred[u]
        cycle.append(a)
        u = a.tail
        if u == v:
            break
    return cycle[::-1]


# -- decomposition --------------------------------------------------------------

def decompose(net: Network, x: Sequence[float], sources: Sequence[int], sink: int,
              amounts: Sequence[float] | None = None,
              tol: float = 1e-13) -> list[tuple[int, tuple[int, ...], float]]:
    """Greedy path decomposition, smallest edge index first, cycles removed.

    ``sources`` lists (in commodity order) the start node of each commodity
    and ``amounts`` how much each one sends; returns (commodity, edge-index
    path, amount) triples.
    """
    rem = list(x)
    scale = max([abs(v) for v in rem] + [1.0])
    cut = tol * scale
    out = []
    for k, s in enumerate(sources):
        left = math.inf if amounts is None else amounts[k]
        while left > cut:
            path: list[int] = []
            pos = {s: 0}
            u = s
            while u != sink:
                nxt = next((i for i in net.out[u] if rem[i] > cut), None)
                if nxt is None:
                    break
                path.append(nxt)
                u = net.heads[nxt]
                if u in pos:
                    loop = path[pos[u]:]
                    amt = min(rem[i] for i in loop)
                    for i in loop:
                        rem[i] -= amt
                    del path[pos[u]:]
                    pos = {net.tails[i]: j for j, i in enumerate(path)}
                    pos[u] = len(path)
                    continue
                pos[u] = len(path)
            if u != sink or not path:
                break
            amt = min(min(rem[i] for i in path), left)
            for i in path:
                rem[i] -= amt
            left -= amt
            out.append((k, tuple(path), amt))
    return out


def _decompose_commodities(net: Network, x: Sequence[float], comms, tol: float = 1e-13):
    """Decompose when commodities may share a sink but not a source."""
    if len(comms) == 1:
        return decompose(net, x, [comms[0][0]], comms[0][1], None, tol)
    sinks = {c[1] for c in comms}
    if len(sinks) != 1:
        raise DomainError("edge-flow decomposition of several sinks is ambiguous")
    return decompose(net, x, [c[0] for c in comms], comms[0][1], [c[2] for c in comms], tol)


# -- engines --------------------------------------------------------------------

@dataclass
class _EngineResult:
    x: list
    paths: list = field(default_factory=list)  # (commodity, path, amount)
    iterations: int = 0


def _path_length(weights, path):
    return sum(weights[i] for i in path)


def _extract(pred, net, target):
    path = []
    v = target
    while pred[v] != -1:
        i = pred[v]
        path.append(i)
        v = net.tails[i]
    return tuple(reversed(path))


def _smooth_engine(net: Network, comms, tol: float, warm: list | None = None,
                   max_iter: int = 2000, columns: Sequence[Sequence[tuple]] | None = None) -> _EngineResult:
    """Active-set Newton over path flows with shortest-path column generation.

    ``comms`` is a list of (source, sink, amount); ``warm`` a list of
    (commodity, path, amount) triples to start from.  ``columns`` replaces
    the shortest-path search by a minimum over explicit per-commodity
    candidate paths (used for bundle markets).
    """
    m = net.m

    def cheapest(k, weights):
        if columns is not None:
            best = min(columns[k], key=lambda p: (_path_length(weights, p), p))
            return best, _path_length(weights, best)
        s, t, _ = comms[k]
        dist, pred = dijkstra(net, weights, s)
        if dist[t] == math.inf:
            raise InfeasibleError("sink unreachable")
        return _extract(pred, net, t), dist[t]

    paths: list[tuple[int, tuple]] = []
    where: dict = {}
    f: list[float] = []

    def add(k, p, amt=0.0):
        key = (k, p)
        if key in where:
            f[where[key]] += amt
            return where[key]
        where[key] = len(paths)
        paths.append(key)
        f.append(amt)
        return where[key]

    if warm:
        totals = [0.0] * len(comms)
        for k, p, amt in warm:
            totals[k] += amt
        for k, p, amt in warm:
            if totals[k] > 0 and comms[k][2] > 0:
                add(k, p, amt * comms[k][2] / totals[k])
    zero = [0.0] * m
    w0 = net.marginals(zero)
    for k, (s, t, amt) in enumerate(comms):
        if amt > 0 and not any(pk == k and f[j] > 0 for j, (pk, _) in enumerate(paths)):
            add(k, cheapest(k, w0)[0], amt)

    def edge_flows():
        x = [0.0] * m
        for (k, p), amt in zip(paths, f):
            if amt > 0:
                for i in p:
                    x[i] += amt
        return x

    x = edge_flows()
    it = 0
    for it in range(1, max_iter + 1):
        marg = net.marginals(x)
        shortest = {}
        residual = 0.0
        for k, (s, t, amt) in enumerate(comms):
            if amt <= 0:
                continue
            sp, best = cheapest(k, marg)
            shortest[k] = add(k, sp)
            for j, (pk, p) in enumerate(paths):
                if pk == k and f[j] > 0:
                    residual = max(residual, _path_length(marg, p) - best)
        if residual <= 1e-3 * tol:
            break
        active = [j for j in range(len(paths)) if f[j] > 0 or j in shortest.values()]
        step = _newton_direction(net, paths, f, active, x, marg, len(comms))
        moved = False
        if step is not None:
            moved = _apply_step(net, paths, f, active, step, x)
        if not moved:
            _pairwise_step(net, paths, f, comms, x, marg, shortest)
        x = edge_flows()
    else:
        if residual > tol:
            raise SolverError("smooth min-cost flow did not converge", residual=residual)
    return _EngineResult(x, [(k, p, amt) for (k, p), amt in zip(paths, f) if amt > 0], it)


def _newton_direction(net, paths, f, active, x, marg, ncomm):
    m = net.m
    na = len(active)
    A = np.zeros((m, na))
    for c, j in enumerate(active):
        for i in paths[j][1]:
            A[i, c] = 1.0
    D = np.array([net.costs[i].curvature(x[i]) for i in range(m)])
    H = A.T @ (D[:, None] * A)
    scale = max(float(np.max(np.diag(H))) if na else 0.0, 1e-12)
    H += np.eye(na) * (1e-9 * scale)
    g = np.array([_path_length(marg, paths[j][1]) for j in active])
    comm_ids = sorted({paths[j][0] for j in active})
    E = np.zeros((na, len(comm_ids)))
    for c, j in enumerate(active):
        E[c, comm_ids.index(paths[j][0])] = 1.0
    K = np.block([[H, E], [E.T, np.zeros((len(comm_ids), len(comm_ids)))]])
    rhs = np.concatenate([-g, np.zeros(len(comm_ids))])
    try:
        sol = np.linalg.solve(K, rhs)
    except np.linalg.LinAlgError:
        return None
    d = sol[:na]
    if not np.all(np.isfinite(d)) or float(g @ d) >= 0:
        return None
    return d


def _apply_step(net, paths, f, active, d, x):
    fa = np.array([f[j] for j in active])
    neg = d < 0
    t_max = 1.0
    if np.any(neg):
        t_max = min(1.0, float(np.min(fa[neg] / -d[neg])))
    if t_max <= 0:
        return False
    dx = [0.0] * net.m
    for c, j in enumerate(active):
        for i in paths[j][1]:
            dx[i] += d[c]
    moving = [(i, de) for i, de in enumerate(dx) if de != 0.0]

    # Cost is convex along the ray, so search on its slope; comparing costs
    # fails at small magnitudes where differences sit below roundoff.
    def slope(t):
        total = 0.0
        for i, de in moving:
            xe = max(x[i] + t * de, 0.0)
            total += de * net.costs[i].marginal(xe, RIGHT if de > 0 else LEFT)
        return total

    if slope(0.0) >= 0:
        return False
    t = t_max
    if slope(t_max) > 0:
        lo, hi = 0.0, t_max
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            if slope(mid) <= 0:
                lo = mid
            else:
                hi = mid
        t = lo
        if t <= 0:
            return False
    for c, j in enumerate(active):
        val = f[j] + t * d[c]
        if t == t_max and neg[c] and fa[c] / -d[c] <= t_max * (1 + 1e-12):
            val = 0.0
        f[j] = max(float(val), 0.0)
    return True


def _pairwise_step(net, paths, f, comms, x, marg, shortest):
    """Move flow from the longest used path to the shortest by exact line search."""
    best = None
    for k, j_short in shortest.items():
        short_len = _path_length(marg, paths[j_short][1])
        for j, (pk, p) in enumerate(paths):
            if pk == k and f[j] > 0 and j != j_short:
                gap = _path_length(marg, p) - short_len
                if best is None or gap > best[0]:
                    best = (gap, j, j_short)
    if best is None or best[0] <= 0:
        return
    _, j_long, j_short = best
    long_p, short_p = set(paths[j_long][1]), set(paths[j_short][1])
    up = [i for i in short_p - long_p]
    down = [i for i in long_p - short_p]

    def slope(delta):
        return (sum(net.costs[i].marginal(x[i] + delta, RIGHT) for i in up)
                - sum(net.costs[i].marginal(max(x[i] - delta, 0.0), LEFT) for i in down))

    lo, hi = 0.0, f[j_long]
    if slope(hi) <= 0:
        delta = hi
    else:
        for _ in range(100):
            mid = 0.5 * (lo + hi)
            if slope(mid) <= 0:
                lo = mid
            else:
                hi = mid
        delta = lo
    f[j_long] -= delta
    f[j_short] += delta
    if f[j_long] <= _FLOW_EPS * max(1.0, delta):
        f[j_short] += f[j_long]
        f[j_long] = 0.0


def _exact_engine(net: Network, source: int, sink: int, amount: float,
                  max_aug: int = 1_000_000) -> _EngineResult:
    """Successive shortest paths for piecewise-linear costs, exact."""
    x = [0.0] * net.m
    remaining = amount
    it = 0
    stop = 1e-14 * max(1.0, amount)
    while remaining > stop:
        it += 1
        if it > max_aug:
            raise SolverError("augmentation cap reached", residual=remaining)
        arcs = residual_arcs(net, x)
        dist, pred = bellman_ford(net.n, arcs, source)
        if dist[sink] == math.inf:
            raise InfeasibleError(f"cannot route {amount!r}: capacity exhausted")
        path = []
        v = sink
        while v != source:
            a = pred[v]
            path.append(a)
            v = a.tail
        step = remaining
        for a in path:
            xe = x[a.edge]
            if a.direction > 0:
                step = min(step, net.costs[a.edge].next_kink(xe) - xe)
            else:
                step = min(step, xe - net.costs[a.edge].prev_kink(xe))
        step = max(step, 0.0)
        if step == 0.0:
            raise SolverError("zero-length augmentation", residual=remaining)
        for a in path:
            x[a.edge] = max(x[a.edge] + a.direction * step, 0.0)
            _snap_to_kink(net.costs[a.edge], x, a.edge)
        remaining -= step
    return _EngineResult(x, [], it)


def _snap_to_kink(cost: CostFunction, x: list, i: int) -> None:
    for b in cost.kinks():
        if abs(x[i] - b) <= 1e-12 * max(1.0, b):
            x[i] = b


def cancel_cycles(net: Network, x: list, tol: float, max_iter: int = 100_000) -> int:
    """Cancel residual cycles of weight below -tol with exact line search."""
    for it in range(max_iter):
        cycle = find_negative_cycle(net.n, residual_arcs(net, x), tol)
        if cycle is None:
            return it
        cap = math.inf
        for a in cycle:
            if a.direction > 0:
                cap = min(cap, net.caps[a.edge] - x[a.edge])
            else:
                cap = min(cap, x[a.edge])
        if cap == math.inf:
            cap = max(sum(x), 1.0)

        def slope(delta):
            s = 0.0
            for a in cycle:
                if a.direction > 0:
                    s += net.costs[a.edge].marginal(x[a.edge] + delta, RIGHT)
                else:
                    s -= net.costs[a.edge].marginal(max(x[a.edge] - delta, 0.0), LEFT)
            return s

        lo, hi = 0.0, cap
        if slope(hi * (1 - 1e-15)) < 0:
            delta = hi
        else:
            for _ in range(200):
                mid = 0.5 * (lo + hi)
                if slope(mid) < 0:
                    lo = mid
                else:
                    hi = mid
                if hi - lo <= 1e-15 * max(1.0, hi):
                    break
            delta = hi
        if delta <= 0:
            return it
        for a in cycle:
            x[a.edge] = max(x[a.edge] + a.direction * delta, 0.0)
            _snap_to_kink(net.costs[a.edge], x, a.edge)
    raise SolverError("cycle canceling did not converge")


def _generic_engine(net: Network, source: int, sink: int, amount: float, tol: float) -> _EngineResult:
    """Feasible seed by shortest paths on marginals, then cycle canceling."""
    x = [0.0] * net.m
    remaining = amount
    chunk = amount / 32 if amount > 0 else 0.0
    stop = 1e-14 * max(1.0, amount)
    it = 0
    while remaining > stop:
        it += 1
        dist, pred = bellman_ford(net.n, residual_arcs(net, x), source)
        if dist[sink] == math.inf:
            raise InfeasibleError(f"cannot route {amount!r}: capacity exhausted")
        path = []
        v = sink
        while v != source:
            a = pred[v]
            path.append(a)
            v = a.tail
        step = min(remaining, chunk)
        for a in path:
            xe = x[a.edge]
            if a.direction > 0:
                step = min(step, net.caps[a.edge] - xe)
            else:
                step = min(step, xe)
        for a in path:
            x[a.edge] = max(x[a.edge] + a.direction * step, 0.0)
        remaining -= step
    it += cancel_cycles(net, x, tol)
    return _EngineResult(x, [], it)


# -- public API -----------------------------------------------------------------

def marginal_bounds(net: Network, x: Sequence[float], source: int, sink: int,
                    tol: float = DEFAULT_TOL) -> tuple[float, float]:
    """(r^-, r^+): removing / adding a unit of source-sink flow at the margin.

    Smooth networks read both off the shortest marginal-cost path.  Otherwise
    residual distances are taken with arc weights lifted by tol/n, so that
    cycles of weight above -tol left by an inexact solve are harmless.
    """
    if _choose_engine(net) == "smooth":
        plus = dijkstra(net, net.marginals(x), source)[0][sink]
        return plus, plus
    shift = tol / max(net.n, 1)
    arcs = [ResidualArc(a.tail, a.head, a.weight + shift, a.edge, a.direction) for a in residual_arcs(net, x)]
    dist, pred = bellman_ford(net.n, arcs, source)
    plus = _unlift(dist[sink], pred, sink, source, shift, reverse=False)
    if sum(x[i] for i in net.out[source]) - sum(x[i] for i in net.inn[source]) <= 0:
        return plus, plus
    back, bpred = bellman_ford(net.n, arcs, source, reverse=True)
    minus = -_unlift(back[sink], bpred, sink, source, shift, reverse=True) if back[sink] < math.inf else plus
    return min(minus, plus), plus


def _unlift(d: float, pred: list, start: int, stop: int, shift: float, reverse: bool) -> float:
    """Remove the per-arc lift from a distance by counting the path's arcs."""
    if d == math.inf:
        return d
    hops, v = 0, start
    while v != stop and pred[v] is not None and hops <= len(pred):
        a = pred[v]
        v = a.head if reverse else a.tail
        hops += 1
    return d - hops * shift


def kkt_residual(net: Network, x: Sequence[float], paths, comms) -> float:
    """Largest excess of a used path's left marginal over the cheapest right marginal."""
    plus = net.marginals(x, RIGHT)
    minus = net.marginals(x, LEFT)
    worst = 0.0
    for k, (s, t, _) in enumerate(comms):
        dist, _ = dijkstra(net, plus, s)
        for pk, p, amt in paths:
            if pk == k and amt > 0:
                worst = max(worst, _path_length(minus, p) - dist[t])
    return worst


def max_flow(inst: MarketInstance, source: str | None = None, sink: str | None = None) -> float:
    """Maximum source-sink throughput under edge capacities (inf if unbounded)."""
    source = inst.source if source is None else source
    sink = inst.sink if sink is None else sink
    return _max_flow_net(Network.from_instance(inst), inst.nodes.index(source), inst.nodes.index(sink))


def _max_flow_net(net: Network, s: int, t: int) -> float:
    g = nx.DiGraph()
    for i in range(net.m):
        mid = ("e", i)
        cap = net.caps[i]
        attrs = {} if cap == math.inf else {"capacity": cap}
        g.add_edge(("v", net.tails[i]), mid, **attrs)
        g.add_edge(mid, ("v", net.heads[i]), **attrs)
    try:
        value, _ = nx.maximum_flow(g, ("v", s), ("v", t))
    except nx.NetworkXUnbounded:
        return math.inf
    return float(value)


def min_cut_edges(inst: MarketInstance) -> list[str]:
    """Edges of a minimum capacity source-sink cut (ids in edge order)."""
    net = Network.from_instance(inst)
    g = nx.DiGraph()
    for i in range(net.m):
        cap = net.caps[i]
        attrs = {} if cap == math.inf else {"capacity": cap}
        g.add_edge(("v", net.tails[i]), ("e", i), **attrs)
        g.add_edge(("e", i), ("v", net.heads[i]))
    s, t = inst.nodes.index(inst.source), inst.nodes.index(inst.sink)
    _, (side, _) = nx.minimum_cut(g, ("v", s), ("v", t))
    return [
        inst.edges[i].id for i in range(net.m)
        if ("v", net.tails[i]) in side and ("e", i) not in side
    ]


def _choose_engine(net: Network) -> str:
    if all(c.smooth for c in net.costs):
        return "smooth"
    if all(c.piecewise_linear for c in net.costs):
        return "exact"
    return "generic"


def _solution(net: Network, engine: _EngineResult, comms, names, tol: float,
              total: float, bounds: tuple[float, float] | None) -> FlowSolution:
    x = engine.x
    triples = _decompose_commodities(net, x, comms)
    paths = [PathFlow(tuple(names[i] for i in p), amt, k) for k, p, amt in triples]
    edge_flow = {names[i]: x[i] for i in range(len(names))}
    residual = kkt_residual(net, x, triples, comms)
    minus, plus = (b + 0.0 for b in bounds) if bounds else (None, None)
    return FlowSolution(
        edge_flow=edge_flow,
        paths=paths,
        magnitude=total,
        cost=net.total_cost(x),
        marginal_minus=minus,
        marginal_plus=plus,
        kkt_residual=float(residual),
        iterations=engine.iterations,
        commodity_magnitudes=tuple(c[2] for c in comms),
    )


def solve_network(net: Network, comms: list, tol: float = DEFAULT_TOL,
                  warm: list | None = None) -> _EngineResult:
    """Min-cost flow on a compiled network for fixed (source, sink, amount) triples."""
    total = sum(c[2] for c in comms)
    if total <= 0:
        return _EngineResult([0.0] * net.m)
    kind = _choose_engine(net)
    if kind == "smooth":
        return _smooth_engine(net, comms, tol, warm)
    if len(comms) == 1:
        s, t, amt = comms[0]
    else:
        sinks = {c[1] for c in comms}
        if len(sinks) != 1:
            raise DomainError("non-smooth multi-commodity flow needs a common sink")
        from .costs import Capacity

        star = "__source__"
        arcs = [(star, net.nodes[c[0]], Capacity(c[2]), f"__supply{k}") for k, c in enumerate(comms) if c[2] > 0]
        ext = net.extended([star], arcs)
        res = solve_network(ext, [(ext.index[star], comms[0][1], total)], tol)
        return _EngineResult(res.x[: net.m], [], res.iterations)
    if kind == "exact":
        res = _exact_engine(net, s, t, amt)
        res.iterations += cancel_cycles(net, res.x, tol)
        return res
    return _generic_engine(net, s, t, amt, tol)


def min_cost_flow(inst: MarketInstance, x: float, tol: float = DEFAULT_TOL, commodity: int = 0,
                  warm: FlowSolution | None = None) -> FlowSolution:
    """Cheapest flow of magnitude ``x`` for one commodity."""
    curve_net = Network.from_instance(inst)
    return _single_solve(curve_net, inst, x, tol, commodity, warm)


def _single_solve(net: Network, inst: MarketInstance, x: float, tol: float, commodity: int,
                  warm: FlowSolution | None) -> FlowSolution:
    if x < 0 or not math.isfinite(x):
        raise DomainError(f"flow magnitude must be finite and >= 0, got {x!r}")
    c = inst.commodities[commodity]
    s, t = net.index[c.source], net.index[c.sink]
    comms = [(s, t, float(x))]
    if inst.has_capacities:
        cap = _max_flow_net(net, s, t)
        if x > cap * (1 + 1e-12):
            raise InfeasibleError(f"magnitude {x!r} exceeds max flow {cap!r}")
        x = min(x, cap)
        comms = [(s, t, float(x))]
    warm_paths = None
    if warm is not None and warm.magnitude > 0:
        idx = {name: i for i, name in enumerate(net.labels)}
        warm_paths = [(0, tuple(idx[e] for e in p.edges), p.amount) for p in warm.paths if p.amount > 0]
    res = solve_network(net, comms, tol, warm_paths)
    bounds = marginal_bounds(net, res.x, s, t, tol)
    return _solution(net, res, comms, net.labels, tol, float(x), bounds)


def multi_commodity_flow(inst: MarketInstance, amounts: Sequence[float], tol: float = DEFAULT_TOL) -> FlowSolution:
    """Cheapest flow sending ``amounts[k]`` of every commodity."""
    net = Network.from_instance(inst)
    comms = [(net.index[c.source], net.index[c.sink], float(a)) for c, a in zip(inst.commodities, amounts)]
    res = solve_network(net, comms, tol)
    sol = _solution(net, res, comms, net.labels, tol, sum(amounts), None)
    return sol


def welfare_optimum(inst: MarketInstance, tol: float = DEFAULT_TOL) -> FlowSolution:
    """Welfare-maximizing flow over all commodities with free magnitudes.

    Each commodity gets a bypass arc to its sink whose cost is the value its
    non-buying population forgoes; routing the full population then
    minimizes production cost plus forgone value.
    """
    net = Network.from_instance(inst)
    arcs = []
    extra = []
    comms = []
    for k, c in enumerate(inst.commodities):
        hub = f"__pop{k}__"
        extra.append(hub)
        from .costs import Zero

        arcs.append((hub, c.source, Zero(), f"__buy{k}"))
        arcs.append((hub, c.sink, DemandShortfall(c.demand), f"__skip{k}"))
    ext = net.extended(extra, arcs)
    for k, c in enumerate(inst.commodities):
        comms.append((ext.index[f"__pop{k}__"], ext.index[c.sink], c.demand.T))
    res = solve_network(ext, comms, tol)
    x = res.x[: net.m]
    bought = [res.x[net.m + 2 * k] for k in range(len(inst.commodities))]
    sub = [(net.index[c.source], net.index[c.sink], b) for c, b in zip(inst.commodities, bought)]
    solution = _solution(net, _EngineResult(x, [], res.iterations), sub, net.labels, tol, sum(bought), None)
    return solution


class MinCostCurve:
    """Memoized R(x) and one-sided marginals r^-(x), r^+(x) of one commodity."""

    def __init__(self, inst: MarketInstance, tol: float = DEFAULT_TOL, commodity: int = 0):
        self.inst = inst
        self.tol = tol
        self.commodity = commodity
        self.net = Network.from_instance(inst)
        c = inst.commodities[commodity]
        self._s, self._t = self.net.index[c.source], self.net.index[c.sink]
        self.capacity = _max_flow_net(self.net, self._s, self._t) if inst.has_capacities else math.inf
        self._keys: list[float] = []
        self._cache: dict[float, FlowSolution] = {}
        self.solves = 0

    def solve(self, x: float) -> FlowSolution:
        x = float(x)
        if x in self._cache:
            return self._cache[x]
        warm = None
        if self._keys and _choose_engine(self.net) == "smooth":
            j = bisect_left(self._keys, x)
            near = [self._keys[i] for i in (j - 1, j) if 0 <= i < len(self._keys)]
            best = min(near, key=lambda k: abs(k - x))
            warm = self._cache[best]
        sol = _single_solve(self.net, self.inst, x, self.tol, self.commodity, warm)
        self.solves += 1
        self._cache[x] = sol
        self._keys.insert(bisect_left(self._keys, x), x)
        return sol

    def R(self, x: float) -> float:  # noqa: N802
        return self.solve(x).cost

    def marginal(self, x: float, side: str = RIGHT) -> float:
        sol = self.solve(x)
        return sol.marginal_minus if side == LEFT else sol.marginal_plus

    def r(self, x: float) -> float:
        return self.marginal(x, RIGHT)


def marginal_cost(curve: MinCostCurve, x: float, side: str = RIGHT) -> float:
    return curve.marginal(x, side)


def optimal_magnitude(inst: MarketInstance, tol: float = DEFAULT_TOL,
                      curve: MinCostCurve | None = None) -> tuple[float, FlowSolution]:
    """Welfare-maximizing magnitude x* and its min-cost flow.

    x* is the largest x in [0, min(T, max flow)] with value(x) >= r^-(x).
    """
    if not inst.primary_theory:
        raise DomainError("optimal_magnitude needs a single-commodity graph market")
    curve = curve or MinCostCurve(inst, tol)
    d = inst.demand
    top = min(d.T, curve.capacity)

    def ok(x: float) -> bool:
        return d.value(x) >= curve.marginal(x, LEFT)

    if ok(top):
        return top, curve.solve(top)
    if not ok(0.0):
        return 0.0, curve.solve(0.0)
    def gap(x: float) -> float:
        return d.value(x) - curve.marginal(x, LEFT)

    # Illinois false position on the bracket [ok, not ok], with a bisection
    # step whenever the bracket fails to halve.
    lo, hi = 0.0, top
    g_lo, g_hi = gap(lo), gap(hi)
    side = 0
    for _ in range(200):
        width = hi - lo
        if width <= 1e-14 * top:
            break
        mid = lo + g_lo * width / (g_lo - g_hi) if g_lo > g_hi else 0.5 * (lo + hi)
        if not lo < mid < hi:
            mid = 0.5 * (lo + hi)
        g_mid = gap(mid)
        if g_mid >= 0:
            lo, g_lo = mid, g_mid
            if side == 1:
                g_hi *= 0.5
            side = 1
        else:
            hi, g_hi = mid, g_mid
            if side == -1:
                g_lo *= 0.5
            side = -1
        if hi - lo > 0.5 * width:
            mid = 0.5 * (lo + hi)
            g_mid = gap(mid)
            if g_mid >= 0:
                lo, g_lo = mid, g_mid
            else:
                hi, g_hi = mid, g_mid
            side = 0
    return lo, curve.solve(lo)


def flow_arrays(net: Network, sol: FlowSolution) -> list[float]:
    return [sol.edge_flow.get(name, 0.0) for name in net.labels]


def edge_marginals(inst: MarketInstance, edge_flow: Mapping[str, float], side: str = RIGHT) -> dict:
    return {e.id: e.cost.marginal(edge_flow.get(e.id, 0.0), side) for e in inst.edges}


def welfare(inst: MarketInstance, flow: FlowSolution) -> float:
    """Total buyer value minus production cost; prices never enter."""
    amounts = flow.commodity_magnitudes or (flow.magnitude,)
    value = sum(c.demand.cumulative(min(a, c.demand.T)) for c, a in zip(inst.commodities, amounts))
    return value - inst.total_cost(flow.edge_flow)
