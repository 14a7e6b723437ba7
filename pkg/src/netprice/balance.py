"""Node-potential price balancing for piecewise-linear costs.

Given a min-cost flow of magnitude x and a target path price p* between the
one-sided marginals r^-(x) and r^+(x), find per-edge values c~_e, each
inside its marginal interval [c^-_e, c^+_e], such that every flow path sums
to exactly p* and no unused path is cheaper.

Working marginals k^-_e <= k^+_e start at the edge's one-sided marginals
and are squeezed edge by edge until the withdrawal potential of the sink
reaches p*.  The answer is read off as potential differences.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping

from .costs import LEFT, RIGHT
from .errors import InconsistencyError, PriceRangeError, SolverError
from .flow import Network, ResidualArc, bellman_ford
from .market import FlowSolution, MarketInstance

_EPS_FLOW = 1e-12


@dataclass
class PotentialState:
    """Potentials of every node under working marginals k^-, k^+.

    ``pi_plus[v]`` is the cheapest way to push one more unit from the source
    to v; ``pi_minus[v]`` the largest saving from pulling a unit at v back to
    the source.  ``cut`` holds the nodes where the two agree.
    """

    pi_minus: dict
    pi_plus: dict
    k_minus: dict
    k_plus: dict
    cut: frozenset
    trace: list = field(default_factory=list)


def _arcs(net: Network, x, kminus, kplus):
    arcs = []
    for i in range(net.m):
        u, v = net.tails[i], net.heads[i]
        if kplus[i] < math.inf and x[i] < net.caps[i] * (1 - 1e-12):
            arcs.append(ResidualArc(u, v, kplus[i], i, 1))
        if x[i] > _EPS_FLOW:
            arcs.append(ResidualArc(v, u, -kminus[i], i, -1))
    return arcs


def _distances(net: Network, arcs, start: int, reverse: bool):
    try:
        return bellman_ford(net.n, arcs, start, reverse=reverse)[0]
    except InconsistencyError as err:
        raise InconsistencyError("residual graph has a negative cycle under the working marginals") from err


def _potentials(net: Network, x, kminus, kplus, s: int):
    arcs = _arcs(net, x, kminus, kplus)
    plus = _distances(net, arcs, s, reverse=False)
    back = _distances(net, arcs, s, reverse=True)
    minus = [-d if d < math.inf else -math.inf for d in back]
    return arcs, plus, minus


def node_potentials(inst: MarketInstance, flow: FlowSolution, k_minus: Mapping[str, float] | None = None,
                    k_plus: Mapping[str, float] | None = None, commodity: int = 0) -> PotentialState:
    """Residual potentials under the given working marginals.

    Forward arcs weigh k^+_e (absent at a saturated capacity), reverse arcs
    of flow-carrying edges weigh -k^-_e.  Marginals default to the edge's
    one-sided marginals at the flow.
    """
    net = Network.from_instance(inst)
    x = [flow.edge_flow.get(e, 0.0) for e in net.labels]
    km = [k_minus[e] if k_minus else net.costs[i].marginal(x[i], LEFT) for i, e in enumerate(net.labels)]
    kp = [k_plus[e] if k_plus else net.costs[i].marginal(x[i], RIGHT) for i, e in enumerate(net.labels)]
    s = net.index[inst.commodities[commodity].source]
    _, plus, minus = _potentials(net, x, km, kp, s)
    return _state(net, plus, minus, km, kp, [])


def _state(net, plus, minus, km, kp, trace):
    cut = frozenset(
        net.nodes[v] for v in range(net.n)
        if plus[v] < math.inf and abs(plus[v] - minus[v]) <= 1e-12 * max(1.0, abs(plus[v]))
    )
    return PotentialState(
        pi_minus={net.nodes[v]: minus[v] for v in range(net.n)},
        pi_plus={net.nodes[v]: plus[v] for v in range(net.n)},
        k_minus=dict(zip(net.labels, km)),
        k_plus=dict(zip(net.labels, kp)),
        cut=cut,
        trace=trace,
    )


def balance_prices(inst: MarketInstance, flow: FlowSolution, target: float, tol: float = 1e-9,
                   commodity: int = 0, return_state: bool = False):
    """Per-edge values c~_e making every flow path price exactly ``target``.

    Zero-flow edges get c^+_e(0).  Raises PriceRangeError when ``target`` is
    outside [r^-(x), r^+(x)].
    """
    net = Network.from_instance(inst)
    c = inst.commodities[commodity]
    s, t = net.index[c.source], net.index[c.sink]
    x = [flow.edge_flow.get(e, 0.0) for e in net.labels]
    used = [xe > _EPS_FLOW for xe in x]
    km = [net.costs[i].marginal(x[i], LEFT) if used[i] else net.costs[i].marginal(0.0, RIGHT) for i in range(net.m)]
    kp = [net.costs[i].marginal(x[i], RIGHT) if used[i] else km[i] for i in range(net.m)]
    arcs, plus, minus = _potentials(net, x, km, kp, s)
    if flow.magnitude <= 0:
        minus[t] = plus[t]
    r_minus, r_plus = minus[t], plus[t]
    slack = tol * max(1.0, abs(target))
    if target < r_minus - slack or target > r_plus + slack:
        raise PriceRangeError(f"target {target!r} outside [{r_minus!r}, {r_plus!r}]")
    target = min(max(target, r_minus), r_plus)
    trace: list = []
    for _ in range(4 * net.m + 1):
        if minus[t] >= target - 1e-12 * max(1.0, abs(target)):
            break
        in_cut = [plus[v] < math.inf and abs(plus[v] - minus[v]) <= 1e-12 * max(1.0, abs(plus[v]))
                  for v in range(net.n)]
        from_t = _distances(net, arcs, t, reverse=False)
        step = None
        for i in range(net.m):
            if not used[i] or not km[i] < kp[i]:
                continue
            u, v = net.tails[i], net.heads[i]
            if in_cut[u] and not in_cut[v]:
                gain_tv = -from_t[v]
                new = min(kp[i], plus[v] - minus[u], target - gain_tv - minus[u])
                if new > km[i]:
                    step = ("raise_minus", i, km[i], new)
                    km[i] = new
                    break
            elif in_cut[v] and not in_cut[u]:
                gain_tu = -from_t[u]
                new = max(km[i], minus[v] - plus[u], gain_tu + minus[v] - target) if plus[u] < math.inf else km[i]
                if new < kp[i]:
                    step = ("lower_plus", i, kp[i], new)
                    kp[i] = new
                    break
        if step is None:
            raise SolverError("balancing found no cut-crossing edge to adjust", residual=target - minus[t])
        trace.append({"op": step[0], "edge": net.labels[step[1]], "old": step[2], "new": step[3]})
        arcs, plus, minus = _potentials(net, x, km, kp, s)
    else:
        raise SolverError("balancing exceeded its iteration cap", residual=target - minus[t])
    values = {}
    for i, e in enumerate(net.labels):
        if used[i]:
            u, v = net.tails[i], net.heads[i]
            values[e] = minus[v] - minus[u] + 0.0
        else:
            values[e] = net.costs[i].marginal(0.0, RIGHT)
    if return_state:
        return values, _state(net, plus, minus, km, kp, trace)
    return values
