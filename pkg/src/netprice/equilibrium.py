"""Nash equilibria of the two-stage pricing game.

Sellers (edges) post prices, then buyers take cheapest paths.  The
constructions here price every edge at its (balanced) marginal cost and
split the remaining slack, value minus marginal path cost, equally among
the monopolies, picking the magnitude at which no monopoly wants to move.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Mapping

from . import demand as demand_mod
from .balance import balance_prices
from .costs import LEFT, RIGHT
from .errors import (
    DomainError,
    InapplicableError,
    NegativeSlackError,
    NoEquilibriumError,
    StructureError,
)
from .flow import (
    DEFAULT_TOL,
    MinCostCurve,
    dijkstra,
    flow_arrays,
    min_cut_edges,
    Network,
    optimal_magnitude,
    welfare,
    welfare_optimum,
)
from .market import FlowSolution, MarketInstance, is_series_parallel, monopolies, natural_key

OPTIMAL_CORNER = "optimal-corner"
INTERIOR_ROOT = "interior-root"
CONSTRUCTED = "constructed-special"
UNVERIFIED = "unverified-theory"

_USED = 1e-12


class UnverifiedTheoryWarning(UserWarning):
    """The demand lies outside the class the construction is proven for."""


@dataclass
class EquilibriumSolution:
    prices: dict
    flow: FlowSolution
    magnitude: float
    monopolies: tuple
    slack: float
    residual: float
    kind: str
    welfare: float
    labels: tuple = ()
    diagnostics: dict = field(default_factory=dict)

    @property
    def M(self) -> int:  # noqa: N802
        return len(self.monopolies)

    def profit(self, inst: MarketInstance, edge_id: str) -> float:
        x = self.flow.edge_flow.get(edge_id, 0.0)
        return self.prices[edge_id] * x - inst.cost(edge_id).cost(x)

    def to_dict(self) -> dict:
        return {
            "prices": dict(sorted(self.prices.items(), key=lambda kv: natural_key(kv[0]))),
            "flow": {
                "paths": [
                    {"edges": list(p.edges), "amount": p.amount, "commodity": p.commodity}
                    for p in self.flow.paths
                ],
                "edge_flow": dict(sorted(self.flow.edge_flow.items(), key=lambda kv: natural_key(kv[0]))),
                "magnitudes": list(self.flow.commodity_magnitudes),
            },
            "x": self.magnitude,
            "diagnostics": {
                "kind": self.kind,
                "monopolies": list(self.monopolies),
                "M": self.M,
                "slack": self.slack,
                "residual": self.residual,
                "welfare": self.welfare,
                "labels": list(self.labels),
                **self.diagnostics,
            },
        }


# -- pricing rule -----------------------------------------------------------------

def marginal_values(inst: MarketInstance, flow: FlowSolution, target: float | None = None,
                    tol: float = 1e-9) -> dict:
    """Per-edge marginal cost making every flow path cost ``target``.

    Smooth costs give c_e(x_e) directly (``target`` must then be r(x));
    otherwise the node-potential balancing picks values inside each edge's
    one-sided marginal interval.  Unused edges get c^+_e(0).
    """
    if inst.all_smooth:
        return {
            e.id: e.cost.marginal(flow.edge_flow.get(e.id, 0.0), RIGHT)
            for e in inst.edges
        }
    if target is None:
        target = flow.marginal_minus
    return balance_prices(inst, flow, target, tol)


def pricing_rule(inst: MarketInstance, flow: FlowSolution, monopoly_set=None,
                 target: float | None = None, tol: float = 1e-9) -> dict:
    """Marginal prices everywhere plus an equal share of the slack on monopolies.

    ``target`` is the path marginal p* in [r^-, r^+] that the non-monopoly
    part of every flow path should sum to (defaults to r^-, or to the value
    clipped into the interval when there is no monopoly).  Every flow path
    then prices to exactly the demand value at the flow's magnitude.
    """
    if monopoly_set is None:
        monopoly_set = monopolies(inst)
    M = len(monopoly_set)
    x = flow.magnitude
    lam = inst.demand.value(x)
    r_minus = flow.marginal_minus
    r_plus = flow.marginal_plus
    if target is None:
        target = r_minus if M else min(max(lam, r_minus), r_plus)
    if lam < target - tol * max(1.0, abs(lam)):
        raise NegativeSlackError(f"value {lam!r} below marginal path cost {target!r} at x={x!r}")
    base = marginal_values(inst, flow, target, tol)
    slack = max(lam - target, 0.0)
    prices = {}
    for e in inst.edges:
        p = base[e.id]
        if M and e.id in monopoly_set:
            p += slack / M
        prices[e.id] = p
    return prices


# -- the binary-search construction -------------------------------------------------

def _slopes(d, x: float) -> tuple[float, float | None]:
    """(|value'_-(x)|, |value'_+(x)|); the right one is None at x = T."""
    left = abs(d.derivative(x, LEFT)) if x > 0 else abs(d.derivative(x, RIGHT))
    right = abs(d.derivative(x, RIGHT)) if x < d.T else None
    return left, right


def bracket_residual(lam: float, r_minus: float, r_plus: float, M: int, x: float,
                     left: float, right: float | None) -> float:
    """Distance from satisfying M x|value'_-| <= value - r and value - r <= M x|value'_+|.

    The right-hand inequality uses r^+ and is dropped at x = T.
    """
    low = M * x * left - (lam - r_minus)
    high = 0.0 if right is None else (lam - r_plus) - M * x * right
    return max(0.0, low, high)


def _admissible_target(lam, r_minus, r_plus, M, x, left, right) -> tuple[float, float]:
    lower = r_minus if right is None else max(r_minus, lam - M * x * right)
    upper = min(r_plus, lam - M * x * left, lam)
    return lower, upper


def find_equilibrium(inst: MarketInstance, tol: float = 1e-9, flow_tol: float = 1e-10,
                     curve: MinCostCurve | None = None) -> EquilibriumSolution:
    """Equilibrium of a single-commodity network by binary search on the magnitude.

    Returns the welfare optimum x* when its slack already covers the monopoly
    markup; otherwise the largest x below x* where the markup condition
    M x|value'(x)| = value(x) - r(x) holds, in its one-sided bracket form at
    kinks.
    """
    if not inst.primary_theory:
        raise DomainError("find_equilibrium needs a single-commodity graph market")
    d = inst.demand
    labels = []
    if "mpe" not in demand_mod.classify(d):
        labels.append(UNVERIFIED)
        warnings.warn(f"{d.kind} demand is not MPE; result is unverified", UnverifiedTheoryWarning, stacklevel=2)
    curve = curve or MinCostCurve(inst, flow_tol)
    x_star, sol_star = optimal_magnitude(inst, flow_tol, curve)
    if x_star <= 0:
        raise NoEquilibriumError("optimal magnitude is 0; only the trivial equilibrium exists",
                                 diagnostics={"x_star": x_star})
    mono = tuple(sorted(monopolies(inst), key=natural_key))
    M = len(mono)
    lam = d.value(x_star)
    left, right = _slopes(d, x_star)
    r_minus, r_plus = sol_star.marginal_minus, sol_star.marginal_plus
    diag = {"x_star": x_star, "solves": 0}

    if M == 0:
        target = min(max(lam, r_minus), r_plus)
        return _finish(inst, sol_star, mono, target, OPTIMAL_CORNER, 0.0, labels, diag, curve, tol)

    if lam - r_minus - M * x_star * left >= -tol * min(1.0, lam):
        lower, upper = _admissible_target(lam, r_minus, r_plus, M, x_star, left, right)
        target = 0.5 * (lower + upper) if upper >= lower else upper
        res = bracket_residual(lam, target, target, M, x_star, left, right)
        return _finish(inst, sol_star, mono, target, OPTIMAL_CORNER, res, labels, diag, curve, tol)

    def alpha(x: float) -> float:
        l_left, _ = _slopes(d, x)
        return d.value(x) - curve.marginal(x, LEFT) - M * x * l_left

    hi = x_star
    lo = None
    for k in range(1, 65):
        cand = x_star * 2.0 ** -k
        if alpha(cand) >= 0:
            lo = cand
            break
        hi = cand
    if lo is None:
        raise NoEquilibriumError("no sign change of the markup condition below x*",
                                 diagnostics={"x_star": x_star, "alpha_at_x_star": alpha(x_star)})
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if alpha(mid) >= 0:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-15 * hi:
            break
    candidates = {lo, hi, 0.5 * (lo + hi)}
    span = max(hi - lo, 1e-12 * hi)
    for b in d.breakpoints():
        if lo - span <= b <= hi + span:
            candidates.add(b)

    def score(x: float) -> tuple[float, int]:
        sol = curve.solve(x)
        l_left, l_right = _slopes(d, x)
        res = bracket_residual(d.value(x), sol.marginal_minus, sol.marginal_plus, M, x, l_left, l_right)
        return res, 0 if x in d.breakpoints() else 1

    x_eq = min(sorted(candidates), key=score)
    sol = curve.solve(x_eq)
    lam = d.value(x_eq)
    left, right = _slopes(d, x_eq)
    lower, upper = _admissible_target(lam, sol.marginal_minus, sol.marginal_plus, M, x_eq, left, right)
    target = 0.5 * (lower + upper) if upper >= lower else min(max(lam - M * x_eq * left, sol.marginal_minus), sol.marginal_plus)
    res = bracket_residual(lam, sol.marginal_minus, sol.marginal_plus, M, x_eq, left, right)
    diag["bracket"] = [lo, hi]
    return _finish(inst, sol, mono, target, INTERIOR_ROOT, res, labels, diag, curve, tol)


def _finish(inst, sol, mono, target, kind, residual, labels, diag, curve, tol) -> EquilibriumSolution:
    prices = pricing_rule(inst, sol, frozenset(mono), target, tol)
    lam = inst.demand.value(sol.magnitude)
    diag = dict(diag)
    diag["target"] = target
    diag["solves"] = curve.solves if curve is not None else 0
    diag["r_minus"] = sol.marginal_minus
    diag["r_plus"] = sol.marginal_plus
    return EquilibriumSolution(
        prices=prices,
        flow=sol,
        magnitude=sol.magnitude,
        monopolies=tuple(mono),
        slack=lam - sol.marginal_minus,
        residual=residual,
        kind=kind,
        welfare=welfare(inst, sol),
        labels=tuple(labels),
        diagnostics=diag,
    )


def condition_residual(inst: MarketInstance, eq: EquilibriumSolution) -> float:
    """Markup-condition residual of a single-commodity solution (bracket form)."""
    d = inst.demand
    x = eq.magnitude
    left, right = _slopes(d, x)
    M = eq.M
    return bracket_residual(d.value(x), eq.flow.marginal_minus, eq.flow.marginal_plus, M, x, left, right)


# -- special regimes --------------------------------------------------------------

def capacitated_elastic_equilibrium(inst: MarketInstance, tol: float = 1e-9) -> EquilibriumSolution:
    """Efficient equilibrium on a capacitated network with constant-elasticity demand.

    Unsaturated monopolies add value/r to their marginal; the rest of the
    slack goes equally to the saturated monopolies, or, without any, to every
    edge of a saturated minimum cut.
    """
    if not inst.primary_theory:
        raise DomainError("needs a single-commodity graph market")
    d = inst.demand
    if d.kind != "power_elastic":
        raise InapplicableError("needs power_elastic demand")
    mono = tuple(sorted(monopolies(inst), key=natural_key))
    M = len(mono)
    if not d.r > M:
        raise InapplicableError(f"needs elasticity parameter r > M (r={d.r!r}, M={M})")
    curve = MinCostCurve(inst)
    x_star, sol = optimal_magnitude(inst, curve=curve)
    lam = d.value(x_star)
    target = sol.marginal_minus
    base = marginal_values(inst, sol, target, tol)

    def saturated(eid: str) -> bool:
        cap = inst.cost(eid).capacity
        return math.isfinite(cap) and sol.edge_flow.get(eid, 0.0) >= cap * (1 - 1e-9)

    sat = [e for e in mono if saturated(e)]
    unsat = [e for e in mono if not saturated(e)]
    prices = dict(base)
    for e in unsat:
        prices[e] += lam / d.r
    rest = lam - target - len(unsat) * lam / d.r
    if rest < -tol:
        raise InapplicableError("slack too small for the unsaturated monopoly markups")
    rest = max(rest, 0.0)
    if sat:
        for e in sat:
            prices[e] += rest / len(sat)
        where = "saturated-monopolies"
    elif rest > tol:
        cut = min_cut_edges(inst)
        if not all(saturated(e) for e in cut):
            raise InapplicableError("no saturated cut to carry the remaining slack")
        for e in cut:
            prices[e] += rest
        where = "min-cut"
    else:
        where = "none"
    return EquilibriumSolution(
        prices=prices,
        flow=sol,
        magnitude=x_star,
        monopolies=mono,
        slack=lam - target,
        residual=0.0,
        kind=CONSTRUCTED,
        welfare=welfare(inst, sol),
        diagnostics={"x_star": x_star, "slack_on": where, "saturated": sat, "r_minus": sol.marginal_minus,
                     "r_plus": sol.marginal_plus},
    )


def uniform_demand_equilibrium(inst: MarketInstance, tol: float = 1e-9) -> EquilibriumSolution:
    """Efficient equilibrium when every buyer has the same value.

    With all c_e(0) = 0 this is the pricing rule at the optimum.  Otherwise
    prices start at balanced marginals and rise on the virtual monopolies of
    the optimal flow until paths price to the common value or a competing
    path ties.
    """
    if not inst.primary_theory:
        raise DomainError("needs a single-commodity graph market")
    d = inst.demand
    if d.kind != "uniform":
        raise DomainError(f"needs uniform demand, got {d.kind}")
    if not inst.general_market:
        eq = find_equilibrium(inst, tol)
        return eq
    from .bundles import ascending_prices, allocation_from_flow
    from .market import as_bundle_market

    curve = MinCostCurve(inst)
    x_star, sol = optimal_magnitude(inst, curve=curve)
    lam = d.value(x_star)
    target = min(max(lam, sol.marginal_minus), sol.marginal_plus)
    base = marginal_values(inst, sol, target, tol)
    market = as_bundle_market(inst)
    alloc = allocation_from_flow(market, sol)
    prices, state = ascending_prices(market, alloc, start=base, value=lam)
    return EquilibriumSolution(
        prices=prices,
        flow=sol,
        magnitude=x_star,
        monopolies=tuple(sorted(monopolies(inst), key=natural_key)),
        slack=lam - target,
        residual=0.0,
        kind=OPTIMAL_CORNER,
        welfare=welfare(inst, sol),
        diagnostics={"x_star": x_star, "active": sorted(state.active, key=natural_key),
                     "inactive": [e for e, _ in state.inactive], "target": target},
    )


def _is_leaf_source(inst: MarketInstance, node: str) -> bool:
    return len(inst.out_edges[node]) == 1 and not inst.in_edges[node]


def multi_source_equilibrium(inst: MarketInstance, large_demand: bool = False,
                             tol: float = DEFAULT_TOL) -> EquilibriumSolution:
    """Efficient equilibria for multi-source single-sink networks.

    Applies, in order: (a) series-parallel with no monopoly for any source and
    zero marginal costs at 0: marginal pricing at the optimum; (b) uniform
    demands with every source a leaf: marginal pricing plus each source's
    slack on its private first edge; (c) uniform demands asserted large with
    strictly convex costs: marginal pricing.
    """
    if inst.mode != "graph":
        raise DomainError("needs a graph-mode market")
    sinks = {c.sink for c in inst.commodities}
    if len(sinks) != 1:
        raise StructureError("multi-source constructions need a single sink")
    if not inst.all_smooth:
        raise InapplicableError("multi-source constructions here assume smooth costs")
    uniform = all(c.demand.kind == "uniform" for c in inst.commodities)
    zero_start = all(e.cost.zero_marginal() == 0 for e in inst.edges)
    clause = None
    if zero_start and all(not monopolies(inst, k) for k in range(len(inst.commodities))) \
            and is_series_parallel(inst).is_series_parallel:
        clause = "series-parallel"
    elif uniform and all(_is_leaf_source(inst, c.source) for c in inst.commodities):
        clause = "leaf-sources"
    elif uniform and large_demand and all(
        e.cost.kind == "power" and e.cost.k > 1 and e.cost.c > 0 for e in inst.edges
    ):
        clause = "large-demand"
    if clause is None:
        raise InapplicableError("instance matches none of the multi-source constructions")
    sol = welfare_optimum(inst, tol)
    prices = {e.id: e.cost.marginal(sol.edge_flow.get(e.id, 0.0), RIGHT) for e in inst.edges}
    top_up = {}
    if clause == "leaf-sources":
        net = Network.from_instance(inst)
        x = flow_arrays(net, sol)
        marg = net.marginals(x)
        for k, c in enumerate(inst.commodities):
            dist, _ = dijkstra(net, marg, net.index[c.source])
            extra = max(c.demand.value(sol.commodity_magnitudes[k]) - dist[net.index[c.sink]], 0.0)
            leaf = inst.edges[inst.out_edges[c.source][0]].id
            prices[leaf] += extra
            top_up[leaf] = extra
    return EquilibriumSolution(
        prices=prices,
        flow=sol,
        magnitude=sol.magnitude,
        monopolies=(),
        slack=0.0,
        residual=0.0,
        kind=CONSTRUCTED,
        welfare=welfare(inst, sol),
        diagnostics={"clause": clause, "top_up": top_up},
    )


def solve(inst: MarketInstance, tol: float = 1e-9) -> EquilibriumSolution:
    """Pick the construction that fits the instance and run it.

    Set valuations and bundle markets go to the bundle routines; several
    commodities to the multi-source constructions; capacities with
    constant-elasticity demand to the capacitated construction; uniform
    demand in a general market to the ascending rule; everything else to
    the binary search.
    """
    from . import bundles

    if inst.mode == "bundle":
        if inst.valuations:
            return bundles.combinatorial_uniform_equilibrium(inst)
        return bundles.bundle_equilibrium(inst, tol)
    if len(inst.commodities) > 1:
        return multi_source_equilibrium(inst)
    d = inst.demand
    if inst.has_capacities and d.kind == "power_elastic":
        return capacitated_elastic_equilibrium(inst, tol)
    if d.kind == "uniform" and inst.general_market:
        return uniform_demand_equilibrium(inst, tol)
    return find_equilibrium(inst, tol)
