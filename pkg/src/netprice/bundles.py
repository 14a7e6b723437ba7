"""Markets over arbitrary bundles of items.

Buyers want any one bundle from a fixed family and are indifferent among
them.  Items are produced at convex cost.  This module computes min-cost
allocations over the family, runs the ascending price process on virtual
monopolies, searches the magnitude at which active monopolies stop wanting
to move, and handles uniform buyers with a set valuation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.optimize import linprog

from .costs import LEFT, RIGHT, Capacity, CostFunction, Linear
from .demand import DemandFunction
from .errors import (
    DomainError,
    InfeasibleError,
    NegativeSlackError,
    SolverError,
    StructureError,
    ValidationError,
)
from .flow import DEFAULT_TOL, Network, _smooth_engine
from .market import BUNDLE, FlowSolution, MarketInstance, PathFlow, natural_key, virtual_monopolies

_USED = 1e-12
# HiGHS defaults allow 1e-7 bound violations, enough to slip flow past a kink.
_TIGHT = {"primal_feasibility_tolerance": 1e-10, "dual_feasibility_tolerance": 1e-10}
_TIE = 1e-9


@dataclass
class BundleAllocation:
    bundle_flow: dict
    item_flow: dict
    magnitude: float
    cost: float
    marginal_minus: float
    marginal_plus: float
    kkt_residual: float = 0.0

    def consumed(self, tol: float = _USED) -> list:
        return [b for b, a in self.bundle_flow.items() if a > 0 and a > tol * self.magnitude]

    def to_flow(self) -> FlowSolution:
        paths = [PathFlow(b, a) for b, a in sorted(self.bundle_flow.items(), key=lambda kv: _bundle_key(kv[0]))
                 if a > 0]
        return FlowSolution(
            edge_flow=dict(self.item_flow),
            paths=paths,
            magnitude=self.magnitude,
            cost=self.cost,
            marginal_minus=self.marginal_minus,
            marginal_plus=self.marginal_plus,
            kkt_residual=self.kkt_residual,
            commodity_magnitudes=(self.magnitude,),
        )


def _bundle_key(b: Sequence[str]) -> tuple:
    return tuple(natural_key(e) for e in b)


@dataclass
class AscendingState:
    """Outcome and trace of the ascending price process.

    ``inactive`` lists (item, witness bundle) in the order the items became
    tight; an item's rank is its position plus one.  ``gamma`` is the common
    increase of the still-active monopolies over their starting price.
    """

    prices: dict
    start: dict
    monopolies: tuple
    active: tuple
    inactive: list
    price_level: float
    value: float
    gamma: float
    steps: list = field(default_factory=list)

    @property
    def ranks(self) -> dict:
        return {e: i + 1 for i, (e, _) in enumerate(self.inactive)}


# -- compiled market ---------------------------------------------------------------

class _Compiled:
    def __init__(self, market: MarketInstance, bundles: Sequence[Sequence[str]] | None = None):
        if market.mode != BUNDLE:
            raise DomainError("needs a bundle-mode market")
        family = list(bundles if bundles is not None else market.bundles)
        if not family:
            raise StructureError("empty bundle family")
        self.market = market
        self.items = [e.id for e in market.edges]
        self.index = {e: i for i, e in enumerate(self.items)}
        self.costs = [e.cost for e in market.edges]
        self.bundles = sorted((tuple(sorted(b, key=natural_key)) for b in family), key=_bundle_key)
        self.cols = [tuple(self.index[e] for e in b) for b in self.bundles]
        self.m = len(self.items)
        self.net = Network(["__a", "__b"], [0] * self.m, [1] * self.m, self.costs, self.items)

    def item_flows(self, y: Sequence[float]) -> list[float]:
        x = [0.0] * self.m
        for col, amt in zip(self.cols, y):
            for i in col:
                x[i] += amt
        return x


# -- min-cost allocation -----------------------------------------------------------

def _segments(cost: CostFunction) -> list[tuple[float, float]]:
    """(slope, length) pieces of a piecewise-linear cost."""
    if isinstance(cost, Capacity):
        return [(0.0, cost.cap)]
    if cost.kind == "pwl_convex":
        out, prev = [], 0.0
        for b, s in zip(cost.breaks, cost.slopes):
            out.append((s, b - prev))
            prev = b
        out.append((cost.slopes[-1], math.inf))
        return out
    if cost.kind == "power":
        return [(cost.c if cost.k == 1.0 else 0.0, math.inf)]
    return [(cost.marginal(0.0, RIGHT), math.inf)]


def _lp_allocation(comp: _Compiled, x: float) -> list[float]:
    # Solved per unit of magnitude so tiny x is not lost in the LP tolerances.
    nb = len(comp.cols)
    segs = [_segments(c) for c in comp.costs]
    nseg = sum(len(s) for s in segs)
    nvar = nb + nseg
    cvec = np.zeros(nvar)
    bounds = [(0.0, None)] * nb
    a_eq = np.zeros((comp.m + 1, nvar))
    b_eq = np.zeros(comp.m + 1)
    j = nb
    for i, pieces in enumerate(segs):
        for slope, length in pieces:
            cvec[j] = slope
            bounds.append((0.0, None if math.isinf(length) else length / x))
            a_eq[i, j] = -1.0
            j += 1
    for b, col in enumerate(comp.cols):
        for i in col:
            a_eq[i, b] += 1.0
        a_eq[comp.m, b] = 1.0
    b_eq[comp.m] = 1.0
    res = linprog(cvec, A_eq=a_eq, b_eq=b_eq, bounds=bounds, method="highs", options=_TIGHT)
    if res.status == 2:
        raise InfeasibleError(f"magnitude {x!r} exceeds what the bundle family can carry")
    if res.status != 0:
        raise SolverError(f"allocation LP failed: {res.message}")
    # Second pass: among min-cost allocations, spread flow over tied bundles by
    # maximizing sum_b min(y_b, 1/nb), so no tied bundle is arbitrarily left empty.
    best = float(res.fun)
    spread_c = np.concatenate([np.zeros(nvar), -np.ones(nb)])
    a_ub = np.zeros((nb + 1, nvar + nb))
    b_ub = np.zeros(nb + 1)
    a_ub[0, :nvar] = cvec
    b_ub[0] = best + 1e-15 * max(1.0, abs(best))
    for b in range(nb):
        a_ub[b + 1, nvar + b] = 1.0
        a_ub[b + 1, b] = -1.0
    a_eq2 = np.hstack([a_eq, np.zeros((comp.m + 1, nb))])
    res2 = linprog(spread_c, A_ub=a_ub, b_ub=b_ub, A_eq=a_eq2, b_eq=b_eq,
                   bounds=bounds + [(0.0, 1.0 / nb)] * nb, method="highs", options=_TIGHT)
    y = _unit_bundles(res.x[:nb])
    if res2.status == 0:
        spread = _unit_bundles(res2.x[:nb])
        # Only accept the spread if it is exactly as cheap; HiGHS tolerances can leak cost.
        def unit(v):
            return sum(c.cost(f * x) for c, f in zip(comp.costs, comp.item_flows(v)))

        if unit(spread) <= unit(y) + 1e-14 * max(1.0, abs(unit(y))):
            y = spread
    total = sum(y)
    return [v * x / total for v in y]


def _unit_bundles(values) -> list[float]:
    y = [max(float(v), 0.0) for v in values]
    return [v if v > 1e-11 else 0.0 for v in y]


def _snap(comp: _Compiled, x: list[float]) -> list[float]:
    out = []
    for c, xe in zip(comp.costs, x):
        for k in c.kinks():
            if abs(xe - k) <= 1e-10 * max(1.0, k):
                xe = k
                break
        out.append(xe)
    return out


def _bundle_marginals(comp: _Compiled, x: Sequence[float], y: Sequence[float]) -> tuple[float, float]:
    """One-sided derivatives of the min cost at the allocation's magnitude."""
    if all(c.smooth and not math.isfinite(c.capacity) for c in comp.costs):
        marg = [c.marginal(xe, RIGHT) for c, xe in zip(comp.costs, x)]
        best = min(sum(marg[i] for i in col) for col in comp.cols)
        return best, best
    plus = _directional(comp, x, y, 1.0)
    minus = _directional(comp, x, y, -1.0) if sum(y) > 0 else plus
    return minus, plus


def _near_kink(cost: CostFunction, xe: float) -> float:
    """The kink within LP noise of ``xe``, else ``xe`` itself."""
    for k in cost.kinks():
        if abs(xe - k) <= 1e-10 * max(1.0, k):
            return k
    return xe


def _directional(comp: _Compiled, x, y, direction: float) -> float:
    """Cheapest change in cost per unit change of magnitude, in one direction."""
    nb = len(comp.cols)
    scale = sum(y)
    nvar = nb + comp.m
    cvec = np.concatenate([np.zeros(nb), np.ones(comp.m)])
    rows, rhs = [], []
    bounds = []
    for b in range(nb):
        bounds.append((-1e6 if y[b] > _USED * scale else 0.0, 1e6))
    bounds += [(None, None)] * comp.m
    for i, c in enumerate(comp.costs):
        used = x[i] > _USED * scale
        at = _near_kink(c, x[i])
        hi = c.marginal(at, RIGHT)
        lo = c.marginal(at, LEFT) if used else hi
        d = np.zeros(nvar)
        for b, col in enumerate(comp.cols):
            if i in col:
                d[b] = 1.0
        for slope in (lo, hi):
            if math.isinf(slope):
                rows.append(d.copy())  # d_e <= 0 at a saturated capacity
                rhs.append(0.0)
                continue
            row = d * slope
            row[nb + i] = -1.0
            rows.append(row)
            rhs.append(0.0)
    a_eq = np.zeros((1, nvar))
    a_eq[0, :nb] = 1.0
    res = linprog(cvec, A_ub=np.array(rows), b_ub=np.array(rhs), A_eq=a_eq, b_eq=[direction],
                  bounds=bounds, method="highs", options=_TIGHT)
    if res.status == 2:
        return math.inf
    if res.status != 0:
        raise SolverError(f"marginal LP failed: {res.message}")
    return float(res.fun) * direction


def min_cost_allocation(market: MarketInstance, x: float, tol: float = DEFAULT_TOL,
                        bundles: Sequence[Sequence[str]] | None = None) -> BundleAllocation:
    """Cheapest split of magnitude ``x`` over the bundle family."""
    if x < 0 or not math.isfinite(x):
        raise DomainError(f"magnitude must be finite and >= 0, got {x!r}")
    comp = _Compiled(market, bundles)
    return _allocate(comp, x, tol)


def _allocate(comp: _Compiled, x: float, tol: float, warm=None) -> BundleAllocation:
    if x == 0:
        y = [0.0] * len(comp.cols)
    elif all(c.piecewise_linear for c in comp.costs):
        y = _lp_allocation(comp, x)
    elif all(c.smooth and not math.isfinite(c.capacity) for c in comp.costs):
        res = _smooth_engine(comp.net, [(0, 1, float(x))], tol, warm, columns=[comp.cols])
        y = [0.0] * len(comp.cols)
        where = {col: b for b, col in enumerate(comp.cols)}
        for _, p, amt in res.paths:
            y[where[p]] += amt
    else:
        raise DomainError("bundle allocation supports all-smooth or all-piecewise-linear costs")
    xe = _snap(comp, comp.item_flows(y))
    minus, plus = _bundle_marginals(comp, xe, y)
    marg = [c.marginal(v, RIGHT) for c, v in zip(comp.costs, xe)]
    used = [sum(marg[i] for i in col) for col, amt in zip(comp.cols, y) if amt > _USED * x]
    spread = (max(used) - min(used)) if used and all(c.smooth for c in comp.costs) else 0.0
    return BundleAllocation(
        bundle_flow={b: amt for b, amt in zip(comp.bundles, y)},
        item_flow={e: v for e, v in zip(comp.items, xe)},
        magnitude=float(x),
        cost=sum(c.cost(v) for c, v in zip(comp.costs, xe)),
        marginal_minus=minus + 0.0,
        marginal_plus=plus + 0.0,
        kkt_residual=spread,
    )


def allocation_from_flow(market: MarketInstance, flow: FlowSolution) -> BundleAllocation:
    """View a graph flow as an allocation over the path bundles of ``market``."""
    y = {b: 0.0 for b in market.bundles}
    for p in flow.paths:
        key = tuple(sorted(p.edges, key=natural_key))
        if key not in y:
            raise StructureError(f"path {p.edges} is not a bundle of the market")
        y[key] += p.amount
    return BundleAllocation(
        bundle_flow=y,
        item_flow={e.id: flow.edge_flow.get(e.id, 0.0) for e in market.edges},
        magnitude=flow.magnitude,
        cost=flow.cost,
        marginal_minus=flow.marginal_minus,
        marginal_plus=flow.marginal_plus,
        kkt_residual=flow.kkt_residual,
    )


class BundleCurve:
    """Memoized min-cost allocations of a bundle market by magnitude."""

    def __init__(self, market: MarketInstance, tol: float = DEFAULT_TOL):
        self.market = market
        self.comp = _Compiled(market)
        self.tol = tol
        self._cache: dict = {}
        self.capacity = self._max_magnitude()

    def _max_magnitude(self) -> float:
        caps = [c.capacity for c in self.comp.costs]
        if all(math.isinf(c) for c in caps):
            return math.inf
        nb = len(self.comp.cols)
        rows, rhs = [], []
        for i, cap in enumerate(caps):
            if math.isfinite(cap):
                rows.append([1.0 if i in col else 0.0 for col in self.comp.cols])
                rhs.append(cap)
        res = linprog(-np.ones(nb), A_ub=np.array(rows), b_ub=np.array(rhs), bounds=[(0, None)] * nb,
                      method="highs")
        if res.status == 3:
            return math.inf
        return float(-res.fun)

    def solve(self, x: float) -> BundleAllocation:
        x = float(x)
        if x not in self._cache:
            self._cache[x] = _allocate(self.comp, x, self.tol)
        return self._cache[x]


def optimal_bundle_magnitude(market: MarketInstance, curve: BundleCurve | None = None) -> float:
    curve = curve or BundleCurve(market)
    d = market.demand
    top = min(d.T, curve.capacity)

    def ok(x):
        return d.value(x) >= curve.solve(x).marginal_minus

    if ok(top):
        return top
    if not ok(0.0):
        return 0.0
    lo, hi = 0.0, top
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if ok(mid):
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-14 * top:
            break
    return lo


# -- balanced item values ----------------------------------------------------------

def item_values(market: MarketInstance, alloc: BundleAllocation, target: float | None = None,
                bundles: Sequence[Sequence[str]] | None = None) -> dict:
    """Item values within the marginal intervals pricing every consumed bundle at ``target``.

    Smooth costs give the marginals directly.  Otherwise a small LP picks
    values in [c^-, c^+] with consumed bundles at ``target`` and no other
    bundle cheaper, closest to the left marginals.
    """
    comp = _Compiled(market, bundles)
    x = [alloc.item_flow.get(e, 0.0) for e in comp.items]
    used = [v > _USED * alloc.magnitude for v in x]
    lo = [c.marginal(v, LEFT) if u else c.marginal(0.0, RIGHT) for c, v, u in zip(comp.costs, x, used)]
    hi = [c.marginal(v, RIGHT) if u else lo[i] for i, (c, v, u) in enumerate(zip(comp.costs, x, used))]
    if all(a == b for a, b in zip(lo, hi)):
        return dict(zip(comp.items, lo))
    if target is None:
        target = alloc.marginal_minus
    origin = market.origin
    if origin is not None and bundles is None:
        # Converted graph market: balance on node potentials, as the graph route does.
        from .balance import balance_prices

        return balance_prices(origin, alloc.to_flow(), target)
    consumed = {tuple(sorted(b, key=natural_key)) for b in alloc.consumed()}
    a_eq, b_eq, a_ub, b_ub = [], [], [], []
    for b, col in zip(comp.bundles, comp.cols):
        row = [0.0] * comp.m
        for i in col:
            row[i] = 1.0
        if b in consumed:
            a_eq.append(row)
            b_eq.append(target)
        else:
            a_ub.append([-v for v in row])
            b_ub.append(-target)
    bounds = [(l, None if math.isinf(h) else h) for l, h in zip(lo, hi)]
    res = linprog(np.ones(comp.m), A_ub=np.array(a_ub) if a_ub else None, b_ub=b_ub or None,
                  A_eq=np.array(a_eq) if a_eq else None, b_eq=b_eq or None, bounds=bounds, method="highs")
    if res.status != 0:
        raise SolverError(f"no item values price the consumed bundles at {target!r}: {res.message}")
    return {e: float(v) + 0.0 for e, v in zip(comp.items, res.x)}


# -- ascending prices --------------------------------------------------------------

def _price(prices: Mapping[str, float], bundle: Sequence[str]) -> float:
    return sum(prices[e] for e in bundle)


def ascending_prices(market: MarketInstance, alloc: BundleAllocation, start: Mapping[str, float] | None = None,
                     value: float | None = None, tol: float = 1e-12) -> tuple[dict, AscendingState]:
    """Raise the virtual monopolies' prices uniformly, deactivating them on ties.

    Starts from ``start`` (balanced marginals by default) and stops when
    consumed bundles price to ``value`` (default the demand value at the
    allocation's magnitude) or no monopoly is active.  Every increment is
    the exact distance to the next event; ties deactivate items in natural
    id order.
    """
    if value is None:
        value = market.demand.value(alloc.magnitude)
    if start is None:
        start = item_values(market, alloc)
    prices = {e.id: float(start[e.id]) for e in market.edges}
    consumed = sorted(alloc.consumed(), key=_bundle_key)
    if not consumed:
        raise StructureError("allocation has empty support")
    others = sorted((b for b in market.bundles if b not in set(consumed)), key=_bundle_key)
    mono = tuple(sorted(set.intersection(*[set(b) for b in consumed]), key=natural_key))
    level = _price(prices, consumed[0])
    scale = max(1.0, abs(value))
    if value < level - 1e-9 * scale:
        raise NegativeSlackError(f"value {value!r} below consumed bundle price {level!r}")
    active = list(mono)
    inactive: list = []
    steps: list = []

    def record(op, delta):
        steps.append({
            "op": op,
            "delta": delta,
            "prices": dict(prices),
            "level": _price(prices, consumed[0]),
            "active": tuple(active),
            "inactive": [(e, w) for e, w in inactive],
        })

    def deactivate_ties():
        level_now = _price(prices, consumed[0])
        tied = [b for b in others if _price(prices, b) <= level_now + _TIE * max(1.0, abs(level_now))]
        out = []
        for e in list(active):
            witness = next((b for b in tied if e not in b), None)
            if witness is not None:
                out.append((e, witness))
        for e, w in out:
            active.remove(e)
            inactive.append((e, w))
        return out

    record("start", 0.0)
    if deactivate_ties():
        record("tie", 0.0)
    for _ in range(len(mono) + 1):
        if not active:
            break
        level = _price(prices, consumed[0])
        room = value - level
        if room <= tol * scale:
            break
        n_active = len(active)
        delta_value = room / n_active
        delta_tie = math.inf
        active_set = set(active)
        for b in others:
            inside = len(active_set.intersection(b))
            if inside < n_active:
                gap = _price(prices, b) - level
                delta_tie = min(delta_tie, max(gap, 0.0) / (n_active - inside))
        delta = min(delta_value, delta_tie)
        for e in active:
            prices[e] += delta
        if delta_tie <= delta_value:
            deactivate_ties()
            record("tie", delta)
        else:
            # Land exactly on the value despite rounding in the increments.
            last = active[-1]
            prices[last] += value - _price(prices, consumed[0])
            record("value", delta)
            break
    level = _price(prices, consumed[0])
    gamma = (prices[active[0]] - start[active[0]]) if active else 0.0
    state = AscendingState(
        prices=dict(prices),
        start=dict(start),
        monopolies=mono,
        active=tuple(active),
        inactive=inactive,
        price_level=level,
        value=value,
        gamma=gamma,
        steps=steps,
    )
    return dict(prices), state


def ascending_invariant_violations(market: MarketInstance, alloc: BundleAllocation, state: AscendingState,
                                   tol: float = 1e-9) -> list[str]:
    """The three ascending-process invariants, checked on every recorded step."""
    consumed = sorted(alloc.consumed(), key=_bundle_key)
    others = [b for b in market.bundles if b not in set(consumed)]
    out = []
    for k, step in enumerate(state.steps):
        prices = step["prices"]
        levels = [_price(prices, b) for b in consumed]
        ref = levels[0]
        slack = tol * max(1.0, abs(ref))
        if max(levels) - min(levels) > slack:
            out.append(f"step {k}: consumed bundles priced {min(levels)!r}..{max(levels)!r}")
        for b in others:
            if _price(prices, b) < ref - slack:
                out.append(f"step {k}: unconsumed bundle {b} cheaper than consumed ones")
        for e, witness in step["inactive"]:
            if e in witness:
                out.append(f"step {k}: witness {witness} of {e} contains it")
            elif abs(_price(prices, witness) - ref) > slack:
                out.append(f"step {k}: witness {witness} of {e} no longer tied")
    return out


# -- equilibrium search ----------------------------------------------------------------

def _state_at(market, curve, x):
    alloc = curve.solve(x)
    target = alloc.marginal_minus
    start = item_values(market, alloc, target)
    _, state = ascending_prices(market, alloc, start)
    return alloc, state


def _bracket_score(market, curve, x, slope):
    """Markup-condition residual in bracket form, so a root sitting on a kink scores zero."""
    from .equilibrium import bracket_residual

    d = market.demand
    alloc, state = _state_at(market, curve, x)
    right = abs(d.derivative(x, RIGHT)) if x < d.T else None
    return bracket_residual(d.value(x), alloc.marginal_minus, alloc.marginal_plus, len(state.active), x,
                            slope(x), right)


def _final_state(market, curve, x, slope):
    """Ascending state at the answer, started from the same path target the graph route uses.

    With no active monopoly the target is the value clipped into [r^-, r^+];
    otherwise the midpoint of the targets that keep the markup condition.
    """
    from .equilibrium import _admissible_target

    d = market.demand
    alloc = curve.solve(x)
    lam = d.value(x)
    r_minus, r_plus = alloc.marginal_minus, alloc.marginal_plus
    _, probe = ascending_prices(market, alloc, item_values(market, alloc, r_minus))
    M = len(probe.active)
    if M == 0:
        target = min(max(lam, r_minus), r_plus)
    else:
        right = abs(d.derivative(x, RIGHT)) if x < d.T else None
        lower, upper = _admissible_target(lam, r_minus, r_plus, M, x, slope(x), right)
        target = 0.5 * (lower + upper) if upper >= lower else r_minus
    if target == r_minus:
        return alloc, probe
    _, state = ascending_prices(market, alloc, item_values(market, alloc, target))
    return alloc, state


def bundle_equilibrium(market: MarketInstance, tol: float = 1e-9):
    """Equilibrium of a bundle market via the active-monopoly condition.

    At x* the answer is x* itself when no monopoly stays active or the
    active ones' markup Γ is at least x*|value'|.  Otherwise x0 is the lower
    end of the region where some monopoly stays active; the answer is the
    root of Γ(x) - x|value'(x)| in [x0, x*] when Γ(x0) clears the
    condition, else x0 itself.
    """
    from .equilibrium import CONSTRUCTED, INTERIOR_ROOT, OPTIMAL_CORNER, EquilibriumSolution, UNVERIFIED
    from . import demand as demand_mod

    if market.mode != BUNDLE:
        raise DomainError("needs a bundle-mode market")
    d = market.demand
    labels = []
    if "mpe" not in demand_mod.classify(d):
        labels.append(UNVERIFIED)
    curve = BundleCurve(market)
    x_star = optimal_bundle_magnitude(market, curve)
    if x_star <= 0:
        from .errors import NoEquilibriumError

        raise NoEquilibriumError("optimal magnitude is 0", diagnostics={"x_star": 0.0})

    def slope(x):
        return abs(d.derivative(x, LEFT)) if x > 0 else abs(d.derivative(x, RIGHT))

    def g(x):
        _, st = _state_at(market, curve, x)
        return (st.gamma - x * slope(x)) if st.active else -math.inf, st

    alloc, state = _state_at(market, curve, x_star)
    diag = {"x_star": x_star}
    near_boundary = False
    if not state.active or state.gamma >= x_star * slope(x_star) - tol * min(1.0, d.value(x_star)):
        x_eq, kind = x_star, OPTIMAL_CORNER
    else:
        lo, hi = 0.0, x_star
        if _state_at(market, curve, x_star * 2.0 ** -60)[1].active:
            x0 = 0.0
        else:
            lo = x_star * 2.0 ** -60
            for _ in range(200):
                mid = 0.5 * (lo + hi)
                if _state_at(market, curve, mid)[1].active:
                    hi = mid
                else:
                    lo = mid
                if hi - lo <= 1e-15 * x_star:
                    break
            x0 = hi
        diag["x0"] = x0
        start = max(x0, x_star * 2.0 ** -60)
        g0, _ = g(start)
        if g0 >= 0:
            lo, hi = start, x_star
            for _ in range(200):
                mid = 0.5 * (lo + hi)
                if g(mid)[0] >= 0:
                    lo = mid
                else:
                    hi = mid
                if hi - lo <= 1e-15 * x_star:
                    break
            x_eq = min((lo, hi), key=lambda v: (_bracket_score(market, curve, v, slope), v))
            kind = INTERIOR_ROOT
        else:
            x_eq, kind = start, INTERIOR_ROOT
            near_boundary = True
        if x0 > 0 and abs(x_eq - x0) <= 10 * tol * max(1.0, x0):
            near_boundary = True
    alloc, state = _final_state(market, curve, x_eq, slope)
    flow = alloc.to_flow()
    vm = tuple(sorted(virtual_monopolies(market, alloc), key=natural_key)) if alloc.magnitude > 0 else ()
    lam = d.value(alloc.magnitude)
    residual = 0.0
    if kind == INTERIOR_ROOT and state.active:
        residual = abs(state.gamma - alloc.magnitude * slope(alloc.magnitude))
    diag.update({
        "active": list(state.active),
        "inactive": [[e, list(w)] for e, w in state.inactive],
        "gamma": state.gamma,
        "near_boundary": near_boundary,
        "virtual_monopolies": list(vm),
    })
    return EquilibriumSolution(
        prices=state.prices,
        flow=flow,
        magnitude=alloc.magnitude,
        monopolies=vm,
        slack=lam - alloc.marginal_minus,
        residual=residual,
        kind=kind,
        welfare=d.cumulative(alloc.magnitude) - alloc.cost,
        labels=tuple(labels),
        diagnostics=diag,
    )


# -- uniform buyers with a set valuation -----------------------------------------------

def _closure(valuations: Mapping[frozenset, float]) -> dict:
    return {frozenset(s): float(v) for s, v in valuations.items() if s}


def combinatorial_optimum(market: MarketInstance, tol: float = DEFAULT_TOL):
    """Welfare-optimal allocation of uniform buyers over the valued sets.

    Each valued set becomes a bundle with a private surcharge item
    V - v(S), where V is the largest value; an outside option costs V.
    Routing the whole population at least cost then maximizes welfare.
    """
    vals = _closure(market.valuations)
    if not vals:
        raise ValidationError("needs a valuation table", "valuations")
    for s1, v1 in vals.items():
        for s2, v2 in vals.items():
            if s1 < s2 and v1 > v2:
                raise ValidationError(f"valuation not monotone: {sorted(s1)} vs {sorted(s2)}", "valuations")
    T = market.demand.T
    top = max(vals.values())
    sets = sorted((tuple(sorted(s, key=natural_key)) for s in vals), key=_bundle_key)
    from .market import Commodity, Edge

    items = list(market.edges)
    family = []
    for j, s in enumerate(sets):
        tag = f"__value{j}"
        items.append(Edge(tag, None, None, Linear(top - vals[frozenset(s)])))
        family.append(tuple(s) + (tag,))
    items.append(Edge("__none", None, None, Linear(top)))
    family.append(("__none",))
    aux = MarketInstance([], items, [Commodity(None, None, market.demand)], BUNDLE, family,
                         flags=["general-market"], name=market.name)
    alloc = min_cost_allocation(aux, T, tol)
    bought = {}
    for b, amt in alloc.bundle_flow.items():
        if "__none" in b or amt <= 0:
            continue
        s = tuple(e for e in b if not e.startswith("__value"))
        bought[s] = bought.get(s, 0.0) + amt
    item_flow = {e.id: alloc.item_flow.get(e.id, 0.0) for e in market.edges}
    return sets, vals, bought, item_flow


def combinatorial_uniform_equilibrium(market: MarketInstance, tol: float = DEFAULT_TOL):
    """Efficient equilibrium for uniform buyers valuing sets via a table.

    Prices start at marginal cost at the optimum; then, one virtual monopoly
    at a time in id order, a price rises until buyers' utility hits zero or
    an unconsumed set becomes as attractive as the consumed ones.
    """
    from .equilibrium import OPTIMAL_CORNER, EquilibriumSolution

    if market.demand.kind != "uniform":
        raise DomainError("needs a uniform population")
    sets, vals, bought, item_flow = combinatorial_optimum(market, tol)
    prices = {e.id: e.cost.marginal(item_flow[e.id], RIGHT) for e in market.edges}
    scale = max(1.0, market.demand.T)
    consumed = [s for s in sets if bought.get(s, 0.0) > _USED * scale]
    others = [s for s in sets if s not in consumed]
    mono = sorted(set.intersection(*[set(s) for s in consumed]), key=natural_key) if consumed else []

    def utility(s):
        return vals[frozenset(s)] - _price(prices, s)

    raised = []
    for e in mono:
        u = utility(consumed[0])
        room = u
        for s in others:
            if e not in s:
                room = min(room, u - utility(s))
        room = max(room, 0.0)
        if room > 0:
            prices[e] += room
            raised.append((e, room))
    magnitude = sum(bought.values())
    flow = FlowSolution(
        edge_flow=item_flow,
        paths=[PathFlow(s, a) for s, a in sorted(bought.items(), key=lambda kv: _bundle_key(kv[0])) if a > 0],
        magnitude=magnitude,
        cost=sum(e.cost.cost(item_flow[e.id]) for e in market.edges),
        commodity_magnitudes=(magnitude,),
    )
    welfare = sum(vals[frozenset(s)] * a for s, a in bought.items()) - flow.cost
    return EquilibriumSolution(
        prices=prices,
        flow=flow,
        magnitude=magnitude,
        monopolies=tuple(mono),
        slack=0.0,
        residual=0.0,
        kind=OPTIMAL_CORNER,
        welfare=welfare,
        diagnostics={"raised": raised, "consumed": [list(s) for s in consumed]},
    )


def check_combinatorial(market: MarketInstance, prices: Mapping[str, float], flow: FlowSolution,
                        tol: float = 1e-6, grid: int = 400) -> dict:
    """Stability of a set-valuation outcome for uniform buyers.

    Buyers must hold utility-maximizing sets with non-negative utility, the
    whole population buying when utility is positive.  Each seller's
    deviation is scored with the deviator's best split among tied sets.
    """
    vals = _closure(market.valuations)
    T = market.demand.T
    costs = {e.id: e.cost for e in market.edges}

    def best_sets(p):
        util = {s: v - sum(p[e] for e in s) for s, v in vals.items()}
        top = max(util.values())
        tied = [s for s, u in util.items() if u >= top - tol]
        return top, tied

    top, tied = best_sets(prices)
    buyer_ok = top >= -tol and all(frozenset(p.edges) in tied for p in flow.paths if p.amount > tol)
    if top > tol and flow.magnitude < T - tol:
        buyer_ok = False
    witness = None
    for e in market.edges:
        x_now = flow.edge_flow.get(e.id, 0.0)
        now = prices[e.id] * x_now - costs[e.id].cost(x_now)
        cands = set(np.linspace(0.0, 2.0 * max(vals.values()), grid).tolist())
        for s, v in vals.items():
            rest = sum(prices[i] for i in s if i != e.id)
            for t2, v2 in vals.items():
                if e.id not in t2:
                    cands.add(max(v - rest - (v2 - sum(prices[i] for i in t2)), 0.0))
            cands.add(max(v - rest, 0.0))
        for q in sorted(cands):
            p = dict(prices)
            p[e.id] = q
            u, sets_now = best_sets(p)
            if u < -tol:
                continue
            holds = [s for s in sets_now if e.id in s]
            if not holds:
                continue
            hi = T
            lo = T if len(holds) == len(sets_now) and u > tol else 0.0
            x = min(max(hi, lo), T)
            gain = max(q * xx - costs[e.id].cost(xx) for xx in (lo, hi))
            if gain > now + tol:
                witness = {"edge": e.id, "price": q, "profit": gain, "old_profit": now}
                break
        if witness:
            break
    return {"buyer_best_response": buyer_ok, "seller_stability": witness is None, "witness": witness,
            "passed": buyer_ok and witness is None}
