"""Registry of named market instances with known answers.

Each scenario builds a MarketInstance from a few parameters and carries a
table of expected values.  Every expected entry records where the number
comes from: ``published`` (a worked example with a stated answer),
``closed-form`` (derived by hand from the construction) or ``definition``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping

from . import costs as C
from . import demand as D
from .errors import DomainError
from .market import GENERAL_MARKET, Commodity, Edge, MarketInstance

PROVENANCES = ("published", "closed-form", "definition")


@dataclass(frozen=True)
class Expected:
    value: float
    provenance: str
    note: str = ""


@dataclass(frozen=True)
class Scenario:
    id: str
    builder: Callable[..., MarketInstance]
    defaults: Mapping[str, float]
    expected: Callable[..., dict]
    description: str
    stub: bool = False

    def build(self, **params) -> MarketInstance:
        return self.builder(**self._params(params))

    def expected_values(self, **params) -> dict:
        return self.expected(**self._params(params))

    def _params(self, params: Mapping[str, Any]) -> dict:
        unknown = set(params) - set(self.defaults)
        if unknown:
            raise DomainError(f"scenario {self.id!r} has no parameter(s) {sorted(unknown)}")
        out = dict(self.defaults)
        out.update(params)
        return out


def _path(m: int, cost_for, prefix: str = "e") -> tuple[list, list]:
    nodes = ["s"] + [f"v{i}" for i in range(1, m)] + ["t"]
    edges = [Edge(f"{prefix}{i + 1}", nodes[i], nodes[i + 1], cost_for(i)) for i in range(m)]
    return nodes, edges


def _int(m, name="M", low=1) -> int:
    if isinstance(m, float) and m.is_integer():
        m = int(m)
    if not isinstance(m, int) or m < low:
        raise DomainError(f"{name} must be an integer >= {low}, got {m!r}")
    return m


# -- builders ---------------------------------------------------------------------

def _single_good() -> MarketInstance:
    return MarketInstance(
        ["s", "t"],
        [Edge("e1", "s", "t", C.power(1.0, 2.0))],
        [Commodity("s", "t", D.affine(1.0, 1.0))],
        name="single-good",
    )


def _single_good_expected() -> dict:
    return {
        "x_eq": Expected(0.25, "published"),
        "price_e1": Expected(0.75, "published"),
        "profit_e1": Expected(0.125, "published"),
        "x_star": Expected(1 / 3, "published"),
        "walrasian_price": Expected(2 / 3, "published"),
        "walrasian_profit": Expected(1 / 9, "published"),
        "welfare_opt": Expected(1 / 6, "closed-form", "integral of 1 - 3x over [0, 1/3]"),
        "welfare_eq": Expected(5 / 32, "closed-form", "integral of 1 - 3x over [0, 1/4]"),
        "eta": Expected(16 / 15, "closed-form"),
    }


def _concave_tight(M: int = 4) -> MarketInstance:
    M = _int(M)
    nodes, edges = _path(M, lambda i: C.linear(1.0 / M))
    top = 2.0 * M + 1.0
    dem = D.piecewise_linear([(0.0, top), (1.0, top), (M + 1.5, 0.0)])
    return MarketInstance(nodes, edges, [Commodity("s", "t", dem)], flags=[GENERAL_MARKET],
                          name=f"concave-tight(M={M})")


def _concave_tight_expected(M: int = 4) -> dict:
    M = _int(M)
    return {
        "x_eq": Expected(1.0, "published"),
        "price_per_edge": Expected(2.0 + 1.0 / M, "published"),
        "profit_per_edge": Expected(2.0, "published"),
        "x_star": Expected(M + 1.0, "published"),
        "welfare_opt": Expected(2.0 * M + M * M, "published"),
        "welfare_eq": Expected(2.0 * M, "published"),
        "eta": Expected(1.0 + M / 2.0, "published"),
    }


def _mhr_tight(M: int = 4, x_star: float = 50.0) -> MarketInstance:
    M = _int(M)
    if not x_star > 1.0:
        raise DomainError(f"x_star must exceed 1, got {x_star!r}")
    nodes, edges = _path(M, lambda i: C.pwl_convex([x_star], [0.0, 1.0]))
    dem = D.exponential(1.0, 1.0, x_star + 1.0, 1.0 / M)
    return MarketInstance(nodes, edges, [Commodity("s", "t", dem)], name=f"mhr-tight(M={M},x*={x_star:g})")


def _mhr_tight_expected(M: int = 4, x_star: float = 50.0) -> dict:
    M = _int(M)
    flat = math.exp(-1.0 / M)
    w_eq = flat / M
    w_opt = flat / M + flat - math.exp(-x_star)
    return {
        "x_eq": Expected(1.0 / M, "closed-form"),
        "path_price": Expected(flat, "closed-form", "flat level of the truncated exponential"),
        "x_star": Expected(float(x_star), "closed-form"),
        "welfare_eq": Expected(w_eq, "closed-form"),
        "welfare_opt": Expected(w_opt, "closed-form"),
        "eta": Expected(w_opt / w_eq, "closed-form"),
        "eta_limit": Expected(1.0 + M, "published"),
    }


def _two_source_inefficient() -> MarketInstance:
    # Edge weights are reconstructed from the profit algebra of the example:
    # e1 earns 3/4 * 1/4 - (1/4)^2, so C1 = x^2; e2 carrying one unit costs 1.
    nodes = ["s1", "s2", "i1", "t"]
    edges = [
        Edge("e1", "s1", "t", C.power(1.0, 2.0)),
        Edge("e2", "i1", "t", C.linear(1.0)),
        Edge("e3", "s1", "i1", C.zero()),
        Edge("e4", "s2", "i1", C.power(0.5, 2.0)),
        Edge("e5", "s2", "t", C.power(1.0, 2.0)),
    ]
    comms = [Commodity("s1", "t", D.affine(1.0, 1.0)), Commodity("s2", "t", D.affine(4.0, 1.0))]
    return MarketInstance(nodes, edges, comms, flags=[GENERAL_MARKET], name="two-source-inefficient")


def _two_source_expected() -> dict:
    return {
        "x_s1": Expected(1 / 3, "published"),
        "x_s2": Expected(2.0, "published"),
        "flow_e1": Expected(1 / 3, "published"),
        "flow_e2": Expected(1.0, "published"),
        "flow_e5": Expected(1.0, "published"),
        "deviation_price": Expected(0.75, "published"),
        "deviation_profit": Expected(0.125, "published"),
        "original_profit": Expected(1 / 9, "published"),
    }


def _no_equilibrium() -> MarketInstance:
    nodes = ["s1", "s2", "t"]
    edges = [
        Edge("e1", "s1", "t", C.linear(3.0)),
        Edge("e2", "s1", "s2", C.zero()),
        Edge("e3", "s2", "t", C.linear(2.0)),
    ]
    comms = [Commodity("s1", "t", D.uniform(100.0, 1.0)), Commodity("s2", "t", D.uniform(25.0, 1.0))]
    return MarketInstance(nodes, edges, comms, flags=[GENERAL_MARKET], name="no-equilibrium")


def _no_equilibrium_expected() -> dict:
    return {
        "equilibria_found": Expected(0.0, "published"),
        "e3_profit_floor": Expected(23.0, "published"),
    }


def _unbounded(r: float = 2.5, c0: float = 0.5) -> MarketInstance:
    if not r > 2.0:
        raise DomainError(f"r must exceed M = 2, got {r!r}")
    nodes, edges = _path(2, lambda i: C.linear(c0))
    dem = D.power_elastic(1.0, r, 1.0)
    return MarketInstance(nodes, edges, [Commodity("s", "t", dem)], flags=[GENERAL_MARKET],
                          name=f"unbounded(r={r:g})")


def _unbounded_expected(r: float = 2.5, c0: float = 0.5) -> dict:
    # Untruncated closed form: x~ solves x^(-1/r)(1 - 2/r) = 2 c0.
    x_eq = ((1.0 - 2.0 / r) / (2.0 * c0)) ** r
    return {
        "x_star": Expected(min(1.0, (2.0 * c0) ** -r), "closed-form"),
        "x_eq_untruncated": Expected(x_eq, "closed-form"),
    }


def _capacitated(M: int = 2, r: float = 3.0) -> MarketInstance:
    M = _int(M)
    nodes = ["s"] + [f"v{i}" for i in range(1, M + 1)] + ["t"]
    edges = [Edge(f"m{i + 1}", nodes[i], nodes[i + 1], C.capacity(1.0 if i == 0 else 2.0)) for i in range(M)]
    edges += [Edge("p1", nodes[M], "t", C.capacity(2.0)), Edge("p2", nodes[M], "t", C.capacity(2.0))]
    dem = D.power_elastic(1.0, float(r), 2.0)
    return MarketInstance(nodes, edges, [Commodity("s", "t", dem)], name=f"capacitated(M={M},r={r:g})")


def _capacitated_expected(M: int = 2, r: float = 3.0) -> dict:
    M = _int(M)
    return {
        "x_star": Expected(1.0, "closed-form", "bottleneck capacity of the first monopoly"),
        "path_price": Expected(1.0, "closed-form"),
        "unsaturated_price": Expected(1.0 / r, "closed-form"),
        "saturated_price": Expected(1.0 - (M - 1) / r, "closed-form"),
        "eta": Expected(1.0, "published"),
    }


def _family(kind: str):
    def build(M: int = 2, alpha: float = 2.0) -> MarketInstance:
        M = _int(M)
        nodes, edges = _path(M, lambda i: C.power(1.0 / (2.0 * M), 2.0))
        if kind == "f_p":
            dem = D.poly_concave(1.0, 1.0, alpha)
        elif kind == "f_ced":
            dem = D.ced(1.0, 1.0, alpha)
        else:
            dem = D.log_inverse(1.0, alpha)
        return MarketInstance(nodes, edges, [Commodity("s", "t", dem)], name=f"{kind}(M={M},alpha={alpha:g})")

    def expected(M: int = 2, alpha: float = 2.0) -> dict:
        from .efficiency import theoretical_bound

        return {"bound": Expected(theoretical_bound(kind, _int(M), alpha), "published")}

    return build, expected


def _parallel_noncompetitive() -> MarketInstance:
    edges = [Edge("e1", "s", "t", C.zero()), Edge("e2", "s", "t", C.zero())]
    return MarketInstance(["s", "t"], edges, [Commodity("s", "t", D.uniform(100.0, 1.0))],
                          name="parallel-noncompetitive")


def _build_registry() -> dict:
    fp, fp_exp = _family("f_p")
    fc, fc_exp = _family("f_ced")
    fe, fe_exp = _family("f_exp")
    items = [
        Scenario("single-good", _single_good, {}, _single_good_expected,
                 "one seller, cost x^2, linear demand 1 - x"),
        Scenario("concave-tight", _concave_tight, {"M": 4}, _concave_tight_expected,
                 "path of M links with cost x/M and a kinked concave demand; efficiency exactly 1 + M/2"),
        Scenario("mhr-tight", _mhr_tight, {"M": 4, "x_star": 50.0}, _mhr_tight_expected,
                 "path of M links, free up to x_star then steep; exponential demand flat below 1/M"),
        Scenario("two-source-inefficient", _two_source_inefficient, {}, _two_source_expected,
                 "two sources without monopolies whose optimal flow no prices can stabilize"),
        Scenario("no-equilibrium", _no_equilibrium, {}, _no_equilibrium_expected,
                 "two sources with uniform demand and no pure equilibrium"),
        Scenario("unbounded", _unbounded, {"r": 2.5, "c0": 0.5}, _unbounded_expected,
                 "two-link path with truncated constant-elasticity demand; efficiency diverges as r -> 2"),
        Scenario("capacitated", _capacitated, {"M": 2, "r": 3.0}, _capacitated_expected,
                 "capacity-only path of M monopolies then two parallel links; efficient when r > M"),
        Scenario("f_p", fp, {"M": 2, "alpha": 2.0}, fp_exp, "path of M links, demand 1 - x^alpha"),
        Scenario("f_ced", fc, {"M": 2, "alpha": 2.0}, fc_exp, "path of M links, demand (1 - x)^alpha"),
        Scenario("f_exp", fe, {"M": 2, "alpha": 2.0}, fe_exp, "path of M links, demand |ln x|^(1/alpha)"),
        Scenario("parallel-noncompetitive", _parallel_noncompetitive, {}, lambda: {},
                 "stub: two parallel zero-cost links; the costs of the original example are unspecified",
                 stub=True),
    ]
    return {s.id: s for s in items}


REGISTRY = _build_registry()


def ids() -> list[str]:
    return list(REGISTRY)


def get(scenario_id: str) -> Scenario:
    try:
        return REGISTRY[scenario_id]
    except KeyError:
        raise KeyError(f"unknown scenario {scenario_id!r}; known: {', '.join(REGISTRY)}") from None


def build(scenario_id: str, params: Mapping[str, Any] | None = None) -> MarketInstance:
    return get(scenario_id).build(**dict(params or {}))


def expected(scenario_id: str, params: Mapping[str, Any] | None = None) -> dict:
    return get(scenario_id).expected_values(**dict(params or {}))
