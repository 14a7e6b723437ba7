"""Market instances and their structure.

A graph-mode market is a directed multigraph whose edges are sellers, each
with a convex cost, plus one or more commodities (source, sink, demand).
A bundle-mode market is a set of items with costs and an explicit family of
bundles that buyers may purchase.
"""

from __future__ import annotations

import math
import re
from collections import deque
from dataclasses import dataclass, field
from itertools import combinations
from typing import Any, Iterable, Mapping, Sequence

from .costs import CostFunction, make_cost
from .demand import DemandFunction, make_demand
from .errors import StructureError, ValidationError

GRAPH = "graph"
BUNDLE = "bundle"
GENERAL_MARKET = "general-market"
KNOWN_FLAGS = frozenset({GENERAL_MARKET})

PATH_CAP = 10_000


def natural_key(name: str) -> tuple:
    """Sort key that orders "e2" before "e10"."""
    return tuple(int(tok) if tok.isdigit() else tok for tok in re.split(r"(\d+)", name))


@dataclass(frozen=True)
class Edge:
    id: str
    tail: str | None
    head: str | None
    cost: CostFunction


@dataclass(frozen=True)
class Commodity:
    source: str | None
    sink: str | None
    demand: DemandFunction


@dataclass(frozen=True)
class PathFlow:
    edges: tuple
    amount: float
    commodity: int = 0


@dataclass
class FlowSolution:
    """Edge amounts, a path decomposition and the min-cost certificate."""

    edge_flow: dict
    paths: list
    magnitude: float
    cost: float = 0.0
    marginal_minus: float | None = None
    marginal_plus: float | None = None
    kkt_residual: float = 0.0
    iterations: int = 0
    commodity_magnitudes: tuple = ()

    @property
    def certificate(self) -> float | None:
        return self.marginal_minus

    def flow_paths(self, commodity: int | None = None) -> list:
        return [p for p in self.paths if p.amount > 0 and (commodity is None or p.commodity == commodity)]


class MarketInstance:
    """Validated, immutable market description.

    Edges are stored sorted by natural id order, which is the tie-break order
    used throughout the library.
    """

    def __init__(
        self,
        nodes: Sequence[str],
        edges: Sequence[Edge],
        commodities: Sequence[Commodity],
        mode: str = GRAPH,
        bundles: Sequence[Sequence[str]] | None = None,
        valuations: Mapping[frozenset, float] | None = None,
        flags: Iterable[str] = (),
        name: str | None = None,
    ):
        self.mode = mode
        self.nodes = tuple(nodes)
        self.edges = tuple(sorted(edges, key=lambda e: natural_key(e.id)))
        self.commodities = tuple(commodities)
        self.flags = frozenset(flags)
        self.name = name
        self.origin: "MarketInstance | None" = None
        self.edge_index = {e.id: i for i, e in enumerate(self.edges)}
        self.bundles = tuple(tuple(sorted(b, key=natural_key)) for b in bundles) if bundles else ()
        self.valuations = dict(valuations) if valuations else {}
        self._validate()
        self.out_edges: dict[str, list[int]] = {v: [] for v in self.nodes}
        self.in_edges: dict[str, list[int]] = {v: [] for v in self.nodes}
        if self.mode == GRAPH:
            for i, e in enumerate(self.edges):
                self.out_edges[e.tail].append(i)
                self.in_edges[e.head].append(i)
            for k, c in enumerate(self.commodities):
                if c.sink not in reachable(self, c.source):
                    raise StructureError(f"commodity {k}: sink {c.sink!r} unreachable from {c.source!r}")

    # -- validation ---------------------------------------------------------
    def _validate(self) -> None:
        if self.mode not in (GRAPH, BUNDLE):
            raise ValidationError(f"unknown mode {self.mode!r}", "mode")
        unknown = self.flags - KNOWN_FLAGS
        if unknown:
            raise ValidationError(f"unknown flags {sorted(unknown)}", "flags")
        if not self.edges:
            raise ValidationError("at least one edge is required", "edges")
        if len(self.edge_index) != len(self.edges):
            raise ValidationError("edge ids must be unique", "edges")
        node_set = set(self.nodes)
        if len(node_set) != len(self.nodes):
            raise ValidationError("node ids must be unique", "nodes")
        if not self.commodities:
            raise ValidationError("at least one commodity is required", "commodities")
        for i, e in enumerate(self.edges):
            if e.cost.zero_marginal() > 0 and GENERAL_MARKET not in self.flags:
                raise ValidationError(
                    "positive marginal cost at 0 requires the general-market flag", f"edges[{i}].cost"
                )
            if self.mode == GRAPH:
                if e.tail not in node_set or e.head not in node_set:
                    raise ValidationError(f"unknown endpoint in edge {e.id!r}", f"edges[{i}]")
                if e.tail == e.head:
                    raise ValidationError(f"self-loop on edge {e.id!r}", f"edges[{i}]")
        if self.mode == GRAPH:
            for k, c in enumerate(self.commodities):
                for end in ("source", "sink"):
                    if getattr(c, end) not in node_set:
                        raise ValidationError("unknown node", f"commodities[{k}].{end}")
                if c.source == c.sink:
                    raise ValidationError("source equals sink", f"commodities[{k}]")
            return
        if len(self.commodities) != 1:
            raise ValidationError("bundle markets take exactly one demand", "commodities")
        if not self.bundles and not self.valuations:
            raise ValidationError("bundle markets need bundles or valuations", "bundles")
        for j, b in enumerate(self.bundles):
            if not b:
                raise ValidationError("bundles must be non-empty", f"bundles[{j}]")
            for item in b:
                if item not in self.edge_index:
                    raise ValidationError(f"unknown item {item!r}", f"bundles[{j}]")
            if len(set(b)) != len(b):
                raise ValidationError("repeated item", f"bundles[{j}]")
        if len(set(self.bundles)) != len(self.bundles):
            raise ValidationError("duplicate bundle", "bundles")
        for s in self.valuations:
            for item in s:
                if item not in self.edge_index:
                    raise ValidationError(f"unknown item {item!r}", "valuations")
        for (s1, v1), (s2, v2) in combinations(self.valuations.items(), 2):
            if (s1 < s2 and v1 > v2) or (s2 < s1 and v2 > v1):
                raise ValidationError(
                    f"valuation not monotone: {sorted(s1)} vs {sorted(s2)}", "valuations"
                )

    # -- convenience --------------------------------------------------------
    @property
    def is_bundle(self) -> bool:
        return self.mode == BUNDLE

    @property
    def general_market(self) -> bool:
        return GENERAL_MARKET in self.flags

    @property
    def primary_theory(self) -> bool:
        return self.mode == GRAPH and len(self.commodities) == 1

    @property
    def demand(self) -> DemandFunction:
        return self.commodities[0].demand

    @property
    def source(self) -> str:
        return self.commodities[0].source

    @property
    def sink(self) -> str:
        return self.commodities[0].sink

    @property
    def edge_ids(self) -> tuple:
        return tuple(e.id for e in self.edges)

    def cost(self, edge_id: str) -> CostFunction:
        return self.edges[self.edge_index[edge_id]].cost

    @property
    def has_capacities(self) -> bool:
        return any(math.isfinite(e.cost.capacity) for e in self.edges)

    @property
    def all_smooth(self) -> bool:
        return all(e.cost.smooth for e in self.edges)

    @property
    def all_piecewise_linear(self) -> bool:
        return all(e.cost.piecewise_linear for e in self.edges)

    def total_cost(self, edge_flow: Mapping[str, float]) -> float:
        return sum(e.cost.cost(edge_flow.get(e.id, 0.0)) for e in self.edges)

    def with_demand(self, demand: DemandFunction, commodity: int = 0) -> "MarketInstance":
        comms = list(self.commodities)
        comms[commodity] = Commodity(comms[commodity].source, comms[commodity].sink, demand)
        return MarketInstance(
            self.nodes, self.edges, comms, self.mode, self.bundles, self.valuations, self.flags, self.name
        )

    # -- serialization ------------------------------------------------------
    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {"mode": self.mode}
        if self.name:
            out["name"] = self.name
        if self.mode == GRAPH:
            out["nodes"] = list(self.nodes)
        edges = []
        for e in self.edges:
            item: dict[str, Any] = {"id": e.id, "cost": e.cost.to_dict()}
            if self.mode == GRAPH:
                item["from"] = e.tail
                item["to"] = e.head
            edges.append(item)
        out["edges"] = edges
        comms = []
        for c in self.commodities:
            item = {"demand": c.demand.to_dict()}
            if self.mode == GRAPH:
                item["source"] = c.source
                item["sink"] = c.sink
            comms.append(item)
        out["commodities"] = comms
        if self.bundles:
            out["bundles"] = [list(b) for b in self.bundles]
        if self.valuations:
            out["valuations"] = [
                {"set": sorted(s, key=natural_key), "value": v}
                for s, v in sorted(self.valuations.items(), key=lambda kv: (len(kv[0]), sorted(kv[0], key=natural_key)))
            ]
        if self.flags:
            out["flags"] = sorted(self.flags)
        return out

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> "MarketInstance":
        if not isinstance(doc, Mapping):
            raise ValidationError("instance must be a JSON object")
        mode = doc.get("mode", GRAPH)
        if mode not in (GRAPH, BUNDLE):
            raise ValidationError(f"unknown mode {mode!r}", "mode")
        nodes = doc.get("nodes", [])
        if mode == GRAPH:
            if not isinstance(nodes, list) or not all(isinstance(v, str) for v in nodes):
                raise ValidationError("must be a list of strings", "nodes")
        raw_edges = doc.get("edges")
        if not isinstance(raw_edges, list):
            raise ValidationError("must be a list", "edges")
        edges = []
        for i, raw in enumerate(raw_edges):
            path = f"edges[{i}]"
            if not isinstance(raw, Mapping):
                raise ValidationError("must be an object", path)
            eid = raw.get("id")
            if not isinstance(eid, str) or not eid:
                raise ValidationError("must be a non-empty string", f"{path}.id")
            if "cost" not in raw:
                raise ValidationError("missing field", f"{path}.cost")
            cost = make_cost(raw["cost"], f"{path}.cost")
            tail = head = None
            if mode == GRAPH:
                for key in ("from", "to"):
                    if not isinstance(raw.get(key), str):
                        raise ValidationError("must be a node id", f"{path}.{key}")
                tail, head = raw["from"], raw["to"]
            edges.append(Edge(eid, tail, head, cost))
        raw_comms = doc.get("commodities")
        if not isinstance(raw_comms, list):
            raise ValidationError("must be a list", "commodities")
        comms = []
        for k, raw in enumerate(raw_comms):
            path = f"commodities[{k}]"
            if not isinstance(raw, Mapping):
                raise ValidationError("must be an object", path)
            if "demand" not in raw:
                raise ValidationError("missing field", f"{path}.demand")
            demand = make_demand(raw["demand"], f"{path}.demand")
            src = raw.get("source")
            snk = raw.get("sink")
            if mode == GRAPH:
                for key, val in (("source", src), ("sink", snk)):
                    if not isinstance(val, str):
                        raise ValidationError("must be a node id", f"{path}.{key}")
            comms.append(Commodity(src, snk, demand))
        bundles = doc.get("bundles")
        if bundles is not None:
            if not isinstance(bundles, list) or not all(isinstance(b, list) for b in bundles):
                raise ValidationError("must be a list of item lists", "bundles")
        valuations = None
        if doc.get("valuations") is not None:
            raw_vals = doc["valuations"]
            if not isinstance(raw_vals, list):
                raise ValidationError("must be a list", "valuations")
            valuations = {}
            for j, raw in enumerate(raw_vals):
                path = f"valuations[{j}]"
                if not isinstance(raw, Mapping) or not isinstance(raw.get("set"), list):
                    raise ValidationError("must be an object with a 'set' list", path)
                val = raw.get("value")
                if isinstance(val, bool) or not isinstance(val, (int, float)) or not math.isfinite(val) or val < 0:
                    raise ValidationError("must be a finite number >= 0", f"{path}.value")
                valuations[frozenset(raw["set"])] = float(val)
        flags = doc.get("flags", [])
        if not isinstance(flags, list):
            raise ValidationError("must be a list", "flags")
        return cls(nodes, edges, comms, mode, bundles, valuations, flags, doc.get("name"))


# -- structural analysis ------------------------------------------------------

def reachable(inst: MarketInstance, start: str, removed: int | None = None) -> set:
    seen = {start}
    queue = deque([start])
    while queue:
        u = queue.popleft()
        for i in inst.out_edges[u]:
            if i == removed:
                continue
            v = inst.edges[i].head
            if v not in seen:
                seen.add(v)
                queue.append(v)
    return seen


def monopolies(inst: MarketInstance, commodity: int = 0) -> frozenset:
    """Edges whose removal disconnects the commodity's source from its sink."""
    if inst.mode != GRAPH:
        raise StructureError("monopolies are defined on graph-mode markets")
    c = inst.commodities[commodity]
    if c.sink not in reachable(inst, c.source):
        raise StructureError("sink unreachable from source")
    return frozenset(
        e.id for i, e in enumerate(inst.edges) if c.sink not in reachable(inst, c.source, removed=i)
    )


def virtual_monopolies(inst: MarketInstance, alloc: Any, tol: float = 1e-12) -> frozenset:
    """Items contained in every positively allocated path or bundle."""
    if isinstance(alloc, FlowSolution):
        supports = [set(p.edges) for p in alloc.paths if p.amount > tol]
    else:
        supports = [set(b) for b, amount in alloc.bundle_flow.items() if amount > tol]
    if not supports:
        raise StructureError("allocation has empty support")
    common = set.intersection(*supports)
    return frozenset(sorted(common, key=natural_key))


def simple_paths(inst: MarketInstance, source: str, sink: str, cap: int = PATH_CAP) -> list:
    """All simple source-sink paths as tuples of edge ids, in edge-id order."""
    out: list = []
    on_path = {source}
    stack: list = []

    def walk(u: str) -> None:
        if u == sink:
            out.append(tuple(inst.edges[i].id for i in stack))
            if len(out) > cap:
                raise StructureError(f"more than {cap} paths")
            return
        for i in inst.out_edges[u]:
            v = inst.edges[i].head
            if v in on_path:
                continue
            on_path.add(v)
            stack.append(i)
            walk(v)
            stack.pop()
            on_path.discard(v)

    walk(source)
    return out


def as_bundle_market(inst: MarketInstance, commodity: int = 0, cap: int = PATH_CAP) -> MarketInstance:
    """Recast a single-commodity graph market as bundles of path edges."""
    c = inst.commodities[commodity]
    paths = simple_paths(inst, c.source, c.sink, cap)
    items = [Edge(e.id, None, None, e.cost) for e in inst.edges]
    market = MarketInstance([], items, [Commodity(None, None, c.demand)], BUNDLE, paths, None, inst.flags, inst.name)
    # Kept so item values can be balanced on the graph's node potentials; not serialized.
    market.origin = inst if len(inst.commodities) == 1 else None
    return market


@dataclass
class SeriesParallelResult:
    is_series_parallel: bool
    trace: list = field(default_factory=list)

    def __bool__(self) -> bool:
        return self.is_series_parallel


SUPER_SOURCE = "__super_source__"


def is_series_parallel(inst: MarketInstance) -> SeriesParallelResult:
    """Series-parallel test of the graph with a super-source over all sources.

    Parallel edges are merged and internal nodes with one incoming and one
    outgoing edge are contracted until nothing changes.  The network is
    series-parallel iff a single super-source to sink edge remains.
    """
    if inst.mode != GRAPH:
        raise StructureError("series-parallel test needs a graph-mode market")
    sinks = {c.sink for c in inst.commodities}
    if len(sinks) != 1:
        raise StructureError("series-parallel test supports a single sink")
    sink = sinks.pop()
    sources = sorted({c.source for c in inst.commodities}, key=natural_key)
    # live edges: label -> (tail, head)
    live: dict[str, tuple[str, str]] = {e.id: (e.tail, e.head) for e in inst.edges}
    for s in sources:
        live[f"super->{s}"] = (SUPER_SOURCE, s)
    return _reduce(live, SUPER_SOURCE, sink)


def _reduce(live: dict, source: str, sink: str) -> SeriesParallelResult:
    trace: list = []
    changed = True
    while changed:
        changed = False
        by_ends: dict = {}
        for label in sorted(live, key=natural_key):
            by_ends.setdefault(live[label], []).append(label)
        for ends, labels in sorted(by_ends.items()):
            if len(labels) > 1:
                merged = "(" + "|".join(labels) + ")"
                for lab in labels:
                    del live[lab]
                live[merged] = ends
                trace.append({"op": "parallel", "edges": labels, "result": merged})
                changed = True
        if changed:
            continue
        ins: dict = {}
        outs: dict = {}
        for label, (u, v) in live.items():
            outs.setdefault(u, []).append(label)
            ins.setdefault(v, []).append(label)
        for node in sorted(set(ins) | set(outs), key=natural_key):
            if node in (source, sink):
                continue
            if len(ins.get(node, [])) == 1 and len(outs.get(node, [])) == 1:
                a, b = ins[node][0], outs[node][0]
                u, w = live[a][0], live[b][1]
                del live[a], live[b]
                merged = f"({a}+{b})"
                live[merged] = (u, w)
                trace.append({"op": "series", "node": node, "edges": [a, b], "result": merged})
                changed = True
                break
    ok = len(live) == 1 and next(iter(live.values())) == (source, sink)
    return SeriesParallelResult(ok, trace)
