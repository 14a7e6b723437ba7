"""Canonical JSON for instances, solutions and reports."""

from __future__ import annotations

import json
import math
from pathlib import Path
from typing import Any, Mapping

from .errors import ValidationError
from .market import FlowSolution, MarketInstance, PathFlow


def _clean(obj: Any) -> Any:
    """Plain JSON types; non-finite floats become the strings "inf", "-inf" and "nan"."""
    if isinstance(obj, float):
        if math.isnan(obj):
            return "nan"
        if math.isinf(obj):
            return "inf" if obj > 0 else "-inf"
        return obj
    if isinstance(obj, Mapping):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (set, frozenset)):
        return sorted(_clean(v) for v in obj)
    if hasattr(obj, "item") and callable(obj.item):  # numpy scalars
        return _clean(obj.item())
    return obj


def dumps(obj: Any) -> str:
    """Sorted keys, two-space indent, shortest round-trip floats, trailing newline."""
    return json.dumps(_clean(obj), sort_keys=True, indent=2, allow_nan=False) + "\n"


def read_json(path: str | Path) -> Any:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ValidationError(f"cannot read file: {exc.strerror}", str(path)) from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}", str(path)) from exc


def load_instance(path: str | Path) -> MarketInstance:
    return MarketInstance.from_dict(read_json(path))


def instance_json(inst: MarketInstance) -> str:
    return dumps(inst.to_dict())


def _number(v: Any, path: str) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
        raise ValidationError("must be a finite number", path)
    return float(v)


def solution_from_dict(inst: MarketInstance, doc: Any) -> tuple[dict, FlowSolution]:
    """Prices and flow from a solution document, checked against the instance."""
    if not isinstance(doc, Mapping):
        raise ValidationError("solution must be a JSON object")
    raw_prices = doc.get("prices")
    if not isinstance(raw_prices, Mapping):
        raise ValidationError("must be an object mapping edge ids to prices", "prices")
    known = set(inst.edge_ids)
    prices = {}
    for eid, v in raw_prices.items():
        if eid not in known:
            raise ValidationError("unknown edge id", f"prices.{eid}")
        prices[eid] = _number(v, f"prices.{eid}")
    for eid in inst.edge_ids:
        if eid not in prices:
            raise ValidationError("missing price", f"prices.{eid}")
    flow = doc.get("flow", {})
    if not isinstance(flow, Mapping):
        raise ValidationError("must be an object", "flow")
    raw_paths = flow.get("paths", [])
    if not isinstance(raw_paths, list):
        raise ValidationError("must be a list", "flow.paths")
    paths = []
    for i, raw in enumerate(raw_paths):
        where = f"flow.paths[{i}]"
        if not isinstance(raw, Mapping):
            raise ValidationError("must be an object", where)
        edges = raw.get("edges")
        if not isinstance(edges, list) or not all(isinstance(e, str) for e in edges):
            raise ValidationError("must be a list of edge ids", f"{where}.edges")
        for e in edges:
            if e not in known:
                raise ValidationError(f"unknown edge id {e!r}", f"{where}.edges")
        amount = _number(raw.get("amount"), f"{where}.amount")
        if amount < 0:
            raise ValidationError("must be >= 0", f"{where}.amount")
        k = raw.get("commodity", 0)
        if isinstance(k, bool) or not isinstance(k, int) or not 0 <= k < len(inst.commodities):
            raise ValidationError("must be a commodity index", f"{where}.commodity")
        paths.append(PathFlow(tuple(edges), amount, k))
    mags = [0.0] * len(inst.commodities)
    for p in paths:
        mags[p.commodity] += p.amount
    if "x" in doc and len(inst.commodities) == 1:
        x = _number(doc["x"], "x")
        if abs(x - mags[0]) > 1e-9 * max(1.0, x):
            raise ValidationError(f"x={x!r} disagrees with path total {mags[0]!r}", "x")
    edge_flow = {e: 0.0 for e in inst.edge_ids}
    for p in paths:
        for e in p.edges:
            edge_flow[e] += p.amount
    sol = FlowSolution(edge_flow=edge_flow, paths=paths, magnitude=sum(mags),
                       cost=inst.total_cost(edge_flow), commodity_magnitudes=tuple(mags))
    return prices, sol


def load_solution(inst: MarketInstance, path: str | Path) -> tuple[dict, FlowSolution]:
    return solution_from_dict(inst, read_json(path))
