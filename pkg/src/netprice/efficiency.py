"""Welfare accounting, efficiency ratios and the per-class bound formulas."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

from . import demand as demand_mod
from .errors import DegenerateError, DomainError, NetPriceError
from .flow import optimal_magnitude, welfare, welfare_optimum
from .market import BUNDLE, MarketInstance

__all__ = [
    "BOUND_IDS",
    "EfficiencyReport",
    "SweepRow",
    "CSV_COLUMNS",
    "applicable_bounds",
    "efficiency_ratio",
    "optimal_welfare",
    "sweep",
    "theoretical_bound",
    "welfare",
    "write_csv",
    "x_slope_bound_proof",
    "x_slope_nondecreasing",
]

BOUND_IDS = ("uniform", "concave", "mhr", "f_p", "f_ced", "f_exp", "x_slope", "none")
PARAMETRIC = ("f_p", "f_ced", "f_exp")
_ALIASES = {"mpe": "x_slope", "ced": "f_ced", "poly_concave": "f_p", "log_inverse": "f_exp", "exp": "f_exp"}
# Demand kinds that belong to a parametric family, with the family id.
_FAMILY = {"poly_concave": "f_p", "ced": "f_ced", "log_inverse": "f_exp"}

CSV_COLUMNS = ("scenario", "M", "alpha", "x_star", "x_eq", "welfare_opt", "welfare_eq", "eta", "bound", "slack")


def theoretical_bound(tag: str, M: int, alpha: float | None = None) -> float:  # noqa: N803
    """Worst-case ratio of optimal to equilibrium welfare for a demand class.

    ``x_slope`` is the class where x|value'(x)| is non-decreasing; for it the
    stated constant (M/(M-1)) e^M is returned and M = 1 gives inf.
    """
    tag = _ALIASES.get(tag, tag)
    if tag not in BOUND_IDS:
        raise DomainError(f"unknown bound class {tag!r}; expected one of {', '.join(BOUND_IDS)}")
    if isinstance(M, bool) or int(M) != M or M < 0:
        raise DomainError(f"M must be a non-negative integer, got {M!r}")
    M = int(M)
    if tag in PARAMETRIC:
        if alpha is None:
            raise DomainError(f"{tag} needs alpha")
        if not alpha >= 1:
            raise DomainError(f"{tag} needs alpha >= 1, got {alpha!r}")
    if M == 0:
        return 1.0
    if tag == "uniform":
        return 1.0
    if tag == "concave":
        return 1.0 + M / 2.0
    if tag == "mhr":
        return 1.0 + M
    if tag == "f_p":
        return (1.0 + M * alpha) ** (1.0 / alpha)
    if tag == "f_ced":
        return 1.0 + M * alpha / (alpha + 1.0)
    if tag == "f_exp":
        return math.exp(M / alpha)
    if tag == "x_slope":
        return math.inf if M == 1 else M / (M - 1.0) * math.exp(M)
    return math.inf


def x_slope_bound_proof(M: int) -> float:  # noqa: N803
    """The tighter constant (M/(M-1)) e^(M-1) that the argument for the x_slope class reaches."""
    if M == 0:
        return 1.0
    return math.inf if M == 1 else M / (M - 1.0) * math.exp(M - 1.0)


def x_slope_nondecreasing(d, samples: int = 256, tol: float = 1e-9) -> bool:
    """Sampled test that x|value'(x)| never decreases on (0, T)."""
    if d.kind == "uniform":
        return True
    top = d.T
    xs = sorted({top * (i + 0.5) / samples for i in range(samples)} | {b for b in d.breakpoints() if 0 < b < top})
    prev = -math.inf
    for x in xs:
        for side in ("left", "right"):
            v = x * abs(d.derivative(x, side))
            if v < prev - tol * max(1.0, abs(prev)):
                return False
            prev = max(prev, v)
    return True


def applicable_bounds(d, M: int) -> list[tuple[str, float]]:  # noqa: N803
    """Every bound whose class contains ``d``, as (id, value) pairs."""
    tags = demand_mod.classify(d)
    out = []
    for tag in ("uniform", "concave", "mhr"):
        if tag in tags:
            out.append((tag, theoretical_bound(tag, M)))
    family = _FAMILY.get(d.kind)
    if family is not None:
        alpha = getattr(d, "alpha", None)
        if alpha is not None and alpha >= 1:
            out.append((family, theoretical_bound(family, M, alpha)))
    if x_slope_nondecreasing(d):
        out.append(("x_slope", theoretical_bound("x_slope", M)))
    if not out:
        out.append(("none", math.inf))
    return out


@dataclass
class EfficiencyReport:
    welfare_opt: float
    welfare_eq: float
    eta: float
    demand_class: list
    M: int  # noqa: N815
    bound: float
    bound_id: str
    slack: float
    x_star: float
    x_eq: float
    bounds: dict = field(default_factory=dict)
    secondary: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def optimal_welfare(inst: MarketInstance) -> tuple[float, float]:
    """Largest achievable welfare and the magnitude that achieves it."""
    if inst.mode == BUNDLE:
        from . import bundles

        if inst.valuations:
            _, vals, bought, item_flow = bundles.combinatorial_optimum(inst)
            cost = sum(e.cost.cost(item_flow[e.id]) for e in inst.edges)
            return sum(vals[frozenset(s)] * a for s, a in bought.items()) - cost, sum(bought.values())
        x = bundles.optimal_bundle_magnitude(inst)
        alloc = bundles.min_cost_allocation(inst, x)
        return inst.demand.cumulative(x) - alloc.cost, x
    if len(inst.commodities) > 1:
        sol = welfare_optimum(inst)
        return welfare(inst, sol), sol.magnitude
    x, sol = optimal_magnitude(inst)
    return welfare(inst, sol), x


def efficiency_ratio(inst: MarketInstance, eq, tol: float = 1e-9) -> EfficiencyReport:
    """Optimal over equilibrium welfare, with the tightest bound that applies."""
    w_opt, x_star = optimal_welfare(inst)
    w_eq = eq.welfare
    if not w_eq > tol:
        raise DegenerateError(f"equilibrium welfare {w_eq!r} is not positive; efficiency undefined")
    eta = w_opt / w_eq
    M = eq.M
    if len(inst.commodities) == 1:
        d = inst.demand
        tags = demand_mod.classify(d).sorted()
        options = applicable_bounds(d, M)
    else:
        tags = []
        options = [("none", math.inf)]
    bound_id, bound = min(options, key=lambda kv: kv[1])
    secondary = {}
    if any(b == "x_slope" for b, _ in options):
        secondary["x_slope_proof"] = x_slope_bound_proof(M)
    return EfficiencyReport(
        welfare_opt=w_opt,
        welfare_eq=w_eq,
        eta=eta,
        demand_class=tags,
        M=M,
        bound=bound,
        bound_id=bound_id,
        slack=bound - eta,
        x_star=x_star,
        x_eq=eq.magnitude,
        bounds=dict(options),
        secondary=secondary,
    )


# -- sweeps -----------------------------------------------------------------------

@dataclass
class SweepRow:
    scenario: str
    M: int  # noqa: N815
    alpha: float | None
    x_star: float = math.nan
    x_eq: float = math.nan
    welfare_opt: float = math.nan
    welfare_eq: float = math.nan
    eta: float = math.nan
    bound: float = math.nan
    slack: float = math.nan
    verified: bool | None = None
    error: str | None = None

    def csv_row(self) -> list:
        return [_fmt(getattr(self, c)) for c in CSV_COLUMNS]


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def sweep(scenario: str, Ms: Iterable[int], alpha: float | None = None, tol: float = 1e-9,  # noqa: N803
          verify: bool = False, params: dict | None = None) -> list[SweepRow]:
    """Solve a scenario family for each M; failures become row-level errors."""
    from . import scenarios
    from .equilibrium import solve

    rows = []
    for M in sorted(Ms):
        p = dict(params or {})
        p["M"] = M
        if alpha is not None:
            p["alpha"] = alpha
        row = SweepRow(scenario, M, alpha)
        try:
            inst = scenarios.build(scenario, p)
            eq = solve(inst, tol)
            rep = efficiency_ratio(inst, eq)
            row.x_star, row.x_eq = rep.x_star, rep.x_eq
            row.welfare_opt, row.welfare_eq = rep.welfare_opt, rep.welfare_eq
            row.eta, row.bound, row.slack = rep.eta, rep.bound, rep.slack
            if verify:
                from .verify import check_all

                row.verified = check_all(inst, eq.prices, eq.flow).passed
        except (NetPriceError, KeyError, ValueError) as exc:
            row.error = f"{type(exc).__name__}: {exc}"
        rows.append(row)
    return rows


def write_csv(rows: Sequence[SweepRow], out=None) -> str:
    """CSV text with the standard columns plus verified and error; written to ``out`` if given."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(list(CSV_COLUMNS) + ["verified", "error"])
    for r in rows:
        w.writerow(r.csv_row() + [_fmt(r.verified), r.error or ""])
    text = buf.getvalue()
    if out is not None:
        if hasattr(out, "write"):
            out.write(text)
        else:
            with open(out, "w", newline="") as fh:
                fh.write(text)
    return text
