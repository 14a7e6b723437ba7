"""Command-line front end.

Exit codes: 0 success, 1 failed verification, 2 malformed input (the
message names the offending field), 3 solver failure (with residuals when
known).
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path
from typing import Sequence

from . import demand as demand_mod
from . import scenarios
from .errors import DomainError, NetPriceError, SolverError, ValidationError
from .jsonio import dumps, instance_json, load_instance, load_solution

EXIT_OK = 0
EXIT_REJECTED = 1
EXIT_SCHEMA = 2
EXIT_SOLVER = 3


class UsageError(Exception):
    """Bad command-line values that argparse cannot check itself."""


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _scalar(text: str):
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    return text


def _params(pairs: Sequence[str] | None) -> dict:
    out = {}
    for pair in pairs or []:
        key, sep, value = pair.partition("=")
        if not sep or not key:
            raise UsageError(f"--param expects key=value, got {pair!r}")
        out[key] = _scalar(value)
    return out


def _m_range(text: str) -> list[int]:
    lo, sep, hi = text.partition("..")
    try:
        if not sep:
            return [int(text)]
        a, b = int(lo), int(hi)
    except ValueError:
        raise UsageError(f"--m expects A..B with integers, got {text!r}") from None
    if b < a:
        raise UsageError(f"--m range {text!r} is empty")
    return list(range(a, b + 1))


# -- subcommands -----------------------------------------------------------------

def cmd_solve(args) -> int:
    from .equilibrium import solve

    inst = load_instance(args.file)
    eq = solve(inst, args.tol)
    _emit(dumps(eq.to_dict()), args.out)
    return EXIT_OK


def cmd_optimum(args) -> int:
    inst = load_instance(args.file)
    doc = _optimum_doc(inst)
    _emit(dumps(doc), args.out)
    return EXIT_OK


def _optimum_doc(inst) -> dict:
    from .efficiency import optimal_welfare
    from .flow import optimal_magnitude, welfare_optimum

    w, x = optimal_welfare(inst)
    doc = {"x_star": x, "welfare": w}
    if inst.mode == "graph":
        if len(inst.commodities) == 1:
            _, sol = optimal_magnitude(inst)
        else:
            sol = welfare_optimum(inst)
        doc["flow"] = {
            "paths": [{"edges": list(p.edges), "amount": p.amount, "commodity": p.commodity} for p in sol.paths],
            "edge_flow": sol.edge_flow,
        }
        doc["marginal_minus"] = sol.marginal_minus
        doc["marginal_plus"] = sol.marginal_plus
        doc["cost"] = sol.cost
    return doc


def cmd_verify(args) -> int:
    from .verify import check_all

    inst = load_instance(args.file)
    prices, flow = load_solution(inst, args.solution)
    if inst.valuations:
        from .bundles import check_combinatorial

        rep = check_combinatorial(inst, prices, flow, tol=args.tol)
        _emit(dumps(rep), args.out)
        return EXIT_OK if rep["passed"] else EXIT_REJECTED
    rep = check_all(inst, prices, flow, grid=args.grid, eps=args.eps, tol=args.tol)
    _emit(dumps(rep.to_dict()), args.out)
    return EXIT_OK if rep.passed else EXIT_REJECTED


def cmd_efficiency(args) -> int:
    from .efficiency import efficiency_ratio
    from .equilibrium import solve

    inst = load_instance(args.file)
    eq = solve(inst, args.tol)
    _emit(dumps(efficiency_ratio(inst, eq).to_dict()), args.out)
    return EXIT_OK


def cmd_sweep(args) -> int:
    from .efficiency import sweep, write_csv

    scenarios.get(args.scenario)
    rows = sweep(args.scenario, _m_range(args.m), args.alpha, args.tol, verify=args.verify,
                 params=_params(args.param))
    text = write_csv(rows)
    _emit(text, args.out)
    return EXIT_OK


def cmd_scenario(args) -> int:
    if args.action == "list":
        doc = [
            {"id": s.id, "defaults": dict(s.defaults), "description": s.description, "stub": s.stub}
            for s in scenarios.REGISTRY.values()
        ]
        _emit(dumps(doc), args.out)
        return EXIT_OK
    if not args.id:
        raise UsageError("scenario emit needs an id")
    try:
        inst = scenarios.build(args.id, _params(args.param))
    except (DomainError, TypeError) as exc:
        raise UsageError(str(exc)) from None
    _emit(instance_json(inst), args.out)
    return EXIT_OK


def cmd_classify(args) -> int:
    from .efficiency import x_slope_nondecreasing

    inst = load_instance(args.file)
    out = []
    for k, c in enumerate(inst.commodities):
        cls = demand_mod.classify(c.demand)
        out.append({
            "commodity": k,
            "kind": c.demand.kind,
            "tags": cls.sorted(),
            "numeric": cls.numeric,
            "warning": cls.warning,
            "x_slope_nondecreasing": x_slope_nondecreasing(c.demand),
        })
    _emit(dumps({"commodities": out}), args.out)
    return EXIT_OK


# -- parser ----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="netprice", description="Pricing equilibria on networks and bundle markets.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, tol=1e-9):
        sp.add_argument("--out", help="write output here instead of stdout")
        sp.add_argument("--tol", type=float, default=tol, help="numerical tolerance")

    sp = sub.add_parser("solve", help="compute an equilibrium")
    sp.add_argument("file")
    common(sp)
    sp.set_defaults(func=cmd_solve)

    sp = sub.add_parser("optimum", help="welfare-optimal flow")
    sp.add_argument("file")
    common(sp)
    sp.set_defaults(func=cmd_optimum)

    sp = sub.add_parser("verify", help="check a candidate solution")
    sp.add_argument("file")
    sp.add_argument("--solution", required=True)
    sp.add_argument("--grid", type=int, default=1000, help="deviation prices scanned per seller")
    sp.add_argument("--eps", type=float, default=None, help="flow shifted in the local-dominance check")
    common(sp, tol=1e-6)
    sp.set_defaults(func=cmd_verify)

    sp = sub.add_parser("efficiency", help="equilibrium efficiency and its bound")
    sp.add_argument("file")
    common(sp)
    sp.set_defaults(func=cmd_efficiency)

    sp = sub.add_parser("sweep", help="efficiency across M for a scenario family")
    sp.add_argument("--scenario", required=True)
    sp.add_argument("--m", required=True, help="range A..B")
    sp.add_argument("--alpha", type=float, default=None)
    sp.add_argument("--param", action="append", help="extra scenario parameter key=value")
    sp.add_argument("--verify", action="store_true", help="also run the verifier on each row")
    common(sp)
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("scenario", help="list or emit built-in scenarios")
    sp.add_argument("action", choices=["list", "emit"])
    sp.add_argument("id", nargs="?")
    sp.add_argument("--param", action="append", help="scenario parameter key=value")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_scenario)

    sp = sub.add_parser("classify", help="demand classes of an instance")
    sp.add_argument("file")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_classify)
    return p


def run(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"error: invalid input: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    except KeyError as exc:
        print(f"error: {exc.args[0] if exc.args else exc}", file=sys.stderr)
        return EXIT_SCHEMA
    except SolverError as exc:
        detail = {"error": type(exc).__name__, "message": str(exc), "residual": exc.residual,
                  "diagnostics": exc.diagnostics}
        print(f"error: solver failure: {exc}", file=sys.stderr)
        sys.stderr.write(dumps(detail))
        return EXIT_SOLVER
    except NetPriceError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        sys.stderr.write(dumps({"error": type(exc).__name__, "message": str(exc)}))
        return EXIT_SOLVER


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
