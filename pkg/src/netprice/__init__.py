"""Pricing equilibria, welfare optima and efficiency on networks and bundle markets."""

from .errors import (
    DegenerateError,
    DomainError,
    InapplicableError,
    InfeasibleError,
    NetPriceError,
    NoEquilibriumError,
    SolverError,
    StructureError,
    ValidationError,
)
from .market import Commodity, Edge, FlowSolution, MarketInstance, PathFlow
from .equilibrium import EquilibriumSolution, find_equilibrium, solve
from .efficiency import efficiency_ratio, theoretical_bound
from .verify import VerificationReport, check_all

__all__ = [
    "Commodity",
    "DegenerateError",
    "DomainError",
    "Edge",
    "EquilibriumSolution",
    "FlowSolution",
    "InapplicableError",
    "InfeasibleError",
    "MarketInstance",
    "NetPriceError",
    "NoEquilibriumError",
    "PathFlow",
    "SolverError",
    "StructureError",
    "ValidationError",
    "VerificationReport",
    "check_all",
    "efficiency_ratio",
    "find_equilibrium",
    "solve",
    "theoretical_bound",
]
