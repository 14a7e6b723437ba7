"""Exception hierarchy shared by every module."""


class NetPriceError(Exception):
    """Base class for all library errors."""


class DomainError(NetPriceError, ValueError):
    """An argument lies outside the domain of a function."""


class ValidationError(NetPriceError, ValueError):
    """Malformed instance data.  ``path`` points at the offending field."""

    def __init__(self, message: str, path: str = ""):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


class StructureError(NetPriceError):
    """The network or bundle family does not support the requested analysis."""


class InfeasibleError(NetPriceError):
    """No feasible flow of the requested magnitude exists."""


class SolverError(NetPriceError):
    """A numerical routine failed to converge."""

    def __init__(self, message: str, residual: float | None = None, diagnostics: dict | None = None):
        self.residual = residual
        self.diagnostics = dict(diagnostics or {})
        super().__init__(message)


class NoEquilibriumError(SolverError):
    """The equilibrium search found neither a corner nor a sign change."""


class NegativeSlackError(NetPriceError):
    """Demand value is below the marginal cost of the flow being priced."""


class InapplicableError(NetPriceError):
    """A special-regime construction does not apply to the given instance."""


class PriceRangeError(NetPriceError):
    """A target price lies outside the admissible marginal interval."""


class InconsistencyError(NetPriceError):
    """A residual graph contains a negative cycle where none may exist."""


class DegenerateError(NetPriceError):
    """A ratio or normalization is undefined because its denominator vanishes."""
