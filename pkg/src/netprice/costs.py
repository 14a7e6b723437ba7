"""Convex production costs for edges and items.

Every cost is convex and non-decreasing with C(0) = 0.  ``marginal(x, side)``
returns the one-sided derivative; at smooth points both sides agree.  Hard
capacities are the limiting cost "0 up to cap, then infinite" and are
exposed through ``capacity`` so flow routines can treat them as bounds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any, ClassVar, Mapping

from .errors import DomainError, ValidationError

LEFT = "left"
RIGHT = "right"

# Points within this relative distance of a breakpoint count as the breakpoint.
_SNAP = 1e-12


@dataclass(frozen=True)
class CostFunction:
    kind: ClassVar[str] = ""
    smooth: ClassVar[bool] = True
    # True when C is piecewise linear, which the exact flow engine handles.
    piecewise_linear: ClassVar[bool] = False

    @property
    def capacity(self) -> float:
        return math.inf

    def cost(self, x: float) -> float:
        raise NotImplementedError

    def marginal(self, x: float, side: str = RIGHT) -> float:
        raise NotImplementedError

    def curvature(self, x: float) -> float:
        """Second derivative, used as Newton weight.  Zero for linear pieces."""
        return 0.0

    def kinks(self) -> tuple[float, ...]:
        return ()

    def zero_marginal(self) -> float:
        """Right marginal at 0, the price of an unused edge."""
        return self.marginal(0.0, RIGHT)

    def next_kink(self, x: float) -> float:
        """Smallest breakpoint (capacity included) strictly above x, else inf."""
        tol = _SNAP * max(1.0, abs(x))
        for b in self.kinks():
            if b > x + tol:
                return b
        return math.inf

    def prev_kink(self, x: float) -> float:
        """Largest breakpoint strictly below x, else 0."""
        tol = _SNAP * max(1.0, abs(x))
        out = 0.0
        for b in self.kinks():
            if b < x - tol:
                out = b
        return out

    def to_dict(self) -> dict[str, Any]:
        raise NotImplementedError


def _check(x: float) -> float:
    if x < -1e-12:
        raise DomainError(f"negative flow {x!r}")
    return max(x, 0.0)


@dataclass(frozen=True)
class Zero(CostFunction):
    kind: ClassVar[str] = "zero"
    piecewise_linear: ClassVar[bool] = True

    def cost(self, x):
        _check(x)
        return 0.0

    def marginal(self, x, side=RIGHT):
        return 0.0

    def to_dict(self):
        return {"kind": self.kind}


@dataclass(frozen=True)
class Linear(CostFunction):
    kind: ClassVar[str] = "linear"
    piecewise_linear: ClassVar[bool] = True
    a: float

    def cost(self, x):
        return self.a * _check(x)

    def marginal(self, x, side=RIGHT):
        return self.a

    def to_dict(self):
        return {"kind": self.kind, "a": self.a}


@dataclass(frozen=True)
class Power(CostFunction):
    """C(x) = c * x**k with k >= 1."""

    kind: ClassVar[str] = "power"
    c: float
    k: float

    @property
    def piecewise_linear(self) -> bool:  # type: ignore[override]
        return self.k == 1.0 or self.c == 0.0

    def cost(self, x):
        x = _check(x)
        return self.c * x ** self.k if x > 0 else 0.0

    def marginal(self, x, side=RIGHT):
        x = max(x, 0.0)
        if self.k == 1.0:
            return self.c
        return self.c * self.k * x ** (self.k - 1.0) if x > 0 else 0.0

    def curvature(self, x):
        k = self.k
        if k == 1.0:
            return 0.0
        if k == 2.0:
            return 2.0 * self.c
        x = max(x, 1e-9)
        return self.c * k * (k - 1.0) * x ** (k - 2.0)

    def to_dict(self):
        return {"kind": self.kind, "c": self.c, "k": self.k}


@dataclass(frozen=True)
class PiecewiseConvex(CostFunction):
    """Piecewise linear cost: slope ``slopes[i]`` between consecutive breaks."""

    kind: ClassVar[str] = "pwl_convex"
    smooth: ClassVar[bool] = False
    piecewise_linear: ClassVar[bool] = True
    breaks: tuple
    slopes: tuple

    def _segment(self, x: float, side: str) -> int:
        for i, b in enumerate(self.breaks):
            near = abs(x - b) <= _SNAP * max(1.0, abs(b))
            if near:
                return i if side == LEFT else i + 1
            if x < b:
                return i
        return len(self.breaks)

    def cost(self, x):
        x = _check(x)
        total, prev = 0.0, 0.0
        for b, s in zip(self.breaks, self.slopes):
            if x <= b:
                return total + s * (x - prev)
            total += s * (b - prev)
            prev = b
        return total + self.slopes[-1] * (x - prev)

    def marginal(self, x, side=RIGHT):
        if x <= 0.0:
            return self.slopes[0]
        return self.slopes[self._segment(x, side)]

    def kinks(self):
        return self.breaks

    def to_dict(self):
        return {"kind": self.kind, "breaks": list(self.breaks), "slopes": list(self.slopes)}


@dataclass(frozen=True)
class Capacity(CostFunction):
    """Free up to ``cap``, impossible beyond."""

    kind: ClassVar[str] = "capacity"
    smooth: ClassVar[bool] = False
    piecewise_linear: ClassVar[bool] = True
    cap: float

    @property
    def capacity(self) -> float:
        return self.cap

    def cost(self, x):
        x = _check(x)
        return 0.0 if x <= self.cap * (1 + _SNAP) else math.inf

    def marginal(self, x, side=RIGHT):
        at_cap = x >= self.cap * (1 - _SNAP)
        if side == RIGHT and at_cap:
            return math.inf
        if side == LEFT and x > self.cap * (1 + _SNAP):
            return math.inf
        return 0.0

    def kinks(self):
        return (self.cap,)

    def to_dict(self):
        return {"kind": self.kind, "cap": self.cap}


def zero() -> Zero:
    return Zero()


def linear(a: float) -> Linear:
    return make_cost({"kind": "linear", "a": a})


def power(c: float, k: float) -> Power:
    return make_cost({"kind": "power", "c": c, "k": k})


def pwl_convex(breaks, slopes) -> PiecewiseConvex:
    return make_cost({"kind": "pwl_convex", "breaks": list(breaks), "slopes": list(slopes)})


def capacity(cap: float) -> Capacity:
    return make_cost({"kind": "capacity", "cap": cap})


def _number(value: Any, path: str, positive: bool = False) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ValidationError("must be a number", path)
    value = float(value)
    if not math.isfinite(value) or value < 0 or (positive and value == 0):
        raise ValidationError(f"must be finite and {'> 0' if positive else '>= 0'}, got {value!r}", path)
    return value


def make_cost(spec: Mapping[str, Any], path: str = "cost") -> CostFunction:
    """Build a cost function from its JSON form, validating every field."""
    if not isinstance(spec, Mapping):
        raise ValidationError("must be an object", path)
    kind = spec.get("kind")

    def need(name: str) -> Any:
        if name not in spec:
            raise ValidationError("missing field", f"{path}.{name}")
        return spec[name]

    if kind == "zero":
        return Zero()
    if kind == "linear":
        return Linear(_number(need("a"), f"{path}.a"))
    if kind == "power":
        c = _number(need("c"), f"{path}.c")
        k = _number(need("k"), f"{path}.k")
        if k < 1.0:
            raise ValidationError(f"must be >= 1, got {k!r}", f"{path}.k")
        return Power(c, k)
    if kind == "pwl_convex":
        breaks = need("breaks")
        slopes = need("slopes")
        if not isinstance(breaks, list) or not isinstance(slopes, list):
            raise ValidationError("breaks and slopes must be lists", path)
        if len(slopes) != len(breaks) + 1:
            raise ValidationError("need exactly one more slope than breaks", f"{path}.slopes")
        b = [_number(v, f"{path}.breaks[{i}]", positive=True) for i, v in enumerate(breaks)]
        s = [_number(v, f"{path}.slopes[{i}]") for i, v in enumerate(slopes)]
        for i in range(1, len(b)):
            if b[i] <= b[i - 1]:
                raise ValidationError("breaks must be strictly increasing", f"{path}.breaks[{i}]")
        for i in range(1, len(s)):
            if s[i] < s[i - 1]:
                raise ValidationError("slopes must be non-decreasing (convexity)", f"{path}.slopes[{i}]")
        return PiecewiseConvex(tuple(b), tuple(s))
    if kind == "capacity":
        return Capacity(_number(need("cap"), f"{path}.cap", positive=True))
    raise ValidationError(f"unknown kind {kind!r}", f"{path}.kind")
