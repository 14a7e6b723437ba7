"""Inverse demand functions.

A demand function maps a buyer mass ``x`` in ``[0, T]`` to the price
``value(x)`` at which exactly ``x`` buyers are willing to buy.  Every kind
provides closed-form values, one-sided derivatives, the cumulative value
``cumulative(x)`` (integral of value from 0 to x) and the inverse
``quantity(price)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, ClassVar, Iterable, Mapping

from scipy import special

from .errors import DomainError, ValidationError

LEFT = "left"
RIGHT = "right"

TAG_ORDER = ("uniform", "concave", "mhr", "mpe")

# Relative slack when checking that x lies in [0, T].
_DOMAIN_SLACK = 1e-12


def _check_side(side: str) -> None:
    if side not in (LEFT, RIGHT):
        raise DomainError(f"side must be 'left' or 'right', got {side!r}")


def _positive(name: str, value: float, path: str, allow_zero: bool = False) -> float:
    value = float(value)
    if not math.isfinite(value) or value < 0 or (value == 0 and not allow_zero):
        bound = ">= 0" if allow_zero else "> 0"
        raise ValidationError(f"must be finite and {bound}, got {value!r}", f"{path}.{name}")
    return value


@dataclass(frozen=True)
class DemandClass:
    """Result of :func:`classify`: tags plus provenance flags."""

    tags: frozenset
    numeric: bool = False
    warning: str | None = None

    def __contains__(self, tag: object) -> bool:
        return tag in self.tags

    def sorted(self) -> list[str]:
        return [t for t in TAG_ORDER if t in self.tags]


def _chain(tags: Iterable[str]) -> frozenset:
    """Close a tag set upward along uniform < concave < mhr < mpe."""
    out = set(tags)
    for lower, upper in zip(TAG_ORDER, TAG_ORDER[1:]):
        if lower in out:
            out.add(upper)
    return frozenset(out)


@dataclass(frozen=True)
class DemandFunction:
    """Base class.  Subclasses set ``kind`` and implement the ``_``-methods."""

    kind: ClassVar[str] = ""

    @property
    def T(self) -> float:  # noqa: N802 - population bound is conventionally T
        raise NotImplementedError

    # -- domain handling -------------------------------------------------
    def _clip(self, x: float) -> float:
        x = float(x)
        T = self.T
        slack = _DOMAIN_SLACK * max(T, 1.0)
        if not (-slack <= x <= T + slack):
            raise DomainError(f"x={x!r} outside [0, {T!r}]")
        return min(max(x, 0.0), T)

    # -- public API ------------------------------------------------------
    def value(self, x: float) -> float:
        return self._value(self._clip(x))

    def derivative(self, x: float, side: str = RIGHT) -> float:
        _check_side(side)
        x = self._clip(x)
        if side == LEFT and x <= 0.0:
            raise DomainError("left derivative undefined at x=0")
        return self._derivative(x, side)

    def cumulative(self, x: float) -> float:
        return self._cumulative(self._clip(x))

    def quantity(self, price: float) -> float:
        """Largest buyer mass willing to pay ``price``: sup{x : value(x) >= price}.

        Returns 0 when even the first buyer values the good below ``price``.
        """
        price = float(price)
        if price <= self._value(self.T):
            return self.T
        if price > self._value(0.0):
            return 0.0
        return min(max(self._quantity(price), 0.0), self.T)

    def mpe_factor(self, x: float, side: str = RIGHT) -> float:
        """Price elasticity factor x*|value'(x)|/value(x)."""
        x = self._clip(x)
        v = self._value(x)
        if v <= 0:
            raise DomainError(f"elasticity undefined where value is 0 (x={x!r})")
        if x == 0.0:
            return 0.0
        if side == RIGHT and x >= self.T:
            side = LEFT
        return x * abs(self._derivative(x, side)) / v

    def hazard(self, x: float, side: str = RIGHT) -> float:
        """Hazard rate |value'(x)|/value(x)."""
        x = self._clip(x)
        v = self._value(x)
        if v <= 0:
            raise DomainError(f"hazard rate undefined where value is 0 (x={x!r})")
        if side == LEFT and x == 0.0:
            side = RIGHT
        if side == RIGHT and x >= self.T:
            side = LEFT
        return abs(self._derivative(x, side)) / v

    def breakpoints(self) -> tuple[float, ...]:
        """Interior points of (0, T) where the derivative may jump."""
        return ()

    def to_dict(self) -> dict[str, Any]:
        raise NotImplementedError

    # -- per kind --------------------------------------------------------
    def _value(self, x: float) -> float:
        raise NotImplementedError

    def _derivative(self, x: float, side: str) -> float:
        raise NotImplementedError

    def _cumulative(self, x: float) -> float:
        raise NotImplementedError

    def _quantity(self, price: float) -> float:
        """Inverse on the strictly decreasing part; bisection by default."""
        lo, hi = 0.0, self.T
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if self._value(mid) >= price:
                lo = mid
            else:
                hi = mid
            if hi - lo <= 1e-15 * max(hi, 1.0):
                break
        return lo

    def _tags(self) -> DemandClass:
        return DemandClass(frozenset(), warning="no analytic classification")


@dataclass(frozen=True)
class Uniform(DemandFunction):
    """Every buyer values the good at ``level``."""

    kind: ClassVar[str] = "uniform"
    level: float
    population: float

    @property
    def T(self) -> float:  # noqa: N802
        return self.population

    def _value(self, x):
        return self.level

    def _derivative(self, x, side):
        return 0.0

    def _cumulative(self, x):
        return self.level * x

    def _quantity(self, price):
        return self.population if price <= self.level else 0.0

    def _tags(self):
        return DemandClass(_chain(["uniform"]))

    def to_dict(self):
        return {"kind": self.kind, "value": self.level, "T": self.population}


@dataclass(frozen=True)
class Affine(DemandFunction):
    """value(x) = intercept - slope*x, clipped at 0."""

    kind: ClassVar[str] = "affine"
    intercept: float
    slope: float
    population: float | None = None

    @property
    def root(self) -> float:
        return self.intercept / self.slope

    @property
    def T(self) -> float:  # noqa: N802
        return self.root if self.population is None else self.population

    def _value(self, x):
        return max(self.intercept - self.slope * x, 0.0)

    def _derivative(self, x, side):
        root = self.root
        if x < root or (x == root and side == LEFT):
            return -self.slope
        return 0.0

    def _cumulative(self, x):
        y = min(x, self.root)
        return self.intercept * y - 0.5 * self.slope * y * y

    def _quantity(self, price):
        return (self.intercept - price) / self.slope

    def breakpoints(self):
        return (self.root,) if self.root < self.T else ()

    def _tags(self):
        return DemandClass(_chain(["concave"]))

    def to_dict(self):
        out = {"kind": self.kind, "a": self.intercept, "b": self.slope}
        if self.population is not None:
            out["T"] = self.population
        return out


@dataclass(frozen=True)
class PolyConcave(DemandFunction):
    """value(x) = scale*(1 - (x/root)^alpha)."""

    kind: ClassVar[str] = "poly_concave"
    scale: float
    root: float
    alpha: float

    @property
    def T(self) -> float:  # noqa: N802
        return self.root

    def _value(self, x):
        return self.scale * (1.0 - (x / self.root) ** self.alpha)

    def _derivative(self, x, side):
        a = self.alpha
        return -self.scale * a * x ** (a - 1.0) / self.root ** a

    def _cumulative(self, x):
        a = self.alpha
        return self.scale * (x - x ** (a + 1.0) / ((a + 1.0) * self.root ** a))

    def _quantity(self, price):
        return self.root * (1.0 - price / self.scale) ** (1.0 / self.alpha)

    def _tags(self):
        return DemandClass(_chain(["concave"]))

    def to_dict(self):
        return {"kind": self.kind, "value": self.scale, "a": self.root, "alpha": self.alpha}


@dataclass(frozen=True)
class CED(DemandFunction):
    """value(x) = scale*(1 - x/root)^alpha."""

    kind: ClassVar[str] = "ced"
    scale: float
    root: float
    alpha: float

    @property
    def T(self) -> float:  # noqa: N802
        return self.root

    def _value(self, x):
        return self.scale * (1.0 - x / self.root) ** self.alpha

    def _derivative(self, x, side):
        a = self.alpha
        base = 1.0 - x / self.root
        if a == 1.0:
            return -self.scale / self.root
        return -self.scale * a / self.root * base ** (a - 1.0)

    def _cumulative(self, x):
        a = self.alpha
        base = 1.0 - x / self.root
        return self.scale * self.root / (a + 1.0) * (1.0 - base ** (a + 1.0))

    def _quantity(self, price):
        return self.root * (1.0 - (price / self.scale) ** (1.0 / self.alpha))

    def _tags(self):
        base = ["concave"] if self.alpha == 1.0 else ["mhr"]
        return DemandClass(_chain(base))

    def to_dict(self):
        return {"kind": self.kind, "value": self.scale, "a": self.root, "alpha": self.alpha}


@dataclass(frozen=True)
class Exponential(DemandFunction):
    """value(x) = scale*exp(-rate*max(x, flat_until))."""

    kind: ClassVar[str] = "exponential"
    scale: float
    rate: float
    population: float
    flat_until: float = 0.0

    @property
    def T(self) -> float:  # noqa: N802
        return self.population

    def _value(self, x):
        return self.scale * math.exp(-self.rate * max(x, self.flat_until))

    def _derivative(self, x, side):
        xt = self.flat_until
        if x < xt or (x == xt and side == LEFT):
            return 0.0
        return -self.rate * self._value(x)

    def _cumulative(self, x):
        xt, k = self.flat_until, self.rate
        flat = self.scale * math.exp(-k * xt) * min(x, xt)
        if x <= xt:
            return flat
        # scale/k * (e^{-k xt} - e^{-k x}) computed without cancellation
        tail = -self.scale / k * math.exp(-k * xt) * math.expm1(-k * (x - xt))
        return flat + tail

    def _quantity(self, price):
        return max(math.log(self.scale / price) / self.rate, self.flat_until)

    def breakpoints(self):
        return (self.flat_until,) if 0.0 < self.flat_until < self.T else ()

    def _tags(self):
        return DemandClass(_chain(["mhr"]))

    def to_dict(self):
        out = {"kind": self.kind, "value": self.scale, "k": self.rate, "T": self.population}
        if self.flat_until:
            out["x_trunc"] = self.flat_until
        return out


@dataclass(frozen=True)
class PowerElastic(DemandFunction):
    """value(x) = scale*max(x, eps)^(-1/r): constant elasticity, flat below eps."""

    kind: ClassVar[str] = "power_elastic"
    scale: float
    r: float
    population: float
    eps: float

    @property
    def T(self) -> float:  # noqa: N802
        return self.population

    def _value(self, x):
        return self.scale * max(x, self.eps) ** (-1.0 / self.r)

    def _derivative(self, x, side):
        if x < self.eps or (x == self.eps and side == LEFT):
            return 0.0
        return -self.scale / self.r * x ** (-1.0 / self.r - 1.0)

    def _cumulative(self, x):
        eps, r, a = self.eps, self.r, self.scale
        flat = a * eps ** (-1.0 / r) * min(x, eps)
        if x <= eps:
            return flat
        if r == 1.0:
            return flat + a * math.log(x / eps)
        q = 1.0 - 1.0 / r
        return flat + a * (x ** q - eps ** q) / q

    def _quantity(self, price):
        return max((self.scale / price) ** self.r, self.eps)

    def breakpoints(self):
        return (self.eps,) if 0.0 < self.eps < self.T else ()

    def _tags(self):
        return DemandClass(frozenset())

    def to_dict(self):
        return {"kind": self.kind, "a": self.scale, "r": self.r, "T": self.population, "eps": self.eps}


@dataclass(frozen=True)
class LogInverse(DemandFunction):
    """value(x) = ln(root/max(x, eps))^(1/alpha) on [0, root]."""

    kind: ClassVar[str] = "log_inverse"
    root: float
    alpha: float
    eps: float

    @property
    def T(self) -> float:  # noqa: N802
        return self.root

    def _value(self, x):
        x = max(x, self.eps)
        if x >= self.root:
            return 0.0
        return math.log(self.root / x) ** (1.0 / self.alpha)

    def _derivative(self, x, side):
        if x < self.eps or (x == self.eps and side == LEFT):
            return 0.0
        u = math.log(self.root / x)
        if u <= 0.0:
            return -math.inf if self.alpha > 1.0 else -1.0 / x
        return -(u ** (1.0 / self.alpha - 1.0)) / (self.alpha * x)

    def _upper_gamma(self, u: float) -> float:
        s = 1.0 / self.alpha + 1.0
        return special.gamma(s) * special.gammaincc(s, u)

    def _cumulative(self, x):
        eps = self.eps
        flat = self._value(eps) * min(x, eps)
        if x <= eps:
            return flat
        u_x = math.log(self.root / x) if x < self.root else 0.0
        u_eps = math.log(self.root / eps)
        return flat + self.root * (self._upper_gamma(u_x) - self._upper_gamma(u_eps))

    def _quantity(self, price):
        return max(self.root * math.exp(-(price ** self.alpha)), self.eps)

    def breakpoints(self):
        return (self.eps,) if 0.0 < self.eps < self.T else ()

    def _tags(self):
        return DemandClass(_chain(["mpe"]))

    def to_dict(self):
        return {"kind": self.kind, "a": self.root, "alpha": self.alpha, "eps": self.eps}


@dataclass(frozen=True)
class PiecewiseLinear(DemandFunction):
    """Linear interpolation through breakpoints starting at x=0."""

    kind: ClassVar[str] = "piecewise_linear"
    xs: tuple
    values: tuple
    slopes: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        slopes = tuple(
            (self.values[i + 1] - self.values[i]) / (self.xs[i + 1] - self.xs[i])
            for i in range(len(self.xs) - 1)
        )
        object.__setattr__(self, "slopes", slopes)

    @property
    def T(self) -> float:  # noqa: N802
        return self.xs[-1]

    def _segment(self, x: float, side: str) -> int:
        xs = self.xs
        lo, hi = 0, len(xs) - 1
        # last i with xs[i] <= x (right) or xs[i] < x (left)
        while hi - lo > 1:
            mid = (lo + hi) // 2
            if xs[mid] < x or (side == RIGHT and xs[mid] == x):
                lo = mid
            else:
                hi = mid
        return lo

    def _value(self, x):
        i = self._segment(x, RIGHT)
        return max(self.values[i] + self.slopes[i] * (x - self.xs[i]), 0.0)

    def _derivative(self, x, side):
        if side == RIGHT and x >= self.T:
            side = LEFT
        return self.slopes[self._segment(x, side)]

    def _cumulative(self, x):
        total = 0.0
        xs, vs = self.xs, self.values
        for i in range(len(xs) - 1):
            if x <= xs[i]:
                break
            right = min(x, xs[i + 1])
            v_right = vs[i] + self.slopes[i] * (right - xs[i])
            total += 0.5 * (vs[i] + v_right) * (right - xs[i])
        return total

    def _quantity(self, price):
        xs, vs = self.xs, self.values
        for i in range(len(xs) - 1, 0, -1):
            if vs[i - 1] >= price:
                if self.slopes[i - 1] == 0.0:
                    return xs[i]
                return min(xs[i], xs[i - 1] + (price - vs[i - 1]) / self.slopes[i - 1])
        return 0.0

    def breakpoints(self):
        return tuple(self.xs[1:-1])

    def _tags(self):
        return _classify_numeric(self, 256)

    def to_dict(self):
        return {"kind": self.kind, "points": [[x, v] for x, v in zip(self.xs, self.values)]}


def _non_decreasing(seq: list[float], tol: float) -> bool:
    return all(b >= a - tol * max(1.0, abs(a)) for a, b in zip(seq, seq[1:]))


def _classify_numeric(d: DemandFunction, samples: int, tol: float = 1e-9) -> DemandClass:
    """Sample-based monotonicity scan of |value'|, hazard rate and elasticity."""
    T = d.T
    grid = {T * i / (samples - 1) for i in range(samples)} | set(d.breakpoints())
    points = []
    for x in sorted(grid):
        if x > 0.0:
            points.append((x, LEFT))
        if x < T:
            points.append((x, RIGHT))
    slopes, hazards, elastic = [], [], []
    for x, side in points:
        s = abs(d.derivative(x, side))
        slopes.append(s)
        v = d.value(x)
        if v > 0.0:
            hazards.append(s / v)
            elastic.append(x * s / v)
    tags = set()
    if max(slopes) <= tol:
        tags.add("uniform")
    if _non_decreasing(slopes, tol):
        tags.add("concave")
    if _non_decreasing(hazards, tol):
        tags.add("mhr")
    if _non_decreasing(elastic, tol):
        tags.add("mpe")
    return DemandClass(_chain(tags), numeric=True)


def classify(d: DemandFunction, samples: int = 256) -> DemandClass:
    """Demand-class tags, closed upward along uniform < concave < mhr < mpe."""
    if samples < 2:
        raise DomainError("samples must be >= 2")
    if isinstance(d, PiecewiseLinear):
        return _classify_numeric(d, samples)
    if isinstance(d, DemandFunction) and d.kind:
        return d._tags()
    return DemandClass(frozenset(), warning=f"unknown demand kind {getattr(d, 'kind', None)!r}")


# -- module-level operations ----------------------------------------------

def value(d: DemandFunction, x: float) -> float:
    return d.value(x)


def derivative(d: DemandFunction, x: float, side: str = RIGHT) -> float:
    return d.derivative(x, side)


def cumulative_value(d: DemandFunction, x: float) -> float:
    return d.cumulative(x)


def mpe_factor(d: DemandFunction, x: float, side: str = RIGHT) -> float:
    return d.mpe_factor(x, side)


# -- construction ------------------------------------------------------------

def uniform(level: float, T: float) -> Uniform:  # noqa: N803
    return make_demand({"kind": "uniform", "value": level, "T": T})


def affine(a: float, b: float, T: float | None = None) -> Affine:  # noqa: N803
    spec = {"kind": "affine", "a": a, "b": b}
    if T is not None:
        spec["T"] = T
    return make_demand(spec)


def poly_concave(scale: float, root: float, alpha: float) -> PolyConcave:
    return make_demand({"kind": "poly_concave", "value": scale, "a": root, "alpha": alpha})


def ced(scale: float, root: float, alpha: float) -> CED:
    return make_demand({"kind": "ced", "value": scale, "a": root, "alpha": alpha})


def exponential(scale: float, rate: float, T: float, x_trunc: float = 0.0) -> Exponential:  # noqa: N803
    return make_demand({"kind": "exponential", "value": scale, "k": rate, "T": T, "x_trunc": x_trunc})


def power_elastic(a: float, r: float, T: float, eps: float | None = None) -> PowerElastic:  # noqa: N803
    spec = {"kind": "power_elastic", "a": a, "r": r, "T": T}
    if eps is not None:
        spec["eps"] = eps
    return make_demand(spec)


def log_inverse(a: float, alpha: float, eps: float | None = None) -> LogInverse:
    spec = {"kind": "log_inverse", "a": a, "alpha": alpha}
    if eps is not None:
        spec["eps"] = eps
    return make_demand(spec)


def piecewise_linear(points: Iterable[tuple[float, float]]) -> PiecewiseLinear:
    return make_demand({"kind": "piecewise_linear", "points": [list(p) for p in points]})


def _alpha(spec: Mapping, path: str) -> float:
    a = _positive("alpha", spec.get("alpha", 1.0), path)
    if a < 1.0:
        raise ValidationError(f"must be >= 1, got {a!r}", f"{path}.alpha")
    return a


def make_demand(spec: Mapping[str, Any], path: str = "demand") -> DemandFunction:
    """Build a demand function from its JSON form, validating every field."""
    if not isinstance(spec, Mapping):
        raise ValidationError("must be an object", path)
    kind = spec.get("kind")

    def need(name: str) -> Any:
        if name not in spec:
            raise ValidationError("missing field", f"{path}.{name}")
        return spec[name]

    if kind == "uniform":
        return Uniform(_positive("value", need("value"), path, allow_zero=True), _positive("T", need("T"), path))
    if kind == "affine":
        a = _positive("a", need("a"), path)
        b = _positive("b", need("b"), path)
        T = _positive("T", spec["T"], path) if "T" in spec else None
        return Affine(a, b, T)
    if kind == "poly_concave":
        return PolyConcave(_positive("value", need("value"), path), _positive("a", need("a"), path), _alpha(spec, path))
    if kind == "ced":
        return CED(_positive("value", need("value"), path), _positive("a", need("a"), path), _alpha(spec, path))
    if kind == "exponential":
        T = _positive("T", need("T"), path)
        xt = _positive("x_trunc", spec.get("x_trunc", 0.0), path, allow_zero=True)
        if xt >= T:
            raise ValidationError("must be below T", f"{path}.x_trunc")
        return Exponential(_positive("value", need("value"), path), _positive("k", need("k"), path), T, xt)
    if kind == "power_elastic":
        T = _positive("T", need("T"), path)
        r = _positive("r", need("r"), path)
        if r < 1.0:
            raise ValidationError(f"must be >= 1, got {r!r}", f"{path}.r")
        eps = _positive("eps", spec.get("eps", 1e-4 * T), path)
        if eps >= T:
            raise ValidationError("must be below T", f"{path}.eps")
        return PowerElastic(_positive("a", need("a"), path), r, T, eps)
    if kind == "log_inverse":
        root = _positive("a", need("a"), path)
        eps = _positive("eps", spec.get("eps", 1e-9 * root), path)
        if eps >= root:
            raise ValidationError("must be below a", f"{path}.eps")
        return LogInverse(root, _alpha(spec, path), eps)
    if kind == "piecewise_linear":
        return _make_piecewise(need("points"), path)
    raise ValidationError(f"unknown kind {kind!r}", f"{path}.kind")


def _make_piecewise(points: Any, path: str) -> PiecewiseLinear:
    if not isinstance(points, (list, tuple)) or len(points) < 2:
        raise ValidationError("need at least two [x, value] points", f"{path}.points")
    xs, vs = [], []
    for i, p in enumerate(points):
        if not isinstance(p, (list, tuple)) or len(p) != 2:
            raise ValidationError("must be an [x, value] pair", f"{path}.points[{i}]")
        xs.append(_positive("x", p[0], f"{path}.points[{i}]", allow_zero=True))
        vs.append(_positive("value", p[1], f"{path}.points[{i}]", allow_zero=True))
    if xs[0] != 0.0:
        raise ValidationError("first point must have x = 0", f"{path}.points[0]")
    for i in range(1, len(xs)):
        if xs[i] <= xs[i - 1]:
            raise ValidationError("x must be strictly increasing", f"{path}.points[{i}]")
        if vs[i] > vs[i - 1]:
            raise ValidationError("values must be non-increasing", f"{path}.points[{i}]")
    d = PiecewiseLinear(tuple(xs), tuple(vs))
    # A convex kink (slope magnitude dropping) is allowed only where value hits 0.
    for i in range(1, len(xs) - 1):
        left, right = abs(d.slopes[i - 1]), abs(d.slopes[i])
        if left > right + 1e-12 * max(1.0, left) and vs[i] > 0.0:
            raise ValidationError(
                "slope magnitude may not decrease at a breakpoint with positive value",
                f"{path}.points[{i}]",
            )
    return d
