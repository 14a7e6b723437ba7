import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from netprice import demand as D
from netprice.errors import DomainError, ValidationError

from oracles import central_diff, quad

# Values below were produced by oracles.quad / oracles.central_diff and frozen.
CUMULATIVE_AFFINE_THIRD = 0.2777777777777778  # integral of 1 - t over [0, 1/3]


def test_affine_value_at_quarter():
    assert D.affine(1, 1).value(0.25) == pytest.approx(0.75, abs=1e-15)


def test_uniform_is_flat():
    assert D.uniform(5, 2).value(1.3) == 5


def test_ced_value():
    assert D.ced(1, 1, 2).value(0.5) == pytest.approx(0.25, abs=1e-15)


def test_value_outside_domain_raises():
    with pytest.raises(DomainError):
        D.affine(1, 1).value(1.5)
    with pytest.raises(DomainError):
        D.uniform(1, 1).value(-0.1)


def test_truncated_exponential_one_sided_derivatives():
    d = D.exponential(1, 1, 5, x_trunc=0.25)
    assert d.derivative(0.25, "left") == 0.0
    assert d.derivative(0.25, "right") == pytest.approx(-math.exp(-0.25), rel=1e-12)


def test_affine_slope_both_sides():
    d = D.affine(1, 1)
    assert d.derivative(0.5, "left") == d.derivative(0.5, "right") == -1.0


def test_poly_concave_derivative_matches_finite_difference():
    d = D.poly_concave(1, 1, 2)
    assert d.derivative(0.5) == pytest.approx(-1.0, abs=1e-12)
    assert d.derivative(0.5) == pytest.approx(central_diff(d.value, 0.5), abs=1e-8)


def test_left_derivative_at_zero_raises():
    with pytest.raises(DomainError):
        D.affine(1, 1).derivative(0.0, "left")


def test_cumulative_closed_forms():
    assert D.uniform(3, 1).cumulative(1) == 3
    assert D.affine(1, 1).cumulative(0) == 0
    d = D.affine(1, 1)
    assert d.cumulative(1 / 3) == pytest.approx(CUMULATIVE_AFFINE_THIRD, abs=1e-12)
    assert quad(d.value, 0, 1 / 3) == pytest.approx(CUMULATIVE_AFFINE_THIRD, abs=1e-12)


@pytest.mark.parametrize("d", [
    D.poly_concave(2, 1.5, 3),
    D.ced(1.5, 2, 2.5),
    D.exponential(2, 0.7, 4, x_trunc=0.5),
    D.power_elastic(1, 2.5, 2, eps=0.01),
    D.log_inverse(1, 2, eps=1e-6),
    D.piecewise_linear([(0, 3), (1, 2.5), (2, 1), (2.5, 0)]),
])
def test_cumulative_against_quadrature(d):
    for x in (0.3 * d.T, 0.7 * d.T, d.T):
        assert d.cumulative(x) == pytest.approx(quad(d.value, 0, x, d.breakpoints()), abs=1e-8)


def test_mpe_factors():
    e = D.exponential(1, 1, 5)
    for x in (0.1, 1, 2):
        assert e.mpe_factor(x) == pytest.approx(x, abs=1e-12)
    assert D.uniform(1, 1).mpe_factor(0.5) == 0
    assert D.power_elastic(1, 2, 1, eps=0.01).mpe_factor(0.5) == pytest.approx(0.5, abs=1e-12)


def test_mpe_factor_undefined_at_zero_value():
    with pytest.raises(DomainError):
        D.affine(1, 1).mpe_factor(1.0)


def test_classify_examples():
    assert set(D.classify(D.affine(1, 1)).tags) == {"concave", "mhr", "mpe"}
    assert set(D.classify(D.exponential(1, 1, 5)).tags) == {"mhr", "mpe"}
    assert set(D.classify(D.power_elastic(1, 2, 1, eps=0.01)).tags) == set()
    assert "uniform" in D.classify(D.uniform(1, 1))


def test_classify_piecewise_is_numeric():
    c = D.classify(D.piecewise_linear([(0, 3), (1, 3), (2.5, 0)]))
    assert c.numeric
    assert "concave" in c


def test_classify_rejects_single_sample():
    with pytest.raises(DomainError):
        D.classify(D.affine(1, 1), samples=1)


def test_quantity_inverts_value():
    d = D.affine(2, 1)
    assert d.quantity(1.5) == pytest.approx(0.5)
    assert d.quantity(3) == 0
    assert D.uniform(2, 3).quantity(2) == 3


def test_schema_errors_name_the_field():
    with pytest.raises(ValidationError) as err:
        D.make_demand({"kind": "ced", "value": 1, "a": 1, "alpha": 0.5})
    assert err.value.path == "demand.alpha"
    with pytest.raises(ValidationError) as err:
        D.make_demand({"kind": "nope"})
    assert err.value.path == "demand.kind"


def test_json_round_trip():
    for d in (D.affine(1, 2), D.uniform(3, 1), D.exponential(1, 2, 3, 0.5), D.power_elastic(1, 3, 2, 0.1),
              D.log_inverse(2, 3), D.piecewise_linear([(0, 2), (1, 1), (2, 0)])):
        assert D.make_demand(d.to_dict()) == d


_kinds = st.sampled_from([
    D.affine(3, 1.5), D.poly_concave(2, 2, 2.5), D.ced(1, 2, 3), D.exponential(2, 1, 3, 0.4),
    D.power_elastic(1, 3, 2, 0.05), D.log_inverse(1.5, 2), D.uniform(2, 2),
])


@settings(max_examples=200, deadline=None)
@given(_kinds, st.floats(0, 1), st.floats(0, 1))
def test_value_non_increasing(d, a, b):
    x1, x2 = sorted((a * d.T, b * d.T))
    assert d.value(x1) >= d.value(x2) - 1e-12


@settings(max_examples=200, deadline=None)
@given(_kinds, st.floats(0.05, 0.95))
def test_cumulative_derivative_is_value(d, u):
    x = u * d.T
    if any(abs(x - b) < 1e-4 for b in d.breakpoints()):
        return
    h = 1e-5
    assert abs((d.cumulative(x + h) - d.cumulative(x - h)) / (2 * h) - d.value(x)) <= 1e-6


@pytest.mark.parametrize("d", [D.affine(3, 1.5), D.ced(1, 2, 3), D.exponential(2, 1, 3, 0.4), D.log_inverse(1.5, 2),
                               D.poly_concave(1, 1, 2)])
def test_mpe_factor_monotone_when_tagged(d):
    assert "mpe" in D.classify(d)
    xs = [d.T * (i + 0.5) / 100 for i in range(100)]
    vals = [d.mpe_factor(x) for x in xs if d.value(x) > 0]
    assert all(b >= a - 1e-9 for a, b in zip(vals, vals[1:]))


def test_mhr_tag_implies_mpe():
    for d in (D.affine(1, 1), D.ced(1, 1, 2), D.exponential(1, 1, 2)):
        c = D.classify(d)
        if "mhr" in c:
            assert "mpe" in c
