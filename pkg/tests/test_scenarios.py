import pytest

from netprice import scenarios
from netprice.errors import DomainError
from netprice.market import MarketInstance


def test_every_scenario_builds_with_defaults():
    for sid in scenarios.ids():
        inst = scenarios.build(sid)
        assert isinstance(inst, MarketInstance)
        for key, exp in scenarios.expected(sid).items():
            assert exp.provenance in scenarios.PROVENANCES, (sid, key)


def test_published_single_good_table():
    exp = scenarios.expected("single-good")
    assert exp["x_eq"].value == 0.25 and exp["x_eq"].provenance == "published"
    assert exp["price_e1"].value == 0.75
    assert exp["walrasian_price"].value == pytest.approx(2 / 3)
    assert exp["eta"].value == pytest.approx(16 / 15)


@pytest.mark.parametrize("M", [1, 3, 6])
def test_concave_tight_table_follows_M(M):
    exp = scenarios.expected("concave-tight", {"M": M})
    assert exp["eta"].value == pytest.approx(1 + M / 2)
    assert exp["price_per_edge"].value == pytest.approx(2 + 1 / M)
    inst = scenarios.build("concave-tight", {"M": M})
    assert len(inst.edges) == M


def test_stub_is_flagged():
    assert scenarios.get("parallel-noncompetitive").stub
    assert not scenarios.get("single-good").stub


def test_unknown_scenario_and_parameter():
    with pytest.raises(KeyError, match="unknown scenario"):
        scenarios.build("nope")
    with pytest.raises(DomainError, match="no parameter"):
        scenarios.build("single-good", {"M": 2})
    with pytest.raises(DomainError):
        scenarios.build("concave-tight", {"M": 0})


def test_capacitated_applicability_follows_ratio():
    assert scenarios.expected("capacitated", {"M": 2, "r": 3.0})["eta"].value == 1.0
