import json

import pytest

from powattack.scenario import InvalidScenario, Scenario, apply_override, make_scenario
from powattack.strategies import RationalPolicy


def test_round_trip(scenario_dir):
    for path in sorted(scenario_dir.glob("*.json")):
        s = Scenario.load(path).validate()
        again = Scenario.from_dict(json.loads(json.dumps(s.to_dict())))
        assert again == s


def test_window_and_roles():
    s = make_scenario([0.3, 0.7], ["bdos", "rational"], e_bar=30.0, defense_window_multiplier=2.0)
    assert s.window == 1260.0
    assert s.attacker.id == 0 and s.attack == "bdos"
    assert s.honest_power == pytest.approx(0.7)
    assert s.policy_for(s.miners[1]) == RationalPolicy()
    assert s.policy_for(s.miners[0]) is None


@pytest.mark.parametrize("kw,powers,strategies,msg", [
    ({}, [0.5, 0.4], None, "sum to 1"),
    ({}, [0.5, 0.5], ["honest", "greedy"], "unknown strategy"),
    ({}, [0.5, 0.5], ["bdos", "selfish"], "at most one attacker"),
    ({"beta": 1.5}, [1.0], None, "beta"),
    ({"horizon_blocks": 0}, [1.0], None, "horizon_blocks"),
    ({"e_bar": -1.0}, [1.0], None, "e_bar"),
])
def test_validation(kw, powers, strategies, msg):
    with pytest.raises(InvalidScenario, match=msg):
        make_scenario(powers, strategies, **kw)


def test_no_miners():
    with pytest.raises(InvalidScenario):
        Scenario(miners=()).validate()


def test_override_dotted_and_alpha():
    data = {"miners": [{"power": 0.3, "strategy": "selfish"}, {"power": 0.5}, {"power": 0.2}],
            "defense": {"enabled": False}}
    apply_override(data, "defense.enabled", "true")
    apply_override(data, "miners.1.strategy", "rational")
    apply_override(data, "alpha", "0.4")
    assert data["defense"]["enabled"] is True
    assert data["miners"][1]["strategy"] == "rational"
    assert [m["power"] for m in data["miners"]] == pytest.approx([0.4, 0.5 * 0.6 / 0.7, 0.2 * 0.6 / 0.7])
    s = Scenario.from_dict(data).validate()
    assert s.defense_enabled


def test_alpha_override_needs_attacker():
    with pytest.raises(InvalidScenario):
        apply_override({"miners": [{"power": 1.0}]}, "alpha", 0.3)


def test_malformed():
    with pytest.raises(InvalidScenario):
        Scenario.from_dict({"miners": [{"id": 0}]})
