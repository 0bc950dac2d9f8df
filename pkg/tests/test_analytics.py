import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from powattack import analytics as A
from powattack.analytics import Winner
from powattack.engine import run
from powattack.scenario import make_scenario

fractions = st.floats(0.0, 1.0, allow_nan=False)


# --- closed-form race rules ---------------------------------------------------------


@pytest.mark.parametrize("beta,alpha,expected", [
    (1.0, 0.6, Winner.ATTACKER), (0.0, 0.6, Winner.RATIONAL), (0.5, 0.5, Winner.TIE),
])
def test_bdos_race_rule_examples(beta, alpha, expected):
    assert A.race_winner_eq1(beta, alpha) is expected


@pytest.mark.parametrize("beta,alpha,expected", [
    (1.0, 0.4, Winner.ATTACKER), (0.0, 0.4, Winner.RATIONAL), (0.4, 0.5, Winner.RATIONAL),
])
def test_bdos_race_rule_after_stop_examples(beta, alpha, expected):
    assert A.race_winner_eq2(beta, alpha) is expected


def test_bdos_race_side_values():
    assert A.bdos_race_sides(0.4, 0.5) == pytest.approx((0.2, 0.3))


def test_bdos_race_rule_alt_branch():
    # written rival side (1-b)(1-a) = 0.06; alternative (1-b)a = 0.54
    assert A.race_winner_eq1(0.4, 0.9) is Winner.ATTACKER
    assert A.race_winner_eq1(0.4, 0.9, alt_branch=True) is Winner.RATIONAL


@pytest.mark.parametrize("a,b,expected", [
    (0.4, 0.6, Winner.AUTHENTIC), (0.6, 0.4, Winner.POOL), (0.5, 0.5, Winner.TIE),
])
def test_pool_race_rule_examples(a, b, expected):
    assert A.race_winner_eq3(a, b) is expected


def test_bdos_race_rules_agree_on_fine_grid():
    grid = [k / 100 for k in range(101)]
    for beta in grid:
        for alpha in grid:
            assert A.race_winner_eq1(beta, alpha) is A.race_winner_eq2(beta, alpha)


@given(fractions, fractions)
def test_pool_race_rule_antisymmetry(a, b):
    swap = {Winner.POOL: Winner.AUTHENTIC, Winner.AUTHENTIC: Winner.POOL, Winner.TIE: Winner.TIE}
    assert A.race_winner_eq3(b, a) is swap[A.race_winner_eq3(a, b)]


def test_race_rule_input_checks():
    with pytest.raises(ValueError):
        A.race_winner_eq1(1.2, 0.5)
    with pytest.raises(ValueError):
        A.race_winner_eq3(-0.1, 0.5)


@pytest.mark.parametrize("fn,x,a,expected", [
    (A.loss_miners_eq4, 0.0, 0.7, 0.0), (A.loss_miners_eq4, 1.0, 0.7, 0.7), (A.loss_miners_eq4, 0.3, 0.5, 0.15),
    (A.loss_attacker_eq5, 0.0, 0.3, 0.0), (A.loss_attacker_eq5, 1.0, 0.3, 0.3),
    (A.loss_attacker_eq5, 0.5, 0.2, 0.1),
])
def test_loss_formulas(fn, x, a, expected):
    assert fn(x, a) == pytest.approx(expected)


# --- stationary distributions ---------------------------------------------------------


def eig_oracle(P):
    """Stationary vector from the left eigenvector of eigenvalue 1."""
    w, v = np.linalg.eig(np.asarray(P).T)
    k = np.argmin(np.abs(w - 1.0))
    vec = np.real(v[:, k])
    return vec / vec.sum()


def two_state(P):
    return A.MarkovModel("t", ("a", "b"), np.array(P))


def test_two_state_by_hand():
    pi = A.stationary(two_state([[0.9, 0.1], [0.5, 0.5]]))
    assert pi == pytest.approx([5 / 6, 1 / 6], abs=1e-12)
    assert A.stationary(two_state([[0.5, 0.5], [0.5, 0.5]])) == pytest.approx([0.5, 0.5])


def test_identity_is_not_unique():
    m = A.MarkovModel("id", ("a", "b", "c"), np.eye(3))
    with pytest.raises(A.NonUnique):
        A.stationary(m)
    with pytest.raises(A.NoConvergence):
        A.stationary(m, method="power")


def test_not_stochastic():
    with pytest.raises(A.NotStochastic):
        two_state([[0.9, 0.2], [0.5, 0.5]])
    with pytest.raises(A.NotStochastic):
        A.MarkovModel("x", ("a",), np.array([[0.5, 0.5]]))


def test_power_method_agrees_with_direct():
    m = A.build_bdos_chain(0.3, 0.7, 0.5)
    assert A.stationary(m, method="power") == pytest.approx(A.stationary(m), abs=1e-9)
    with pytest.raises(ValueError):
        A.stationary(m, method="magic")


@settings(max_examples=200, deadline=None)
@given(st.floats(0.01, 0.99), fractions, st.booleans(), fractions)
def test_bdos_stationary_properties(a, beta, stops, share):
    alpha_v = 1 - a
    m = A.build_bdos_chain(a, alpha_v, beta, miner_i_stops=stops, alpha_i=share * alpha_v)
    pi = A.stationary(m)
    assert np.abs(pi @ m.transitions - pi).max() < 1e-9
    assert pi == pytest.approx(eig_oracle(m.transitions), abs=1e-8)


@settings(max_examples=200, deadline=None)
@given(st.floats(0.01, 0.99), fractions)
def test_selfish_stationary_properties(a, beta):
    m = A.build_selfish_chain(a, beta)
    pi = A.stationary(m)
    assert np.abs(pi @ m.transitions - pi).max() < 1e-9
    assert pi == pytest.approx(eig_oracle(m.transitions), abs=1e-8)


def eyal_sirer(a, g):
    # published closed-form revenue of selfish mining, used only as an outside check
    return (a * (1 - a) ** 2 * (4 * a + g * (1 - 2 * a)) - a ** 3) / (1 - a * (1 + (2 - a) * a))


@pytest.mark.parametrize("a", [0.1, 0.25, 0.33, 0.4, 0.45])
@pytest.mark.parametrize("g", [0.0, 0.5, 1.0])
def test_selfish_share_matches_published_formula(a, g):
    assert A.predicted_attacker_share(A.build_selfish_chain(a, g)) == pytest.approx(eyal_sirer(a, g), abs=1e-12)


def test_selfish_degenerate_powers():
    assert A.stationary(A.build_selfish_chain(0.0, 0.3)) == pytest.approx([1, 0, 0, 0])
    pi = A.stationary(A.build_selfish_chain(1.0, 0.3))
    assert pi[2] == 0.0


def test_bdos_degenerate_powers():
    assert A.stationary(A.build_bdos_chain(0.0, 1.0, 0.5)) == pytest.approx([1, 0, 0])
    assert A.stationary(A.build_bdos_chain(1.0, 0.0, 0.5))[0] == 0.0


def test_bdos_stopping_miner_slows_exit():
    go = A.build_bdos_chain(0.3, 0.7, 0.5)
    stop = A.build_bdos_chain(0.3, 0.7, 0.5, miner_i_stops=True, alpha_i=0.4)
    assert go.transitions[1, 2] == pytest.approx(0.7)
    assert stop.transitions[1, 2] == pytest.approx(0.3 / 0.6)
    all_stop = A.build_bdos_chain(0.3, 0.7, 0.5, miner_i_stops=True, alpha_i=0.7)
    assert all_stop.transitions[1, 1] == 1.0


def test_bdos_chain_checks():
    with pytest.raises(A.InvalidPowers):
        A.build_bdos_chain(0.3, 0.6, 0.5)
    with pytest.raises(A.InvalidPowers):
        A.build_bdos_chain(0.3, 0.7, 0.5, miner_i_stops=True, alpha_i=0.8)


def test_model_report_shape():
    rep = A.model_report(A.build_selfish_chain(0.4, 0.0))
    assert set(rep) == {"model", "states", "transition_matrix", "stationary", "predictions"}
    assert rep["predictions"]["attacker_share"] == pytest.approx(0.4837209, abs=1e-6)
    json.dumps(rep)


# --- trace estimators -------------------------------------------------------------------


def test_revenue_single_miner():
    tr = run(make_scenario([1.0], horizon_blocks=20, seed=1))
    assert A.revenue_from_trace(tr) == {0: 1.0}


def test_revenue_empty_chain():
    tr = run(make_scenario([1.0], horizon_blocks=20, seed=1, defense_enabled=True,
                           defense_window_multiplier=1e-4, max_time=5.0))
    assert tr.dummy_blocks > 0 and sum(tr.blocks_on_main) == 0
    with pytest.raises(A.EmptyChain):
        A.revenue_from_trace(tr)


def test_revenue_two_honest_miners():
    tr = run(make_scenario([0.6, 0.4], horizon_blocks=200_000, seed=21))
    shares = A.revenue_from_trace(tr)
    assert abs(shares[0] - 0.6) <= 0.01 and abs(shares[1] - 0.4) <= 0.01


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.05, 0.45), st.sampled_from(["selfish", "bdos"]), st.booleans())
def test_revenue_shares_sum_to_one(seed, a, kind, defense):
    other = "honest" if kind == "selfish" else "rational"
    tr = run(make_scenario([a, 1 - a], [kind, other], beta=0.5, horizon_blocks=200, seed=seed,
                           defense_enabled=defense))
    assert sum(A.revenue_from_trace(tr).values()) == pytest.approx(1.0)


def test_losses_need_defense():
    tr = run(make_scenario([1.0], horizon_blocks=10, seed=1))
    with pytest.raises(A.DefenseDisabled):
        A.estimate_losses(tr)


def test_rho_limits():
    wide = run(make_scenario([0.5, 0.5], horizon_blocks=3000, seed=2, defense_enabled=True,
                             defense_window_multiplier=20.0))
    assert A.estimate_losses(wide).rho_hat < 1e-3
    narrow = run(make_scenario([0.5, 0.5], horizon_blocks=20, seed=2, defense_enabled=True,
                               defense_window_multiplier=1e-3))
    assert A.estimate_losses(narrow).rho_hat > 0.99


def test_honest_wasted_work_at_07():
    # alpha_mv = 0.7 with an attacker holding the rest; defense window r + e_bar
    tr = run(make_scenario([0.3, 0.4, 0.3], ["bdos", "rational", "rational"], beta=0.5, e_bar=60.0,
                           defense_enabled=True, horizon_blocks=20_000, seed=8))
    est = A.estimate_losses(tr)
    assert abs(est.honest_wasted - 0.7 * est.rho_hat) <= 0.1 * 0.7 * est.rho_hat


def test_occupancy_and_summary():
    tr = run(make_scenario([0.4, 0.6], ["selfish", "honest"], horizon_blocks=2000, seed=5))
    occ = A.occupancy_from_trace(tr, 4)
    assert occ.sum() == pytest.approx(1.0)
    summ = A.summarize(tr)
    json.dumps(summ)
    assert summ["occupancy_l1"] == pytest.approx(A.l1(occ, A.stationary(A.build_selfish_chain(0.4, 0.0))))
    assert summ["attack"] == "selfish" and summ["shares"][0] > 0.4 - 0.1
