import dataclasses

import pytest

from powattack.chain import SYSTEM, Block, BlockTree, Full
from powattack.defense import (
    ACCEPT,
    Defense,
    DefenseConfig,
    Reject,
    WindowNotExpired,
    WindowState,
    accept_block,
    on_main_chain_extended,
    on_window_expiry,
)
from powattack.engine import Simulation
from powattack.scenario import make_scenario

CFG = DefenseConfig.for_network(600.0, 0.0)


def chain(n):
    tree = BlockTree()
    for i in range(1, n + 1):
        tree.append(Block(i, i - 1, 0, 0, Full(1), 100.0 * i, 100.0 * i))
    return tree


def test_config():
    cfg = DefenseConfig.for_network(600.0, 30.0, 1.5)
    assert cfg.window == 630.0 and cfg.length == pytest.approx(945.0)
    with pytest.raises(ValueError):
        DefenseConfig(window=0.0)
    with pytest.raises(ValueError):
        DefenseConfig(window=1.0, adaptive_multiplier=0.0)


def test_extension_reopens_window():
    ws = WindowState(0, 0.0, 0)
    ws2 = on_main_chain_extended(ws, 5, 123.0)
    assert (ws2.window_id, ws2.opened_at, ws2.anchor_tip) == (1, 123.0, 5)


def test_expiry_too_early():
    with pytest.raises(WindowNotExpired):
        on_window_expiry(chain(1), WindowState(0, 100.0, 1), 500.0, config=CFG, dummy_id=9)


def test_expiry_discards_header_and_appends_dummy():
    tree = chain(2)
    tree.append(Block(3, 2, 0, 1, Full(1), 250.0))
    tree.publish(3, 250.0, header_only=True)
    tree, dummy, discarded = on_window_expiry(tree, WindowState(4, 200.0, 2), 800.0, config=CFG, dummy_id=10)
    assert discarded == {3}
    assert dummy.is_dummy and dummy.parent == 2 and dummy.height == 3 and dummy.miner == SYSTEM
    assert tree.main_chain_tips(True) == {10}
    assert tree.main_chain_tips(False) == {10}


def test_expiry_with_no_blocks_appends_on_tip():
    tree, dummy, discarded = on_window_expiry(chain(3), WindowState(0, 300.0, 3), 900.0, config=CFG, dummy_id=4)
    assert discarded == set() and dummy.parent == 3


def test_private_branch_cannot_attach_after_dummy():
    tree = chain(2)
    # a private block on the pre-dummy tip, never published
    tree.append(Block(3, 2, 0, 1, Full(1), 300.0))
    tree, dummy, _ = on_window_expiry(tree, WindowState(0, 200.0, 2), 800.0, config=CFG, dummy_id=4)
    verdict = accept_block(tree, tree[3], None, 801.0, config=CFG, last_dummy=dummy)
    assert verdict == Reject("StaleParent")
    assert dummy.parent == 2


def test_accept_rules():
    tree = chain(2)
    tree, dummy, _ = on_window_expiry(tree, WindowState(0, 200.0, 2), 800.0, config=CFG, dummy_id=3)
    on_dummy = Block(4, 3, 0, 0, Full(1), 850.0)
    stale = Block(5, 1, 0, 0, Full(1), 700.0)
    tree.append(on_dummy).append(stale)
    assert accept_block(tree, tree[4], None, 860.0, config=CFG) == ACCEPT
    assert accept_block(tree, tree[5], None, 860.0, config=CFG) == Reject("StaleParent")
    grace = dataclasses.replace(CFG, grace_inflight=True)
    assert accept_block(tree, tree[5], None, 860.0, config=grace) == ACCEPT
    assert accept_block(tree, tree[5], None, 860.0, config=dataclasses.replace(CFG, enabled=False)) == ACCEPT


def test_in_window_block_accepted():
    tree = chain(2).append(Block(3, 2, 0, 0, Full(1), 250.0))
    assert accept_block(tree, tree[3], WindowState(0, 200.0, 2), 250.0, config=CFG) == ACCEPT


def test_detached_parent():
    tree = chain(1).append(Block(2, 1, 0, 0, Full(1), 150.0)).append(Block(3, 2, 0, 0, Full(1), 160.0))
    assert accept_block(tree, tree[3], None, 170.0, config=CFG) == Reject("DetachedParent")


def test_defense_history():
    d = Defense(CFG)
    d.extended(1, 100.0, "full")
    assert d.deadline == 700.0
    tree = chain(1)
    dummy, _ = d.expire(tree, 700.0, 2)
    d.extended(dummy.id, 700.0, "dummy")
    assert [(w.opened_at, w.closed_at, w.closed_by) for w in d.history] == [
        (0.0, 100.0, "full"), (100.0, 700.0, "dummy"), (700.0, None, None)]


# --- properties on full runs --------------------------------------------------------


@pytest.fixture(scope="module")
def defended_runs():
    scen = [
        make_scenario([0.3, 0.4, 0.3], ["bdos", "rational", "rational"], beta=0.5, defense_enabled=True,
                      horizon_blocks=3000, seed=11),
        make_scenario([0.35, 0.65], ["selfish", "honest"], defense_enabled=True, e_bar=60.0,
                      horizon_blocks=3000, seed=12),
        make_scenario([0.5, 0.5], ["honest", "honest"], defense_enabled=True, e_bar=300.0,
                      horizon_blocks=1000, seed=13),
    ]
    return [Simulation(s).run() for s in scen]


def test_gap_never_exceeds_window(defended_runs):
    for tr in defended_runs:
        gaps = [b - a for a, b in zip(tr.extension_times, tr.extension_times[1:])]
        assert max(gaps) <= tr.scenario.window * (1 + 1e-9)


def test_no_header_only_ancestor_and_dummy_parents(defended_runs):
    for tr in defended_runs:
        tree = tr.tree
        assert not any(tree[i].is_header_only for i in tr.main_chain)
        for b in tree.blocks.values():
            if b.is_dummy:
                p = tree[b.parent]
                assert p.is_full or p.is_dummy
                assert not any(tree[a].is_header_only for a in tree.ancestor_path(b.id))


def test_windows_open_only_on_full_or_dummy(defended_runs):
    for tr in defended_runs:
        tree = tr.tree
        assert tr.headers_discarded > 0 or tr.scenario.attack != "bdos"
        for w in tr.windows[1:]:
            anchor = tree[w.anchor]
            assert anchor.is_full or anchor.is_dummy
            # a revealed body extends the chain later than its header was published
            assert anchor.published_at <= w.opened_at


def test_null_defense_equivalence():
    s = make_scenario([0.3, 0.7], ["selfish", "honest"], horizon_blocks=2000, seed=5)
    a = Simulation(s).run()
    b = Simulation(s, defense=None).run()
    assert a.events == b.events and a.tree.blocks == b.tree.blocks
