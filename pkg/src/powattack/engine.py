"""Seeded discrete-event simulator of proof-of-work mining under attack.

Block discovery is memoryless: every active miner holds one pending
``found`` event drawn from an exponential with mean ``r / power``. Whenever a
miner's mining target changes its pending event is invalidated and a fresh
one is drawn, which is exact for exponential clocks.

Published blocks reach the network after a fixed delay ``e_bar``. The
network's view is the ``published`` part of the block tree; the defense, when
enabled, sits between delivery and that view.
"""

from __future__ import annotations

import heapq
import json
import random
from dataclasses import dataclass, field
from typing import Any, Optional, Sequence

import numpy as np

from .chain import SYSTEM, Block, BlockTree, Full, first_published, genesis_block
from .defense import Defense, DefenseConfig, Reject, WindowRecord
from .scenario import Scenario
from .strategies import (
    Adopt,
    BdosPhase,
    BlockRejected,
    DefenseDiscard,
    HonestBlockPublished,
    MinerAgent,
    MineOn,
    PublicView,
    PublishBody,
    PublishFull,
    PublishHeader,
    RaceResolved,
    RivalBlockPublished,
    SelfBlockFound,
    Withhold,
    rational_decision,
)

FOUND, DELIVER, EXPIRY = 0, 1, 2
EVENT_NAMES = {FOUND: "block_found", DELIVER: "deliver", EXPIRY: "defense_timer_expiry"}
BROADCAST = "network"
TX_PER_BLOCK = 1
_STALE = object()


class NonPositivePower(ValueError):
    pass


class MoreThanTwoTips(ValueError):
    pass


def sample_interblock(power: float, r: float, rng: random.Random) -> float:
    """Time until a miner with the given share of network power finds a block."""
    if not power > 0 or power > 1:
        raise NonPositivePower(f"power must lie in (0, 1], got {power}")
    if not r > 0:
        raise ValueError("r must be positive")
    return rng.expovariate(power / r)


@dataclass(frozen=True)
class RacePartition:
    """Split of honest power between an attacker tip and an honest tip."""

    attacker_tip: int
    honest_tip: int
    beta: float

    def pick(self, rng: random.Random) -> int:
        if self.beta >= 1.0:
            return self.attacker_tip
        if self.beta <= 0.0:
            return self.honest_tip
        return self.attacker_tip if rng.random() < self.beta else self.honest_tip


def resolve_race(tips, beta: float, attacker_tips=None) -> RacePartition:
    """Assign fraction ``beta`` of honest power to the attacker's tip.

    ``tips`` must hold exactly two ids; ``attacker_tips`` names which of them
    the attacker published (the first one is assumed when omitted).
    """
    tips = list(tips)
    if len(tips) != 2:
        raise MoreThanTwoTips(f"a race needs exactly 2 tips, got {len(tips)}")
    if attacker_tips is None:
        a, h = tips
    else:
        a_side = [t for t in tips if t in attacker_tips]
        if len(a_side) != 1:
            raise ValueError("exactly one tip must belong to the attacker")
        a = a_side[0]
        h = tips[1] if tips[0] == a else tips[0]
    return RacePartition(a, h, beta)


def simulate_races(side_powers: Sequence[float], n: int, seed: int, r: float = 1.0) -> np.ndarray:
    """Run ``n`` independent mining races and count the wins of each side.

    Every side mines with an exponential clock of mean ``r / power``; the first
    clock to fire wins. Sides with zero power never win.
    """
    rng = np.random.default_rng(seed)
    times = np.empty((len(side_powers), n))
    for k, p in enumerate(side_powers):
        times[k] = rng.exponential(r / p, size=n) if p > 0 else np.inf
    winners = np.argmin(times, axis=0)
    if not np.isfinite(times.min(axis=0)).all():
        raise NonPositivePower("every side of the race has zero power")
    return np.bincount(winners, minlength=len(side_powers))


@dataclass
class RaceRecord:
    started_at: float
    height: int
    attacker_tip: int
    ended_at: Optional[float] = None
    attacker_won: Optional[bool] = None


@dataclass
class SimTrace:
    scenario: Scenario
    events: list[tuple]
    tree: BlockTree
    blocks_found: list[int]
    blocks_on_main: list[int]
    blocks_discarded: list[int]
    main_chain: list[int]
    dummy_blocks: int
    headers_discarded: int
    rejected: list[int]
    windows: list[WindowRecord]
    extension_times: list[float]
    occupancy: dict[int, int]
    races: list[RaceRecord]
    end_time: float
    stop_reason: str
    first_header_at: Optional[float] = None
    meta: dict[str, Any] = field(default_factory=dict)

    @property
    def halted(self) -> bool:
        return self.stop_reason == "halted"

    def event_dicts(self):
        for ev in self.events:
            t, seq, kind = ev[0], ev[1], ev[2]
            d: dict[str, Any] = {"time": t, "seq": seq, "type": EVENT_NAMES[kind]}
            if kind == FOUND:
                d["miner"], d["block"] = ev[3], ev[4]
            elif kind == DELIVER:
                d["block"], d["part"], d["recipient"], d["accepted"] = ev[3], ev[4], BROADCAST, ev[5]
                if len(ev) > 6:
                    d["reason"] = ev[6]
            else:
                d["window_id"], d["dummy"], d["discarded"] = ev[3], ev[4], ev[5]
            yield d

    def write_events(self, fh) -> None:
        for d in self.event_dicts():
            fh.write(json.dumps(d, sort_keys=True) + "\n")

    def write_blocks(self, fh) -> None:
        for i in sorted(self.tree.blocks):
            fh.write(json.dumps(self.tree.blocks[i].to_dict(), sort_keys=True) + "\n")


class Simulation:
    """One simulation instance; owns every piece of mutable state it touches."""

    def __init__(self, scenario: Scenario, defense: Any = "auto") -> None:
        scenario.validate()
        self.s = scenario
        self.n = len(scenario.miners)
        self.powers = [m.power for m in scenario.miners]
        self.rng = random.Random(scenario.seed)
        self.tree = BlockTree(genesis_block())
        self.next_id = 1
        self.queue: list[tuple] = []
        self.seq = 0
        self.now = 0.0
        self.events: list[tuple] = []
        self.agents = [MinerAgent(m.strategy, scenario.policy_for(m)) for m in scenario.miners]
        att = scenario.attacker
        self.attacker = att.id if att else None
        self.attacker_power = att.power if att else 0.0
        self.honest_power = scenario.honest_power
        self.targets: list[Any] = [_STALE] * self.n
        self.tokens = [0] * self.n
        self.inflight: list[list[int]] = [[] for _ in range(self.n)]
        self.open_headers: set[int] = set()
        self.withheld_kind: dict[int, Full] = {}
        self.found = [0] * self.n
        self.public_top = 0
        self.extension_times = [0.0]
        self.dummies = 0
        self.headers_discarded = 0
        self.rejected: list[int] = []
        self.occupancy: dict[int, int] = {}
        self.races: list[RaceRecord] = []
        self.first_header_at: Optional[float] = None
        self.seq_current = 0
        if defense == "auto":
            defense = None
            if scenario.defense_enabled:
                cfg = DefenseConfig.for_network(scenario.r, scenario.e_bar, scenario.defense_window_multiplier,
                                                grace_inflight=scenario.grace_inflight)
                defense = Defense(cfg)
        self.defense: Optional[Defense] = defense

    # --- scheduling ---------------------------------------------------------------

    def _push(self, t: float, kind: int, a, b) -> None:
        heapq.heappush(self.queue, (t, self.seq, kind, a, b))
        self.seq += 1

    def _log(self, *entry) -> None:
        self.events.append((self.now, self.seq_current) + entry)

    def _schedule_expiry(self) -> None:
        if self.defense is not None:
            self._push(self.defense.deadline, EXPIRY, self.defense.ws.window_id, None)

    # --- views --------------------------------------------------------------------

    def _public_pick(self, miner: int) -> Any:
        """Where a miner that follows the public chain should mine."""
        tree = self.tree
        top = self.public_top
        own = self.inflight[miner]
        if own:
            b = tree.blocks[own[-1]]
            if b.height >= top and not self._doomed(b):
                return b.id
        tips = self._tips
        if len(tips) == 1:
            return next(iter(tips))
        att = self.attacker
        a_tips = [t for t in tips if tree.blocks[t].miner == att] if att is not None else []
        h_tips = [t for t in tips if t not in a_tips]
        if miner == att:
            return first_published(tree, a_tips or h_tips)
        if a_tips and h_tips:
            a, h = first_published(tree, a_tips), first_published(tree, h_tips)
            return resolve_race((a, h), self.s.beta, attacker_tips=(a,))
        return first_published(tree, h_tips or a_tips)

    def _doomed(self, b: Block) -> bool:
        """True if a block still in flight can no longer be accepted after a dummy."""
        d = self.defense.last_dummy if self.defense is not None else None
        return d is not None and self.tree.blocks[b.parent].height < d.height and not self.s.grace_inflight

    def _header_outstanding(self) -> bool:
        top = self.public_top
        return any(self.tree.blocks[h].height > top for h in self.open_headers)

    def _target(self, i: int) -> Any:
        agent = self.agents[i]
        if self.powers[i] <= 0:
            return None
        kind = agent.kind
        if kind == "bdos":
            st = agent.state
            if st.phase is BdosPhase.HEADER_OUT:
                if self.s.attacker_retires_after_halt and self._honest_all_paused():
                    return None
                return st.withheld.id
            if st.phase is BdosPhase.RACING:
                return st.withheld.id
            return self._public_pick(i)
        if kind == "selfish":
            st = agent.state
            if st.private_branch:
                return st.private_tip.id
            if st.racing:
                return st.race_block.id
            return self._public_pick(i)
        pick = self._public_pick(i)
        if kind == "rational":
            decision = rational_decision(agent.policy, self._observed(pick))
            if not isinstance(decision, MineOn):
                return None
        return pick

    def _observed(self, pick) -> PublicView:
        out = self._header_outstanding()
        win = 1.0
        if out:
            total = self.attacker_power + self.honest_power
            win = (1 - self.s.beta) * self.honest_power / total if total > 0 else 0.0
        tip = pick.honest_tip if isinstance(pick, RacePartition) else pick
        return PublicView(honest_tip=tip, header_outstanding=out, win_probability=win)

    def _honest_all_paused(self) -> bool:
        for k, agent in enumerate(self.agents):
            if k == self.attacker or self.powers[k] <= 0:
                continue
            if agent.kind != "rational":
                return False
            if isinstance(rational_decision(agent.policy, self._observed(self._public_pick(k))), MineOn):
                return False
        return True

    def _retarget(self, only: Optional[int] = None) -> None:
        self._tips = self.tree.main_chain_tips(False)
        for i in (range(self.n) if only is None else (only,)):
            tgt = self._target(i)
            if tgt == self.targets[i]:
                continue
            self.targets[i] = tgt
            self.tokens[i] += 1
            if tgt is not None:
                dt = sample_interblock(self.powers[i], self.s.r, self.rng)
                self._push(self.now + dt, FOUND, i, self.tokens[i])

    # --- publication ----------------------------------------------------------------

    def _send(self, block: Block, part: str) -> None:
        if part != "header":
            self.inflight[block.miner].append(block.id)
        self._push(self.now + self.s.e_bar, DELIVER, block.id, part)

    def _apply(self, actions) -> None:
        for act in actions:
            if isinstance(act, PublishHeader):
                self.withheld_kind[act.block.id] = act.block.kind
                if self.first_header_at is None:
                    self.first_header_at = self.now
                self._send(act.block, "header")
            elif isinstance(act, PublishBody):
                self._send(act.block, "body")
            elif isinstance(act, PublishFull):
                self._send(act.block, "full")
            elif isinstance(act, (Withhold, Adopt)):
                pass

    def _notify(self, event) -> None:
        agent = self.agents[self.attacker]
        self._apply(agent.step(event))

    # --- handlers ---------------------------------------------------------------------

    def _on_found(self, i: int) -> None:
        tgt = self.targets[i]
        parent = tgt.pick(self.rng) if isinstance(tgt, RacePartition) else tgt
        agent = self.agents[i]
        if self.attacker is not None:
            lbl = self.agents[self.attacker].state.label
            self.occupancy[lbl] = self.occupancy.get(lbl, 0) + 1
        p = self.tree.blocks[parent]
        block = Block(self.next_id, parent, p.height + 1, i, Full(TX_PER_BLOCK), self.now)
        self.next_id += 1
        self.tree.append(block)
        self.found[i] += 1
        self._log(FOUND, i, block.id)
        self.targets[i] = _STALE
        if agent.kind in ("honest", "rational"):
            self._send(block, "full")
            return
        racing = self._race_open()
        self._apply(agent.step(SelfBlockFound(block)))
        if racing:
            self._close_race(True)

    def _on_deliver(self, block_id: int, part: str) -> None:
        tree = self.tree
        block = tree.blocks[block_id]
        if part != "header":
            own = self.inflight[block.miner]
            if block_id in own:
                own.remove(block_id)
        if part == "body":
            if not block.is_header_only or tree.is_discarded(block_id):
                self._log(DELIVER, block_id, part, False, "Discarded")
                return
            tree.reveal(block_id, self.withheld_kind.pop(block_id))
            self.open_headers.discard(block_id)
        else:
            if self.defense is not None:
                verdict = self.defense.accept(tree, block, self.now)
                if isinstance(verdict, Reject):
                    self.rejected.append(block_id)
                    self._log(DELIVER, block_id, part, False, verdict.reason)
                    if block.miner == self.attacker and self.agents[block.miner].kind == "selfish":
                        self._notify(BlockRejected(block_id))
                    return
            tree.publish(block_id, self.now, header_only=(part == "header"))
            if part == "header":
                self.open_headers.add(block_id)
        self._log(DELIVER, block_id, part, True)
        self._public_changed()

    def _on_expiry(self, window_id: int) -> None:
        dummy_id = self.next_id
        self.next_id += 1
        dummy, discarded = self.defense.expire(self.tree, self.now, dummy_id, sorted(self.open_headers))
        self.open_headers -= discarded
        self.headers_discarded += len(discarded)
        self.dummies += 1
        self._log(EXPIRY, window_id, dummy.id, sorted(discarded))
        if self.attacker is not None and self.agents[self.attacker].kind == "bdos":
            if self.agents[self.attacker].state.phase is BdosPhase.HEADER_OUT:
                self._notify(DefenseDiscard())
        self._public_changed()

    def _public_changed(self) -> None:
        tree = self.tree
        top = tree.top_height(False)
        if top > self.public_top:
            self.public_top = top
            tip = first_published(tree, tree.main_chain_tips(False))
            self.extension_times.append(self.now)
            if self.defense is not None:
                closed_by = "dummy" if tree.blocks[tip].is_dummy else "full"
                self.defense.extended(tip, self.now, closed_by)
                self._schedule_expiry()
        if self.attacker is None:
            return
        agent = self.agents[self.attacker]
        if agent.kind == "bdos":
            st = agent.state
            if st.phase is BdosPhase.HEADER_OUT and st.withheld.height <= top and \
                    tree.blocks[st.withheld.id].published_at is not None:
                rivals = [t for t in tree.main_chain_tips(False) if tree.blocks[t].miner != self.attacker]
                if rivals:
                    self.races.append(RaceRecord(self.now, st.withheld.height, st.withheld.id))
                    self._notify(RivalBlockPublished(rivals[0]))
            elif st.phase is BdosPhase.RACING and top > st.withheld.height:
                won = self._race_won(st.withheld)
                self._close_race(won)
                self._notify(RaceResolved(won))
        else:
            st = agent.state
            if top > st.public_height:
                if st.racing:
                    self._close_race(self._race_won(st.race_block))
                actions = agent.step(HonestBlockPublished(top))
                if agent.state.racing:
                    self.races.append(RaceRecord(self.now, agent.state.race_block.height, agent.state.race_block.id))
                self._apply(actions)

    def _race_won(self, race_block: Block) -> bool:
        tree = self.tree
        tip = first_published(tree, tree.main_chain_tips(False))
        return tree.is_ancestor(race_block.id, tip)

    def _race_open(self) -> bool:
        return bool(self.races) and self.races[-1].ended_at is None

    def _close_race(self, won: bool) -> None:
        if self.races and self.races[-1].ended_at is None:
            rec = self.races[-1]
            rec.ended_at, rec.attacker_won = self.now, won

    # --- main loop -------------------------------------------------------------------

    def _done(self) -> bool:
        tips = self.tree.main_chain_tips(False)
        return max(self.tree.full_depth(t) for t in tips) >= self.s.horizon_blocks

    def run(self) -> SimTrace:
        self._schedule_expiry()
        self._retarget()
        stop = "halted"
        max_time = self.s.max_time
        queue = self.queue
        while queue:
            t, seq, kind, a, b = heapq.heappop(queue)
            if kind == FOUND:
                if b != self.tokens[a]:
                    continue
            elif kind == EXPIRY:
                if a != self.defense.ws.window_id:
                    continue
            if max_time is not None and t > max_time:
                stop = "max_time"
                self.now = max_time
                break
            self.now = t
            self.seq_current = seq
            if kind == FOUND:
                self._on_found(a)
            elif kind == DELIVER:
                self._on_deliver(a, b)
            else:
                self._on_expiry(a)
            if kind == FOUND:
                self._retarget(a)
                continue
            if self._done():
                stop = "horizon"
                break
            self._retarget()
        return self._finish(stop)

    def _finish(self, stop: str) -> SimTrace:
        tree = self.tree
        if self._race_open():
            self._close_race(self._race_won(tree.blocks[self.races[-1].attacker_tip]))
        tip = first_published(tree, tree.main_chain_tips(False))
        main = tree.ancestor_path(tip)
        on_main = [0] * self.n
        for i in main:
            b = tree.blocks[i]
            if b.miner != SYSTEM and b.is_full:
                on_main[b.miner] += 1
        discarded = [f - m for f, m in zip(self.found, on_main)]
        windows = list(self.defense.history) if self.defense is not None else []
        return SimTrace(
            scenario=self.s,
            events=self.events,
            tree=tree,
            blocks_found=list(self.found),
            blocks_on_main=on_main,
            blocks_discarded=discarded,
            main_chain=main,
            dummy_blocks=self.dummies,
            headers_discarded=self.headers_discarded,
            rejected=self.rejected,
            windows=windows,
            extension_times=self.extension_times,
            occupancy=dict(sorted(self.occupancy.items())),
            races=self.races,
            end_time=self.now,
            stop_reason=stop,
            first_header_at=self.first_header_at,
        )


def run(scenario: Scenario) -> SimTrace:
    return Simulation(scenario).run()
