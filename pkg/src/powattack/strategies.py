"""Miner decision logic as explicit, pure state machines.

Each ``*_step`` function takes the current state and one event and returns the
next state plus the list of actions the engine must carry out. States are
frozen dataclasses so the machines can be enumerated exhaustively in tests.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from typing import Optional, Union

from .chain import Block

STRATEGY_KINDS = ("honest", "bdos", "selfish", "rational")
ATTACKER_KINDS = ("bdos", "selfish")


class IllegalTransition(Exception):
    """Event not valid in the current state of a strategy machine."""


# --- events -----------------------------------------------------------------


@dataclass(frozen=True)
class SelfBlockFound:
    block: Block


@dataclass(frozen=True)
class RivalBlockPublished:
    block_id: int


@dataclass(frozen=True)
class HonestBlockPublished:
    public_height: int


@dataclass(frozen=True)
class RaceResolved:
    won: bool


@dataclass(frozen=True)
class DefenseDiscard:
    pass


@dataclass(frozen=True)
class BlockRejected:
    block_id: int


StrategyEvent = Union[
    SelfBlockFound, RivalBlockPublished, HonestBlockPublished, RaceResolved, DefenseDiscard, BlockRejected
]


# --- actions ----------------------------------------------------------------


@dataclass(frozen=True)
class PublishHeader:
    block: Block


@dataclass(frozen=True)
class PublishBody:
    block: Block


@dataclass(frozen=True)
class PublishFull:
    block: Block


@dataclass(frozen=True)
class Withhold:
    block: Block


@dataclass(frozen=True)
class Adopt:
    """Abandon any private work and mine on the public chain."""


Action = Union[PublishHeader, PublishBody, PublishFull, Withhold, Adopt]


# --- BDoS attacker ------------------------------------------------------------


class BdosPhase(enum.Enum):
    IDLE = "idle"
    HEADER_OUT = "header_out"
    RACING = "racing"


@dataclass(frozen=True)
class BdosState:
    withheld: Optional[Block] = None
    header_published: bool = False
    phase: BdosPhase = BdosPhase.IDLE
    races_won: int = 0
    races_lost: int = 0
    discarded: int = 0

    @property
    def label(self) -> int:
        """Markov state number: 0 idle, 1 header out, 2 racing."""
        return {BdosPhase.IDLE: 0, BdosPhase.HEADER_OUT: 1, BdosPhase.RACING: 2}[self.phase]


def bdos_step(state: BdosState, event: StrategyEvent) -> tuple[BdosState, list[Action]]:
    phase = state.phase
    if isinstance(event, SelfBlockFound):
        b = event.block
        if phase is BdosPhase.IDLE:
            return replace(state, withheld=b, header_published=True, phase=BdosPhase.HEADER_OUT), [PublishHeader(b)]
        if phase is BdosPhase.HEADER_OUT:
            # second block inside the attack: release the first body, hold the new one
            prev = state.withheld
            return replace(state, withheld=b), [PublishBody(prev), PublishHeader(b)]
        # extending our side of the race settles it in our favour
        return (
            replace(state, withheld=None, header_published=False, phase=BdosPhase.IDLE,
                    races_won=state.races_won + 1),
            [PublishFull(b)],
        )
    if isinstance(event, RivalBlockPublished):
        if phase is BdosPhase.IDLE:
            return state, []
        if phase is BdosPhase.HEADER_OUT:
            return replace(state, phase=BdosPhase.RACING), [PublishBody(state.withheld)]
        raise IllegalTransition(f"{event} in {phase}")
    if isinstance(event, RaceResolved):
        if phase is not BdosPhase.RACING:
            raise IllegalTransition(f"{event} in {phase}")
        won, lost = (1, 0) if event.won else (0, 1)
        return (
            replace(state, withheld=None, header_published=False, phase=BdosPhase.IDLE,
                    races_won=state.races_won + won, races_lost=state.races_lost + lost),
            [],
        )
    if isinstance(event, DefenseDiscard):
        if phase is not BdosPhase.HEADER_OUT:
            raise IllegalTransition(f"{event} in {phase}")
        return (
            replace(state, withheld=None, header_published=False, phase=BdosPhase.IDLE,
                    discarded=state.discarded + 1),
            [],
        )
    raise IllegalTransition(f"{event} in {phase}")


# --- selfish pool -------------------------------------------------------------


@dataclass(frozen=True)
class SelfishState:
    private_branch: tuple[Block, ...] = ()
    public_height: int = 0
    lead: int = 0
    racing: bool = False
    race_block: Optional[Block] = None

    @property
    def label(self) -> int:
        """Markov state number: 0 no lead, 1 lead one, 2 race, 3 lead two or more."""
        if self.racing:
            return 2
        if self.lead == 0:
            return 0
        return 1 if self.lead == 1 else 3

    @property
    def private_tip(self) -> Optional[Block]:
        return self.private_branch[-1] if self.private_branch else None


def _adopted(state: SelfishState, public_height: int) -> SelfishState:
    return replace(state, private_branch=(), public_height=public_height, lead=0,
                   racing=False, race_block=None)


def selfish_step(state: SelfishState, event: StrategyEvent) -> tuple[SelfishState, list[Action]]:
    if isinstance(event, SelfBlockFound):
        b = event.block
        if state.racing:
            # the new block settles the race; both of our blocks now win
            return _adopted(state, b.height), [PublishFull(b)]
        branch = state.private_branch + (b,)
        return replace(state, private_branch=branch, lead=b.height - state.public_height), [Withhold(b)]

    if isinstance(event, HonestBlockPublished):
        h = event.public_height
        if state.racing or not state.private_branch:
            return _adopted(state, h), [Adopt()]
        tip = state.private_tip
        new_lead = tip.height - h
        if new_lead < 0 or (new_lead == 0 and state.lead != 1):
            return _adopted(state, h), [Adopt()]
        if new_lead == 0:
            # lead 1 cancelled out: show the branch and race for it
            return (
                replace(state, private_branch=(), public_height=h, lead=0, racing=True, race_block=tip),
                [PublishFull(b) for b in state.private_branch],
            )
        if new_lead == 1:
            # down to a single block lead: release everything and take the chain
            return _adopted(state, tip.height), [PublishFull(b) for b in state.private_branch]
        first, rest = state.private_branch[0], state.private_branch[1:]
        return replace(state, private_branch=rest, public_height=h, lead=new_lead), [PublishFull(first)]

    if isinstance(event, RaceResolved):
        if not state.racing:
            raise IllegalTransition(f"{event} while not racing")
        return _adopted(state, state.public_height), []

    if isinstance(event, BlockRejected):
        return _adopted(state, state.public_height), [Adopt()] if state.private_branch or state.racing else []

    raise IllegalTransition(f"{event} for selfish pool")


# --- rational miner -------------------------------------------------------------


@dataclass(frozen=True)
class RationalPolicy:
    stop_when_header_seen: bool = False
    min_win_probability: float = 0.0

    def __post_init__(self) -> None:
        if not 0.0 <= self.min_win_probability <= 1.0:
            raise ValueError("min_win_probability must lie in [0, 1]")

    @classmethod
    def from_dict(cls, d: dict) -> "RationalPolicy":
        return cls(bool(d.get("stop_when_header_seen", False)), float(d.get("min_win_probability", 0.0)))

    def to_dict(self) -> dict:
        return {"stop_when_header_seen": self.stop_when_header_seen,
                "min_win_probability": self.min_win_probability}


@dataclass(frozen=True)
class PublicView:
    """What a rational miner can see when deciding whether to mine."""

    honest_tip: int
    header_outstanding: bool = False
    win_probability: float = 1.0


@dataclass(frozen=True)
class MineOn:
    tip: int


class _Pause:
    def __repr__(self) -> str:
        return "Pause"


Pause = _Pause()


def rational_decision(policy: RationalPolicy, observed: PublicView) -> Union[MineOn, _Pause]:
    if observed.header_outstanding and policy.stop_when_header_seen:
        return Pause
    if observed.win_probability < policy.min_win_probability:
        return Pause
    return MineOn(observed.honest_tip)


@dataclass
class MinerAgent:
    """Mutable per-simulation holder of one miner's strategy state."""

    kind: str
    policy: Optional[RationalPolicy] = None
    state: Union[BdosState, SelfishState, None] = field(default=None)

    def __post_init__(self) -> None:
        if self.kind not in STRATEGY_KINDS:
            raise ValueError(f"unknown strategy {self.kind!r}")
        if self.state is None:
            if self.kind == "bdos":
                self.state = BdosState()
            elif self.kind == "selfish":
                self.state = SelfishState()

    def step(self, event: StrategyEvent) -> list[Action]:
        fn = bdos_step if self.kind == "bdos" else selfish_step
        self.state, actions = fn(self.state, event)
        return actions
