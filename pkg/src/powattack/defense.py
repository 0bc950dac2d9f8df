"""Dummy-block defense.

A window of length ``r + e_bar`` (times an adaptive multiplier) runs from the
latest main-chain extension by a full or dummy block. If it elapses without a
new extension, a reward-free dummy block is appended on the block that opened
the window, outstanding header-only blocks are thrown away, and afterwards no
block whose parent lies below that dummy is accepted.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Optional, Union

from .chain import SYSTEM, Block, BlockTree, Dummy


class WindowNotExpired(Exception):
    pass


@dataclass(frozen=True)
class DefenseConfig:
    window: float
    adaptive_multiplier: float = 1.0
    enabled: bool = True
    grace_inflight: bool = False

    def __post_init__(self) -> None:
        if not self.window > 0:
            raise ValueError("window must be positive")
        if not self.adaptive_multiplier > 0:
            raise ValueError("adaptive_multiplier must be positive")

    @classmethod
    def for_network(cls, r: float, e_bar: float, multiplier: float = 1.0, **kw) -> "DefenseConfig":
        return cls(window=r + e_bar, adaptive_multiplier=multiplier, **kw)

    @property
    def length(self) -> float:
        return self.window * self.adaptive_multiplier


@dataclass(frozen=True)
class WindowState:
    window_id: int
    opened_at: float
    anchor_tip: int


@dataclass(frozen=True)
class Accept:
    pass


@dataclass(frozen=True)
class Reject:
    reason: str


Verdict = Union[Accept, Reject]
ACCEPT = Accept()
_NO_DUMMY = Block(-1, None, -1, SYSTEM, Dummy(), 0.0, 0.0)  # sentinel: nothing is below height -1


def on_main_chain_extended(ws: WindowState, new_tip: int, now: float) -> WindowState:
    """Restart the window from a new full or dummy main-chain tip."""
    return WindowState(ws.window_id + 1, now, new_tip)


def on_window_expiry(
    tree: BlockTree,
    ws: WindowState,
    now: float,
    *,
    config: DefenseConfig,
    dummy_id: int,
    outstanding_headers: Optional[Iterable[int]] = None,
) -> tuple[BlockTree, Block, set[int]]:
    """Append the dummy block on the window's anchor and drop header-only blocks.

    ``outstanding_headers`` lets a caller that already tracks published
    header-only blocks skip the full scan of the tree.
    """
    deadline = ws.opened_at + config.length
    if now < deadline - 1e-9 * max(1.0, abs(deadline)):
        raise WindowNotExpired(f"window {ws.window_id} open until {deadline}")
    if outstanding_headers is None:
        outstanding_headers = [b.id for b in tree.blocks.values() if b.is_header_only]
    discarded = {
        i for i in outstanding_headers
        if tree[i].is_header_only and tree[i].published_at is not None and not tree.is_discarded(i)
    }
    for i in sorted(discarded):
        tree.discard(i)
    anchor = tree[ws.anchor_tip]
    dummy = Block(dummy_id, anchor.id, anchor.height + 1, SYSTEM, Dummy(), now, now)
    tree.append(dummy)
    return tree, dummy, discarded


def accept_block(
    tree: BlockTree,
    block: Block,
    ws: Optional[WindowState],
    now: float,
    *,
    config: Optional[DefenseConfig] = None,
    last_dummy: Optional[Block] = None,
) -> Verdict:
    """Decide whether the network takes a newly arriving block.

    ``last_dummy`` defaults to the highest dummy block in ``tree``.
    """
    if config is None or not config.enabled:
        return ACCEPT
    parent = tree[block.parent]
    if not tree.on_public_chain(parent.id, count_header_only=True):
        return Reject("DetachedParent")
    if last_dummy is None:
        last_dummy = max((b for b in tree.blocks.values() if b.is_dummy),
                         key=lambda b: (b.height, b.id), default=None)
    if last_dummy is not None and parent.height < last_dummy.height:
        if config.grace_inflight and block.created_at < last_dummy.created_at:
            return ACCEPT
        return Reject("StaleParent")
    return ACCEPT


@dataclass
class WindowRecord:
    window_id: int
    opened_at: float
    anchor: int
    closed_at: Optional[float] = None
    closed_by: Optional[str] = None  # "full" or "dummy"


@dataclass
class Defense:
    """Per-simulation defense state: the open window and its history."""

    config: DefenseConfig
    ws: WindowState = field(default_factory=lambda: WindowState(0, 0.0, 0))
    last_dummy: Optional[Block] = None
    history: list[WindowRecord] = field(default_factory=list)

    def __post_init__(self) -> None:
        self.history.append(WindowRecord(self.ws.window_id, self.ws.opened_at, self.ws.anchor_tip))

    @property
    def deadline(self) -> float:
        return self.ws.opened_at + self.config.length

    def extended(self, new_tip: int, now: float, closed_by: str) -> WindowState:
        rec = self.history[-1]
        rec.closed_at, rec.closed_by = now, closed_by
        self.ws = on_main_chain_extended(self.ws, new_tip, now)
        self.history.append(WindowRecord(self.ws.window_id, now, new_tip))
        return self.ws

    def expire(self, tree: BlockTree, now: float, dummy_id: int,
               outstanding_headers: Iterable[int] = ()) -> tuple[Block, set[int]]:
        _, dummy, discarded = on_window_expiry(tree, self.ws, now, config=self.config, dummy_id=dummy_id,
                                               outstanding_headers=outstanding_headers)
        self.last_dummy = dummy
        return dummy, discarded

    def accept(self, tree: BlockTree, block: Block, now: float) -> Verdict:
        return accept_block(tree, block, self.ws, now, config=self.config,
                            last_dummy=self.last_dummy or _NO_DUMMY)
