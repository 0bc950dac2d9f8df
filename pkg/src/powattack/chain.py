"""Block and block-tree structures.

Blocks are linked by synthetic integer ids instead of hashes. The tree keeps
every block ever created (withheld, rejected and orphaned ones included) and
tracks which of them are visible on the public network, so the main chain is
always computed over published blocks only.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Iterable, Optional, Union

SYSTEM = -1  # miner id of defense-generated blocks; outside the dense 0..n-1 range
GENESIS_ID = 0


class ChainError(Exception):
    """Base class for block-tree errors."""


class UnknownParent(ChainError):
    pass


class DuplicateId(ChainError):
    pass


class UnknownId(ChainError):
    pass


@dataclass(frozen=True, slots=True)
class Full:
    tx_count: int = 0

    def __post_init__(self) -> None:
        if self.tx_count < 0:
            raise ValueError("tx_count must be non-negative")


@dataclass(frozen=True, slots=True)
class HeaderOnly:
    pass


@dataclass(frozen=True, slots=True)
class Dummy:
    tx_count = 0


BlockKind = Union[Full, HeaderOnly, Dummy]


def kind_name(kind: BlockKind) -> str:
    if isinstance(kind, Full):
        return "full"
    if isinstance(kind, HeaderOnly):
        return "header_only"
    return "dummy"


@dataclass(frozen=True, slots=True)
class Block:
    id: int
    parent: Optional[int]
    height: int
    miner: int
    kind: BlockKind
    created_at: float
    published_at: Optional[float] = None

    @property
    def is_full(self) -> bool:
        return isinstance(self.kind, Full)

    @property
    def is_dummy(self) -> bool:
        return isinstance(self.kind, Dummy)

    @property
    def is_header_only(self) -> bool:
        return isinstance(self.kind, HeaderOnly)

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "parent": self.parent,
            "height": self.height,
            "miner": self.miner,
            "kind": kind_name(self.kind),
            "tx_count": getattr(self.kind, "tx_count", 0),
            "created_at": self.created_at,
            "published_at": self.published_at,
        }


def genesis_block() -> Block:
    return Block(GENESIS_ID, None, 0, SYSTEM, Full(0), 0.0, 0.0)


class BlockTree:
    """Hash-linked block tree with an incrementally maintained main chain.

    Two views of the main chain are kept: one where header-only blocks count
    toward height and one where they (and everything built on them) do not.
    Each view buckets eligible blocks by height so the set of maximal tips is
    available in O(1) after every change.
    """

    def __init__(self, genesis: Optional[Block] = None) -> None:
        g = genesis or genesis_block()
        if g.parent is not None or g.height != 0:
            raise ChainError("genesis must have no parent and height 0")
        self.blocks: dict[int, Block] = {g.id: g}
        self.genesis: int = g.id
        self.tips: set[int] = {g.id}
        self._children: dict[int, list[int]] = {g.id: []}
        self._discarded: set[int] = set()
        self._full_depth: dict[int, int] = {g.id: 0}
        # index 0: header-only blocks excluded, index 1: counted
        self._eligible: tuple[set[int], set[int]] = (set(), set())
        self._levels: tuple[dict[int, set[int]], dict[int, set[int]]] = ({}, {})
        self._top = [0, 0]
        self._refresh(g.id)

    def __len__(self) -> int:
        return len(self.blocks)

    def __contains__(self, block_id: int) -> bool:
        return block_id in self.blocks

    def __getitem__(self, block_id: int) -> Block:
        try:
            return self.blocks[block_id]
        except KeyError:
            raise UnknownId(block_id) from None

    def children(self, block_id: int) -> list[int]:
        return list(self._children[block_id])

    # --- mutation -----------------------------------------------------------

    def append(self, block: Block) -> "BlockTree":
        if block.id in self.blocks:
            raise DuplicateId(block.id)
        if block.parent not in self.blocks:
            raise UnknownParent(block.parent)
        parent = self.blocks[block.parent]
        if block.height != parent.height + 1:
            block = replace(block, height=parent.height + 1)
        self.blocks[block.id] = block
        self._children[block.id] = []
        self._children[parent.id].append(block.id)
        self.tips.discard(parent.id)
        self.tips.add(block.id)
        self._full_depth[block.id] = self._full_depth[parent.id] + block.is_full
        if block.published_at is not None:
            self._refresh(block.id)
        return self

    def publish(self, block_id: int, at: float, header_only: bool = False) -> Block:
        """Make a block visible on the network, optionally with its body withheld."""
        b = self[block_id]
        kind = HeaderOnly() if header_only else b.kind
        if isinstance(kind, HeaderOnly) and not header_only:
            raise ChainError(f"block {block_id} has no body to publish")
        b = replace(b, published_at=at, kind=kind)
        self._store(b)
        return b

    def reveal(self, block_id: int, kind: BlockKind) -> Block:
        """Publish the withheld body of a header-only block."""
        b = self[block_id]
        if not b.is_header_only:
            raise ChainError(f"block {block_id} is not header-only")
        if not isinstance(kind, Full):
            raise ChainError("a revealed body must be a full block")
        b = replace(b, kind=kind)
        self._store(b)
        return b

    def discard(self, block_id: int) -> None:
        self[block_id]
        self._discarded.add(block_id)
        self._refresh(block_id)

    def is_discarded(self, block_id: int) -> bool:
        return block_id in self._discarded

    def _store(self, b: Block) -> None:
        old = self.blocks[b.id]
        self.blocks[b.id] = b
        if old.is_full != b.is_full:
            self._fix_depths(b.id)
        self._refresh(b.id)

    def _fix_depths(self, root: int) -> None:
        stack = [root]
        while stack:
            i = stack.pop()
            b = self.blocks[i]
            self._full_depth[i] = self._full_depth[b.parent] + b.is_full
            stack.extend(self._children[i])

    def _refresh(self, root: int) -> None:
        stack = [root]
        while stack:
            i = stack.pop()
            b = self.blocks[i]
            if b.parent is None:
                base = (True, True)
            else:
                base = (b.parent in self._eligible[0], b.parent in self._eligible[1])
            ok = b.published_at is not None and i not in self._discarded
            new = (ok and base[0] and not b.is_header_only, ok and base[1])
            changed = False
            for view in (0, 1):
                was = i in self._eligible[view]
                if new[view] != was:
                    changed = True
                    self._set_eligible(view, b, new[view])
            if changed or i == root:
                stack.extend(self._children[i])

    def _set_eligible(self, view: int, b: Block, flag: bool) -> None:
        levels = self._levels[view]
        if flag:
            self._eligible[view].add(b.id)
            levels.setdefault(b.height, set()).add(b.id)
            if b.height > self._top[view]:
                self._top[view] = b.height
        else:
            self._eligible[view].discard(b.id)
            levels[b.height].discard(b.id)
            top = self._top[view]
            while top > 0 and not levels.get(top):
                top -= 1
            self._top[view] = top

    # --- queries ------------------------------------------------------------

    def top_height(self, count_header_only: bool = False) -> int:
        return self._top[int(count_header_only)]

    def main_chain_tips(self, count_header_only: bool = False) -> frozenset[int]:
        view = int(count_header_only)
        return frozenset(self._levels[view].get(self._top[view], ()))

    def on_public_chain(self, block_id: int, count_header_only: bool = False) -> bool:
        """True if the block and all its ancestors are published and usable."""
        return block_id in self._eligible[int(count_header_only)]

    def full_depth(self, block_id: int) -> int:
        """Number of full blocks on the path from genesis (exclusive) to block_id."""
        return self._full_depth[block_id]

    def ancestor_path(self, tip: int) -> list[int]:
        if tip not in self.blocks:
            raise UnknownId(tip)
        path = []
        cur: Optional[int] = tip
        while cur is not None:
            path.append(cur)
            cur = self.blocks[cur].parent
        path.reverse()
        return path

    def is_ancestor(self, ancestor: int, block_id: int) -> bool:
        a = self[ancestor]
        cur = self[block_id]
        while cur.height > a.height:
            cur = self.blocks[cur.parent]
        return cur.id == a.id

    def copy(self) -> "BlockTree":
        new = BlockTree.__new__(BlockTree)
        new.blocks = dict(self.blocks)
        new.genesis = self.genesis
        new.tips = set(self.tips)
        new._children = {k: list(v) for k, v in self._children.items()}
        new._discarded = set(self._discarded)
        new._full_depth = dict(self._full_depth)
        new._eligible = (set(self._eligible[0]), set(self._eligible[1]))
        new._levels = tuple({h: set(s) for h, s in lv.items()} for lv in self._levels)
        new._top = list(self._top)
        return new


def append(tree: BlockTree, block: Block) -> BlockTree:
    return tree.append(block)


def main_chain_tips(tree: BlockTree, count_header_only: bool = False) -> frozenset[int]:
    return tree.main_chain_tips(count_header_only)


def ancestor_path(tree: BlockTree, tip: int) -> list[int]:
    return tree.ancestor_path(tip)


def first_published(tree: BlockTree, ids: Iterable[int]) -> int:
    """Deterministic pick among competing tips: earliest publication, then lowest id."""
    return min(ids, key=lambda i: (tree.blocks[i].published_at, i))
