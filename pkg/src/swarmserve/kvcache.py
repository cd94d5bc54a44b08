"""KV-cache memory managers.

``PagedKVCache`` splits every sequence's KV into fixed-size blocks addressed
through a per-sequence block table, grows one block at a time and shares
blocks between forked sequences with copy-on-write. ``ContiguousKVCache`` is
the baseline that reserves ``max_len`` token slots per sequence up front.

KV contents are opaque per-token tags, so tests can read back what was written
without carrying real tensors around.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Any, Hashable, Optional

from .errors import ContractError, OutOfBlocks, UnsupportedOperation

DEFAULT_BLOCK_SIZE = 16


def blocks_needed(tokens: int, block_size: int) -> int:
    return -(-tokens // block_size)


@dataclass
class PhysicalBlock:
    refcount: int = 0
    tags: list = field(default_factory=list)
    # where the block physically lives when it was borrowed from another instance
    origin: Optional[Hashable] = None

    @property
    def fill(self) -> int:
        return len(self.tags)


@dataclass(frozen=True)
class CacheStats:
    policy: str
    capacity_blocks: int
    block_size: int
    utilization_pct: float
    internal_frag_tokens: int
    rejected_admissions: int
    tokens_stored: int
    slots_held: int


class PagedKVCache:
    policy = "paged"

    def __init__(self, capacity_blocks: int, block_size: int = DEFAULT_BLOCK_SIZE):
        if capacity_blocks < 0:
            raise ContractError("capacity_blocks must be >= 0")
        if block_size < 1:
            raise ContractError("block_size must be >= 1")
        self.capacity_blocks = capacity_blocks
        self.block_size = block_size
        self.blocks: dict[int, PhysicalBlock] = {i: PhysicalBlock() for i in range(capacity_blocks)}
        self._free_local: deque[int] = deque(range(capacity_blocks))
        self._free_borrowed: deque[int] = deque()
        self.lent: set[int] = set()
        self.tables: dict[int, list[int]] = {}
        self.lengths: dict[int, int] = {}
        self._next_seq = 0
        self._next_block = capacity_blocks
        self.rejected_admissions = 0
        self.copies = 0

    # -- pool accounting -------------------------------------------------

    @property
    def num_free(self) -> int:
        return len(self._free_local) + len(self._free_borrowed)

    @property
    def num_free_local(self) -> int:
        return len(self._free_local)

    @property
    def num_allocated(self) -> int:
        return sum(1 for b in self.blocks.values() if b.refcount > 0)

    @property
    def num_allocated_local(self) -> int:
        return sum(1 for b in self.blocks.values() if b.refcount > 0 and b.origin is None)

    @property
    def num_borrowed(self) -> int:
        return sum(1 for b in self.blocks.values() if b.origin is not None)

    @property
    def num_lent(self) -> int:
        return len(self.lent)

    def _take_block(self) -> int:
        if self._free_local:
            bid = self._free_local.popleft()
        elif self._free_borrowed:
            bid = self._free_borrowed.popleft()
        else:
            raise OutOfBlocks("no free KV block")
        block = self.blocks[bid]
        block.refcount = 1
        block.tags = []
        return bid

    def _release_block(self, bid: int) -> bool:
        block = self.blocks[bid]
        block.refcount -= 1
        if block.refcount > 0:
            return False
        block.tags = []
        (self._free_local if block.origin is None else self._free_borrowed).append(bid)
        return True

    # -- sequence operations ----------------------------------------------

    def can_admit(self, prompt_len: int) -> bool:
        return blocks_needed(prompt_len, self.block_size) <= self.num_free

    def admit_sequence(self, prompt_len: int, tags: Optional[list] = None) -> int:
        """Allocate ``ceil(prompt_len / block_size)`` blocks for a new sequence."""
        if prompt_len < 1:
            raise ContractError("prompt_len must be >= 1")
        need = blocks_needed(prompt_len, self.block_size)
        if need > self.num_free:
            self.rejected_admissions += 1
            raise OutOfBlocks(f"need {need} blocks, {self.num_free} free")
        tags = list(tags) if tags is not None else [None] * prompt_len
        if len(tags) != prompt_len:
            raise ContractError("one tag per prompt token expected")
        table = []
        for i in range(need):
            bid = self._take_block()
            self.blocks[bid].tags = tags[i * self.block_size : (i + 1) * self.block_size]
            table.append(bid)
        seq = self._next_seq
        self._next_seq += 1
        self.tables[seq] = table
        self.lengths[seq] = prompt_len
        return seq

    def _live(self, seq: int) -> list[int]:
        table = self.tables.get(seq)
        if table is None:
            raise ContractError(f"sequence {seq} is not live")
        return table

    def append_token(self, seq: int, tag: Any = None) -> None:
        """Write one token; allocates a block at a boundary, copies a shared tail block."""
        table = self._live(seq)
        length = self.lengths[seq]
        if length % self.block_size == 0:
            table.append(self._take_block())
        else:
            last = table[-1]
            if self.blocks[last].refcount > 1:
                fresh = self._take_block()
                self.blocks[fresh].tags = list(self.blocks[last].tags)
                self._release_block(last)
                table[-1] = fresh
                self.copies += 1
        self.blocks[table[-1]].tags.append(tag)
        self.lengths[seq] = length + 1

    def fork_sequence(self, seq: int) -> int:
        table = self._live(seq)
        for bid in table:
            self.blocks[bid].refcount += 1
        child = self._next_seq
        self._next_seq += 1
        self.tables[child] = list(table)
        self.lengths[child] = self.lengths[seq]
        return child

    def free_sequence(self, seq: int) -> list[int]:
        """Drop a sequence; returns the physical blocks that went back to the pool."""
        table = self._live(seq)
        freed = [bid for bid in table if self._release_block(bid)]
        del self.tables[seq]
        del self.lengths[seq]
        return freed

    def read_token(self, seq: int, pos: int) -> Any:
        table = self._live(seq)
        if not 0 <= pos < self.lengths[seq]:
            raise ContractError(f"position {pos} outside sequence of length {self.lengths[seq]}")
        return self.blocks[table[pos // self.block_size]].tags[pos % self.block_size]

    def translate(self, seq: int, pos: int) -> tuple[int, int]:
        """Logical position -> (physical block id, offset)."""
        table = self._live(seq)
        if not 0 <= pos < self.lengths[seq]:
            raise ContractError(f"position {pos} outside sequence of length {self.lengths[seq]}")
        return table[pos // self.block_size], pos % self.block_size

    def block_table(self, seq: int) -> list[int]:
        return list(self._live(seq))

    def refcount(self, bid: int) -> int:
        return self.blocks[bid].refcount

    # -- lending / borrowing hooks used by distmem ------------------------

    def lend(self, count: int) -> list[int]:
        """Withhold ``count`` free local blocks so another instance can use them."""
        if count > len(self._free_local):
            raise OutOfBlocks(f"cannot lend {count} blocks, {len(self._free_local)} free")
        ids = [self._free_local.popleft() for _ in range(count)]
        self.lent.update(ids)
        return ids

    def unlend(self, ids: list[int]) -> None:
        for bid in ids:
            if bid not in self.lent:
                raise ContractError(f"block {bid} is not lent out")
            self.lent.remove(bid)
            self._free_local.append(bid)

    def attach_borrowed(self, origins: list[Hashable]) -> list[int]:
        """Make remote blocks allocatable here; one new local id per origin."""
        ids = []
        for origin in origins:
            bid = self._next_block
            self._next_block += 1
            self.blocks[bid] = PhysicalBlock(origin=origin)
            self._free_borrowed.append(bid)
            ids.append(bid)
        return ids

    def free_borrowed(self) -> list[int]:
        return list(self._free_borrowed)

    def detach_borrowed(self, ids: list[int]) -> list[Hashable]:
        free = set(self._free_borrowed)
        origins = []
        for bid in ids:
            if bid not in free:
                raise ContractError(f"borrowed block {bid} is not free")
            origins.append(self.blocks.pop(bid).origin)
        drop = set(ids)
        self._free_borrowed = deque(b for b in self._free_borrowed if b not in drop)
        return origins

    def remote_blocks(self, seq: int) -> int:
        return sum(1 for bid in self._live(seq) if self.blocks[bid].origin is not None)

    # -- metrics -----------------------------------------------------------

    def tokens_stored(self) -> int:
        return sum(b.fill for b in self.blocks.values() if b.refcount > 0)

    def slots_held(self) -> int:
        return self.num_allocated * self.block_size

    def utilization(self) -> float:
        held = self.slots_held()
        return 100.0 if held == 0 else 100.0 * self.tokens_stored() / held

    def stats(self) -> CacheStats:
        stored, held = self.tokens_stored(), self.slots_held()
        return CacheStats(
            self.policy,
            self.capacity_blocks,
            self.block_size,
            100.0 if held == 0 else 100.0 * stored / held,
            held - stored,
            self.rejected_admissions,
            stored,
            held,
        )

    def check_invariants(self) -> None:
        """Full scan; raises AssertionError on any broken invariant."""
        counts: dict[int, int] = {}
        for seq, table in self.tables.items():
            for bid in table:
                counts[bid] = counts.get(bid, 0) + 1
            for bid in table[:-1]:
                assert self.blocks[bid].fill == self.block_size, f"seq {seq}: non-tail block {bid} not full"
            expect = self.lengths[seq] - (len(table) - 1) * self.block_size
            assert self.blocks[table[-1]].fill >= expect > 0, f"seq {seq}: tail block fill mismatch"
        for bid, block in self.blocks.items():
            assert block.refcount == counts.get(bid, 0), f"block {bid}: refcount {block.refcount} != {counts.get(bid, 0)}"
            assert 0 <= block.fill <= self.block_size
        free = set(self._free_local) | set(self._free_borrowed)
        allocated = {bid for bid, b in self.blocks.items() if b.refcount > 0}
        assert not free & allocated and not free & self.lent and not allocated & self.lent
        assert len(free) + len(allocated) + len(self.lent) == len(self.blocks)
        local = sum(1 for b in self.blocks.values() if b.origin is None)
        assert local == self.capacity_blocks


class ContiguousKVCache:
    """Per-sequence reservation of ``max_len`` slots out of a flat token budget."""

    policy = "contiguous"

    def __init__(self, capacity_blocks: int, block_size: int = DEFAULT_BLOCK_SIZE, max_len: int = 2048):
        if capacity_blocks < 0 or block_size < 1 or max_len < 1:
            raise ContractError("capacity_blocks >= 0, block_size >= 1 and max_len >= 1 required")
        self.capacity_blocks = capacity_blocks
        self.block_size = block_size
        self.capacity_tokens = capacity_blocks * block_size
        self.max_len = max_len
        self.reservations: dict[int, list] = {}
        self._next_seq = 0
        self.rejected_admissions = 0

    @property
    def reserved(self) -> int:
        return len(self.reservations) * self.max_len

    @property
    def free_slots(self) -> int:
        return self.capacity_tokens - self.reserved

    def can_admit(self, prompt_len: int) -> bool:
        return self.max_len <= self.free_slots and prompt_len <= self.max_len

    def admit_sequence(self, prompt_len: int, tags: Optional[list] = None) -> int:
        if prompt_len < 1:
            raise ContractError("prompt_len must be >= 1")
        if prompt_len > self.max_len:
            raise ContractError(f"prompt of {prompt_len} tokens exceeds max_len {self.max_len}")
        if self.max_len > self.free_slots:
            self.rejected_admissions += 1
            raise OutOfBlocks(f"need {self.max_len} slots, {self.free_slots} free")
        seq = self._next_seq
        self._next_seq += 1
        self.reservations[seq] = list(tags) if tags is not None else [None] * prompt_len
        return seq

    def _live(self, seq: int) -> list:
        res = self.reservations.get(seq)
        if res is None:
            raise ContractError(f"sequence {seq} is not live")
        return res

    def append_token(self, seq: int, tag: Any = None) -> None:
        res = self._live(seq)
        if len(res) >= self.max_len:
            raise ContractError(f"sequence {seq} outgrew its {self.max_len}-slot reservation")
        res.append(tag)

    def fork_sequence(self, seq: int) -> int:
        raise UnsupportedOperation("contiguous reservations cannot share KV between sequences")

    def free_sequence(self, seq: int) -> list[int]:
        self._live(seq)
        del self.reservations[seq]
        return []

    def read_token(self, seq: int, pos: int) -> Any:
        res = self._live(seq)
        if not 0 <= pos < len(res):
            raise ContractError(f"position {pos} outside sequence of length {len(res)}")
        return res[pos]

    def length(self, seq: int) -> int:
        return len(self._live(seq))

    def tokens_stored(self) -> int:
        return sum(len(r) for r in self.reservations.values())

    def slots_held(self) -> int:
        return self.reserved

    def utilization(self) -> float:
        held = self.slots_held()
        return 100.0 if held == 0 else 100.0 * self.tokens_stored() / held

    def stats(self) -> CacheStats:
        stored, held = self.tokens_stored(), self.slots_held()
        return CacheStats(
            self.policy,
            self.capacity_blocks,
            self.block_size,
            100.0 if held == 0 else 100.0 * stored / held,
            held - stored,
            self.rejected_admissions,
            stored,
            held,
        )

    def check_invariants(self) -> None:
        for seq, res in self.reservations.items():
            assert len(res) <= self.max_len, f"seq {seq} exceeds reservation"
        assert self.reserved <= self.capacity_tokens


def make_cache(policy: str, capacity_blocks: int, block_size: int = DEFAULT_BLOCK_SIZE, max_len: int = 2048):
    if policy == "paged":
        return PagedKVCache(capacity_blocks, block_size)
    if policy == "contiguous":
        return ContiguousKVCache(capacity_blocks, block_size, max_len)
    raise ContractError(f"unknown kv policy {policy!r}")


# ---------------------------------------------------------------------------
# Scheduler-facing handles
# ---------------------------------------------------------------------------


class KVHandle:
    """Maps request ids onto cache sequences for the scheduler.

    ``admit``/``append`` return False instead of raising when memory is short,
    so the scheduler can queue or stall the request.
    """

    def __init__(self, cache):
        self.cache = cache
        self.seqs: dict[int, int] = {}

    def fits_ever(self, prompt_len: int, total_tokens: int) -> bool:
        c = self.cache
        if isinstance(c, ContiguousKVCache):
            return total_tokens <= c.max_len <= c.capacity_tokens
        return blocks_needed(total_tokens, c.block_size) <= c.capacity_blocks

    def may_gain_capacity(self) -> bool:
        return False

    def admit(self, req_id: int, prompt_len: int) -> bool:
        try:
            self.seqs[req_id] = self.cache.admit_sequence(prompt_len)
        except OutOfBlocks:
            return False
        return True

    def append(self, req_id: int) -> bool:
        try:
            self.cache.append_token(self.seqs[req_id])
        except OutOfBlocks:
            return False
        return True

    def release(self, req_id: int) -> None:
        self.cache.free_sequence(self.seqs.pop(req_id))

    def extra_cost_ms(self, req_ids) -> float:
        return 0.0

    def tokens_stored(self) -> int:
        return self.cache.tokens_stored()

    def slots_held(self) -> int:
        return self.cache.slots_held()


class UnlimitedKV:
    """Handle for scheduler runs that ignore memory entirely."""

    def __init__(self):
        self.lengths: dict[int, int] = {}

    def fits_ever(self, prompt_len: int, total_tokens: int) -> bool:
        return True

    def may_gain_capacity(self) -> bool:
        return False

    def admit(self, req_id: int, prompt_len: int) -> bool:
        self.lengths[req_id] = prompt_len
        return True

    def append(self, req_id: int) -> bool:
        self.lengths[req_id] += 1
        return True

    def release(self, req_id: int) -> None:
        del self.lengths[req_id]

    def extra_cost_ms(self, req_ids) -> float:
        return 0.0

    def tokens_stored(self) -> int:
        return sum(self.lengths.values())

    def slots_held(self) -> int:
        return self.tokens_stored()
