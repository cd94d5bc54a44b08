"""Distributed KV memory with a global debt ledger.

Each serving instance owns an ``RManager`` that manages its local rBlocks
(a paged pool) and maps logical rBlocks to physical locations, local or on a
creditor instance. A single ``GManager`` keeps the debt ledger: per-instance
free space from heartbeats, plus who lent how many rBlocks to whom. When an
instance runs short it asks the gManager for up to three creditors and then
requests memory from them in order until its demand is covered.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .attention import aggregate_micro, micro_attention_partial
from .errors import ContractError, LookupFailure, NumericDomainError, RegistrationError
from .kvcache import KVHandle, PagedKVCache, blocks_needed

STALE_HEARTBEATS = 3
MAX_RECOMMENDATIONS = 3

TIER_SAME_DEVICE = 0
TIER_SAME_NODE = 1
TIER_REMOTE = 2

DEFAULT_COMM_MS = {TIER_SAME_DEVICE: 0.0005, TIER_SAME_NODE: 0.002, TIER_REMOTE: 0.01}


@dataclass(frozen=True)
class InstanceSpec:
    id: int
    capacity_blocks: int
    device: int = -1  # -1: a device of its own
    node: int = 0


@dataclass(frozen=True)
class RBlock:
    rblock_id: int
    instance_id: int
    device_id: int
    physical_id: int
    capacity: int


@dataclass
class LedgerRow:
    instance_id: int
    capacity: int
    available: int
    lent_to: dict[int, int] = field(default_factory=dict)
    borrowed_from: dict[int, int] = field(default_factory=dict)
    last_heartbeat_ms: float = 0.0

    @property
    def lent_total(self) -> int:
        return sum(self.lent_to.values())

    @property
    def borrowed_total(self) -> int:
        return sum(self.borrowed_from.values())


@dataclass(frozen=True)
class CreditorScore:
    tier: int
    comm_ms: float
    available: int
    instance_id: int

    def key(self) -> tuple:
        return (self.tier, self.comm_ms, -self.available, self.instance_id)


class GManager:
    """Global coordinator: heartbeats in, creditor recommendations out."""

    def __init__(self, heartbeat_ms: float = 50.0, comm_ms: Optional[dict[int, float]] = None):
        if heartbeat_ms <= 0:
            raise ContractError("heartbeat_ms must be > 0")
        self.heartbeat_ms = heartbeat_ms
        self.comm_ms = dict(DEFAULT_COMM_MS if comm_ms is None else comm_ms)
        self.ledger: dict[int, LedgerRow] = {}
        self.specs: dict[int, InstanceSpec] = {}

    def register(self, spec: InstanceSpec, now_ms: float = 0.0) -> None:
        if spec.id in self.ledger:
            raise RegistrationError(f"instance {spec.id} already registered")
        self.specs[spec.id] = spec
        self.ledger[spec.id] = LedgerRow(spec.id, spec.capacity_blocks, spec.capacity_blocks, last_heartbeat_ms=now_ms)

    def row(self, instance: int) -> LedgerRow:
        try:
            return self.ledger[instance]
        except KeyError:
            raise RegistrationError(f"instance {instance} is not registered") from None

    def heartbeat(self, instance: int, free_rblocks: int, now_ms: float) -> LedgerRow:
        row = self.row(instance)
        row.available = free_rblocks
        row.last_heartbeat_ms = now_ms
        return row

    def is_live(self, instance: int, now_ms: float) -> bool:
        return now_ms - self.row(instance).last_heartbeat_ms <= STALE_HEARTBEATS * self.heartbeat_ms

    def tier(self, a: int, b: int) -> int:
        sa, sb = self.specs[a], self.specs[b]
        if sa.device >= 0 and sa.device == sb.device and sa.node == sb.node:
            return TIER_SAME_DEVICE
        if sa.node == sb.node:
            return TIER_SAME_NODE
        return TIER_REMOTE

    def link_ms(self, a: int, b: int) -> float:
        """Communication cost of moving one rBlock between two instances."""
        return self.comm_ms[self.tier(a, b)]

    def score(self, debtor: int, creditor: int) -> CreditorScore:
        return CreditorScore(
            self.tier(debtor, creditor), self.link_ms(debtor, creditor), self.ledger[creditor].available, creditor
        )

    def recommend_creditors(self, debtor: int, demand_rblocks: int, now_ms: float) -> list[int]:
        """Up to three live instances with free space, best locality and cost first."""
        self.row(debtor)
        scores = [
            self.score(debtor, cid)
            for cid, row in self.ledger.items()
            if cid != debtor and row.available > 0 and self.is_live(cid, now_ms)
        ]
        scores.sort(key=CreditorScore.key)
        return [s.instance_id for s in scores[:MAX_RECOMMENDATIONS]]

    def record_grant(self, creditor: int, debtor: int, count: int, creditor_free: int) -> None:
        c, d = self.row(creditor), self.row(debtor)
        c.lent_to[debtor] = c.lent_to.get(debtor, 0) + count
        d.borrowed_from[creditor] = d.borrowed_from.get(creditor, 0) + count
        c.available = creditor_free

    def record_return(self, creditor: int, debtor: int, count: int, creditor_free: int) -> None:
        c, d = self.row(creditor), self.row(debtor)
        owed = c.lent_to.get(debtor, 0)
        if count > owed:
            raise ContractError(f"instance {debtor} owes {creditor} only {owed} rBlocks, not {count}")
        for table, key in ((c.lent_to, debtor), (d.borrowed_from, creditor)):
            table[key] -= count
            if table[key] == 0:
                del table[key]
        c.available = creditor_free

    def edges(self) -> list[tuple[int, int, int]]:
        return sorted((c, d, n) for c, row in self.ledger.items() for d, n in row.lent_to.items())


class RManager:
    """Per-instance rBlock manager over a local paged pool."""

    def __init__(self, spec: InstanceSpec, block_size: int = 16):
        self.spec = spec
        self.id = spec.id
        self.device = spec.device if spec.device >= 0 else 1000 + spec.id
        self.block_size = block_size
        self.cache = PagedKVCache(spec.capacity_blocks, block_size)
        self.lent_out: dict[int, list[int]] = {}

    # local accounting
    @property
    def capacity(self) -> int:
        return self.spec.capacity_blocks

    @property
    def free_local(self) -> int:
        return self.cache.num_free_local

    @property
    def locally_used(self) -> int:
        return self.cache.num_allocated_local

    @property
    def lent_total(self) -> int:
        return sum(len(v) for v in self.lent_out.values())

    @property
    def borrowed_total(self) -> int:
        return self.cache.num_borrowed

    def borrowed_from(self) -> dict[int, int]:
        out: dict[int, int] = {}
        for block in self.cache.blocks.values():
            if block.origin is not None:
                out[block.origin[0]] = out.get(block.origin[0], 0) + 1
        return out

    def lend(self, debtor: int, count: int) -> list[int]:
        ids = self.cache.lend(count)
        self.lent_out.setdefault(debtor, []).extend(ids)
        return ids

    def take_back(self, debtor: int, physical_ids: Sequence[int]) -> None:
        held = self.lent_out.get(debtor, [])
        for pid in physical_ids:
            held.remove(pid)
        if not held:
            self.lent_out.pop(debtor, None)
        self.cache.unlend(list(physical_ids))

    def accept(self, creditor: "RManager", physical_ids: Sequence[int]) -> list[int]:
        return self.cache.attach_borrowed([(creditor.id, creditor.device, pid) for pid in physical_ids])

    def free_borrowed_from(self, creditor: int) -> list[int]:
        return [bid for bid in self.cache.free_borrowed() if self.cache.blocks[bid].origin[0] == creditor]

    def rblock(self, logical_id: int) -> RBlock:
        block = self.cache.blocks.get(logical_id)
        if block is None:
            raise LookupFailure(f"rBlock {logical_id} is not mapped on instance {self.id}")
        if block.origin is None:
            return RBlock(logical_id, self.id, self.device, logical_id, self.block_size)
        creditor, device, physical = block.origin
        return RBlock(logical_id, creditor, device, physical, self.block_size)


def resolve_rblock(rmanager: RManager, logical_id: int) -> tuple[int, int, bool]:
    """(device, physical address, remote?) of a logical rBlock."""
    rb = rmanager.rblock(logical_id)
    return rb.device_id, rb.physical_id, rb.instance_id != rmanager.id


class DistMemCluster:
    """gManager plus one rManager per instance; serializes every mutation."""

    def __init__(
        self,
        instances: Iterable[InstanceSpec],
        block_size: int = 16,
        heartbeat_ms: float = 50.0,
        comm_ms: Optional[dict[int, float]] = None,
    ):
        self.gmanager = GManager(heartbeat_ms, comm_ms)
        self.rmanagers: dict[int, RManager] = {}
        self.block_size = block_size
        for spec in instances:
            self.gmanager.register(spec)
            self.rmanagers[spec.id] = RManager(spec, block_size)
        self.borrow_events = 0
        self.remote_ms = 0.0

    def rm(self, instance: int) -> RManager:
        try:
            return self.rmanagers[instance]
        except KeyError:
            raise RegistrationError(f"instance {instance} is not registered") from None

    @property
    def total_capacity(self) -> int:
        return sum(r.capacity for r in self.rmanagers.values())

    def heartbeat(self, instance: int, now_ms: float) -> LedgerRow:
        return self.gmanager.heartbeat(instance, self.rm(instance).free_local, now_ms)

    def heartbeat_all(self, now_ms: float) -> None:
        for iid in sorted(self.rmanagers):
            self.heartbeat(iid, now_ms)

    def recommend_creditors(self, debtor: int, demand: int, now_ms: float) -> list[int]:
        return self.gmanager.recommend_creditors(debtor, demand, now_ms)

    def borrow(self, debtor: int, demand: int, now_ms: float) -> list[tuple[int, int]]:
        """Ask recommended creditors in order; partial grants are kept."""
        if demand < 1:
            raise ContractError("borrow demand must be >= 1")
        d = self.rm(debtor)
        grants = []
        remaining = demand
        for cid in self.gmanager.recommend_creditors(debtor, demand, now_ms):
            creditor = self.rmanagers[cid]
            free = creditor.free_local
            if free == 0:
                # stale recommendation: the creditor filled up since its heartbeat
                continue
            count = min(free, remaining)
            physical = creditor.lend(debtor, count)
            d.accept(creditor, physical)
            self.gmanager.record_grant(cid, debtor, count, creditor.free_local)
            grants.append((cid, count))
            self.borrow_events += 1
            remaining -= count
            if remaining == 0:
                break
        return grants

    def reclaim(self, debtor: int, creditor: int, count: int) -> None:
        """Return ``count`` unused rBlocks borrowed by ``debtor`` to ``creditor``."""
        if count == 0:
            return
        owed = self.gmanager.row(creditor).lent_to.get(debtor, 0)
        if count > owed or count < 0:
            raise ContractError(f"instance {debtor} owes {creditor} {owed} rBlocks, cannot reclaim {count}")
        d, c = self.rm(debtor), self.rm(creditor)
        free = d.free_borrowed_from(creditor)
        if len(free) < count:
            raise ContractError(f"only {len(free)} of the rBlocks borrowed from {creditor} are unused")
        origins = d.cache.detach_borrowed(free[:count])
        c.take_back(debtor, [o[2] for o in origins])
        self.gmanager.record_return(creditor, debtor, count, c.free_local)

    def return_unused(self, debtor: int) -> int:
        """Reclaim every currently unused borrowed rBlock of ``debtor``."""
        returned = 0
        d = self.rm(debtor)
        for creditor in sorted(self.gmanager.row(debtor).borrowed_from):
            n = len(d.free_borrowed_from(creditor))
            if n:
                self.reclaim(debtor, creditor, n)
                returned += n
        return returned

    def remote_cost_ms(self, instance: int, logical_ids: Iterable[int]) -> float:
        """Communication time for reading the given rBlocks once."""
        rm = self.rm(instance)
        total = 0.0
        for lid in logical_ids:
            block = rm.cache.blocks[lid]
            if block.origin is not None:
                total += self.gmanager.link_ms(instance, block.origin[0])
        return total

    def check_invariants(self) -> None:
        """Double-entry ledger, conservation and pool consistency; raises AssertionError."""
        ledger = self.gmanager.ledger
        for a, row in ledger.items():
            for b, n in row.lent_to.items():
                assert n > 0, f"zero ledger entry {a}->{b}"
                assert ledger[b].borrowed_from.get(a, 0) == n, f"ledger mismatch {a}->{b}"
            for b, n in row.borrowed_from.items():
                assert ledger[b].lent_to.get(a, 0) == n, f"ledger mismatch {b}->{a}"
        total = 0
        for iid, rm in self.rmanagers.items():
            rm.cache.check_invariants()
            assert rm.free_local + rm.locally_used + rm.lent_total == rm.capacity, f"instance {iid} leaks blocks"
            assert rm.lent_total == ledger[iid].lent_total
            for debtor, ids in rm.lent_out.items():
                assert len(ids) == ledger[iid].lent_to.get(debtor, 0)
            assert rm.borrowed_from() == ledger[iid].borrowed_from, f"instance {iid} borrow map drift"
            total += rm.free_local + rm.locally_used + rm.lent_total
        assert total == self.total_capacity

    def snapshot_rows(self) -> list[dict]:
        rows = []
        for iid in sorted(self.rmanagers):
            rm = self.rmanagers[iid]
            rows.append(
                {
                    "kind": "instance",
                    "instance_id": iid,
                    "capacity": rm.capacity,
                    "free": rm.free_local,
                    "locally_used": rm.locally_used,
                    "lent_total": rm.lent_total,
                    "borrowed_total": rm.borrowed_total,
                }
            )
        for c, d, n in self.gmanager.edges():
            rows.append({"kind": "edge", "creditor": c, "debtor": d, "count": n})
        return rows


class BorrowingKVHandle(KVHandle):
    """Scheduler handle that borrows rBlocks from peers when the local pool is short."""

    def __init__(self, cluster: DistMemCluster, instance: int, enabled: bool = True):
        super().__init__(cluster.rm(instance).cache)
        self.cluster = cluster
        self.instance = instance
        self.enabled = enabled
        self.clock = 0.0

    def fits_ever(self, prompt_len: int, total_tokens: int) -> bool:
        limit = self.cluster.total_capacity if self.enabled else self.cache.capacity_blocks
        return blocks_needed(total_tokens, self.cache.block_size) <= limit

    def may_gain_capacity(self) -> bool:
        return self.enabled

    def _ensure(self, blocks: int) -> bool:
        short = blocks - self.cache.num_free
        if short <= 0:
            return True
        if not self.enabled:
            return False
        self.cluster.borrow(self.instance, short, self.clock)
        return self.cache.num_free >= blocks

    def admit(self, req_id: int, prompt_len: int) -> bool:
        if not self._ensure(blocks_needed(prompt_len, self.cache.block_size)):
            self._give_back()
            self.cache.rejected_admissions += 1
            return False
        return super().admit(req_id, prompt_len)

    def append(self, req_id: int) -> bool:
        seq = self.seqs[req_id]
        length = self.cache.lengths[seq]
        tail_shared = length % self.cache.block_size and self.cache.refcount(self.cache.tables[seq][-1]) > 1
        need = 1 if length % self.cache.block_size == 0 or tail_shared else 0
        if need and not self._ensure(need):
            return False
        return super().append(req_id)

    def release(self, req_id: int) -> None:
        super().release(req_id)
        self._give_back()

    def _give_back(self) -> None:
        if self.enabled:
            self.cluster.return_unused(self.instance)

    def extra_cost_ms(self, req_ids) -> float:
        if not self.enabled:
            return 0.0
        total = 0.0
        for rid in req_ids:
            total += self.cluster.remote_cost_ms(self.instance, self.cache.tables[self.seqs[rid]])
        self.cluster.remote_ms += total
        return total


def dist_attention(q, keys, values, owners: Sequence[int]) -> np.ndarray:
    """Attention where token t's KV lives on instance ``owners[t]``.

    One micro-attention partial per owning instance, merged afterwards.
    """
    k = np.asarray(keys, dtype=np.float64)
    v = np.asarray(values, dtype=np.float64)
    if len(owners) != k.shape[0]:
        raise NumericDomainError("one owner per token expected")
    if k.shape[0] == 0:
        raise NumericDomainError("dist_attention needs at least one token")
    owners_arr = np.asarray(owners)
    partials = []
    for inst in sorted(set(owners_arr.tolist())):
        sel = owners_arr == inst
        partials.append(micro_attention_partial(q, k[sel], v[sel]))
    return aggregate_micro(partials)


def dual_role_demo(capacity: int = 32) -> tuple[DistMemCluster, list[list[tuple[int, int]]]]:
    """Five instances where instance 3 lends to 1 while borrowing from 0.

    Instances 1, 2 and 4 start full, 3 is nearly full and 0 is mostly idle.
    Instance 3 borrows first (only 0 has room), then instance 1 borrows from
    both 0 and 3. Returns the cluster and the grants of each borrow call.
    """
    cluster = DistMemCluster([InstanceSpec(i, capacity, device=i, node=0) for i in range(5)], block_size=16)
    bs = cluster.block_size
    usage = {0: 4, 1: capacity, 2: capacity, 3: capacity - 4, 4: capacity}
    for iid, blocks in usage.items():
        cluster.rm(iid).cache.admit_sequence(blocks * bs)
    cluster.heartbeat_all(0.0)
    grants = [cluster.borrow(3, 10, 0.0)]
    cluster.heartbeat_all(1.0)
    grants.append(cluster.borrow(1, 20, 1.0))
    return cluster, grants
