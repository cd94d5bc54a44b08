"""Request scheduling for a single serving instance.

Two policies share one stepping interface (``enqueue`` / ``start_iteration`` /
``finish_iteration``) so a driver can interleave several instances on one
clock:

* ``IterationLevelScheduler`` re-selects its batch before every model
  iteration, lets finished requests leave immediately and new ones join at the
  next boundary, and prices iterations with selective batching.
* ``BatchLevelScheduler`` keeps a batch together until every member is done,
  pads finished members and returns all results at batch end.

Token accounting: the initiation iteration processes the whole prompt and
emits the first output token; each increment emits one more. A request with
``output_len`` tokens therefore runs for exactly ``output_len`` iterations and
feeds ``prompt_len + output_len - 1`` tokens through the model.
"""

from __future__ import annotations

import enum
import math
from collections import deque
from dataclasses import dataclass, field, replace
from typing import Iterable, Optional, Sequence

from .core import Request
from .errors import ContractError
from .kvcache import UnlimitedKV


class Phase(str, enum.Enum):
    INITIATION = "init"
    INCREMENT = "inc"
    PAD = "pad"  # finished member still occupying a rigid batch slot
    STALL = "stall"  # member that could not get KV memory this iteration


@dataclass(frozen=True)
class BatchEntry:
    req_id: int
    phase: Phase
    tokens: int
    context_len: int

    def __str__(self) -> str:
        return f"{self.req_id}:{self.phase.value}:{self.tokens}:{self.context_len}"


@dataclass(frozen=True)
class CostModel:
    """Analytic iteration time: fixed overhead + per token + per attended context token."""

    c0_ms: float = 1.0
    c1_ms_per_token: float = 0.01
    c2_ms_per_ctx_token: float = 0.001

    def __post_init__(self) -> None:
        for name in ("c0_ms", "c1_ms_per_token", "c2_ms_per_ctx_token"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise ContractError(f"cost.{name} must be finite and >= 0, got {v}")

    def scaled(self, k: float) -> "CostModel":
        return CostModel(self.c0_ms * k, self.c1_ms_per_token * k, self.c2_ms_per_ctx_token * k)


def iteration_cost(batch: Sequence[BatchEntry], cm: CostModel, padded: bool = False) -> float:
    """Milliseconds for one model iteration over ``batch``.

    Selective batching flattens tokens for the token-wise layers, so the linear
    term sees the summed token count. A rigidly padded batch pays for every
    slot at the longest member's token count.
    """
    if not batch:
        raise ContractError("iteration_cost needs a non-empty batch")
    ctx = sum(e.context_len for e in batch)
    if padded:
        tokens = len(batch) * max(e.tokens for e in batch)
    else:
        tokens = sum(e.tokens for e in batch)
    return cm.c0_ms + cm.c1_ms_per_token * tokens + cm.c2_ms_per_ctx_token * ctx


@dataclass
class IterationRecord:
    index: int
    start_ms: float
    cost_ms: float
    entries: list[BatchEntry]
    instance: int = 0
    kv_tokens: int = 0
    kv_slots: int = 0

    def composition(self) -> str:
        return ";".join(str(e) for e in self.entries)


@dataclass
class _Live:
    req: Request
    done: int = 0  # iterations completed
    finished: bool = False

    @property
    def next_is_initiation(self) -> bool:
        return self.done == 0


@dataclass
class RunResult:
    completed: list[Request] = field(default_factory=list)
    rejected: list[Request] = field(default_factory=list)
    trace: list[IterationRecord] = field(default_factory=list)
    deferred: set[int] = field(default_factory=set)

    def completion_times(self) -> dict[int, float]:
        return {r.id: r.completion_ms for r in self.completed}


class _Scheduler:
    padded = False

    def __init__(self, max_batch: int, cm: CostModel, kv=None, instance: int = 0):
        if max_batch < 1:
            raise ContractError("max_batch must be >= 1")
        self.max_batch = max_batch
        self.cm = cm
        self.kv = kv if kv is not None else UnlimitedKV()
        self.instance = instance
        self.queue: deque[Request] = deque()
        self.result = RunResult()
        self.blocked = False
        self._pending: Optional[IterationRecord] = None

    # -- driver interface --------------------------------------------------

    def enqueue(self, req: Request) -> None:
        self.queue.append(req)

    def has_work(self) -> bool:
        raise NotImplementedError

    def start_iteration(self, now: float) -> Optional[IterationRecord]:
        raise NotImplementedError

    def finish_iteration(self, end: float) -> list[Request]:
        raise NotImplementedError

    def force_progress(self) -> Request:
        raise NotImplementedError

    # -- helpers -----------------------------------------------------------

    def _record(self, now: float, entries: list[BatchEntry]) -> IterationRecord:
        active = [e.req_id for e in entries if e.phase in (Phase.INITIATION, Phase.INCREMENT)]
        cost = iteration_cost(entries, self.cm, padded=self.padded) + self.kv.extra_cost_ms(active)
        rec = IterationRecord(
            len(self.result.trace),
            now,
            cost,
            entries,
            self.instance,
            self.kv.tokens_stored(),
            self.kv.slots_held(),
        )
        self._pending = rec
        return rec

    def _try_admit(self, req: Request) -> Optional[bool]:
        """True admitted, False deferred, None rejected as never servable."""
        if not self.kv.fits_ever(req.prompt_len, req.total_tokens):
            self.result.rejected.append(req)
            return None
        if self.kv.admit(req.id, req.prompt_len):
            return True
        self.result.deferred.add(req.id)
        return False

    def _complete(self, live: _Live, end: float) -> Request:
        self.kv.release(live.req.id)
        done = replace(live.req, completion_ms=end)
        self.result.completed.append(done)
        return done


class IterationLevelScheduler(_Scheduler):
    def __init__(self, max_batch: int, cm: CostModel, kv=None, instance: int = 0):
        super().__init__(max_batch, cm, kv, instance)
        self.running: list[_Live] = []

    def has_work(self) -> bool:
        return bool(self.queue or self.running)

    def start_iteration(self, now: float) -> Optional[IterationRecord]:
        entries = []
        for live in self.running:
            p = live.req.prompt_len
            # running requests get memory before anything new is admitted
            if self.kv.append(live.req.id):
                entries.append(BatchEntry(live.req.id, Phase.INCREMENT, 1, p + live.done))
        while self.queue and len(self.running) < self.max_batch and self.queue[0].arrival_ms <= now:
            head = self.queue[0]
            admitted = self._try_admit(head)
            if admitted is False:
                break
            self.queue.popleft()
            if admitted:
                self.running.append(_Live(head))
                entries.append(BatchEntry(head.id, Phase.INITIATION, head.prompt_len, head.prompt_len))
        if not entries:
            self.blocked = bool(self.running) or bool(self.queue and self.queue[0].arrival_ms <= now)
            return None
        self.blocked = False
        return self._record(now, entries)

    def finish_iteration(self, end: float) -> list[Request]:
        rec = self._pending
        if rec is None:
            raise ContractError("finish_iteration without a started iteration")
        self._pending = None
        self.result.trace.append(rec)
        progressed = {e.req_id for e in rec.entries}
        finished = []
        still = []
        for live in self.running:
            if live.req.id in progressed:
                live.done += 1
            if live.done == live.req.output_len:
                finished.append(self._complete(live, end))
            else:
                still.append(live)
        self.running = still
        return finished

    def force_progress(self) -> Request:
        """Break a memory deadlock by rejecting the newest running (or head) request."""
        if self.running:
            victim = self.running.pop()
            self.kv.release(victim.req.id)
            req = victim.req
        elif self.queue:
            req = self.queue.popleft()
        else:
            raise ContractError("nothing to force")
        self.result.rejected.append(req)
        self.blocked = False
        return req


class BatchLevelScheduler(_Scheduler):
    padded = True

    def __init__(self, max_batch: int, cm: CostModel, kv=None, instance: int = 0):
        super().__init__(max_batch, cm, kv, instance)
        self.batch: list[_Live] = []

    def has_work(self) -> bool:
        return bool(self.queue or self.batch)

    def _form_batch(self, now: float) -> None:
        while self.queue and len(self.batch) < self.max_batch and self.queue[0].arrival_ms <= now:
            head = self.queue[0]
            admitted = self._try_admit(head)
            if admitted is False:
                break
            self.queue.popleft()
            if admitted:
                self.batch.append(_Live(head))

    def start_iteration(self, now: float) -> Optional[IterationRecord]:
        if not self.batch:
            self._form_batch(now)
        if not self.batch:
            self.blocked = bool(self.queue and self.queue[0].arrival_ms <= now)
            return None
        entries = []
        progressing = False
        for live in self.batch:
            p = live.req.prompt_len
            if live.finished:
                entries.append(BatchEntry(live.req.id, Phase.PAD, 0, p + live.done - 1))
            elif live.next_is_initiation:
                entries.append(BatchEntry(live.req.id, Phase.INITIATION, p, p))
                progressing = True
            elif self.kv.append(live.req.id):
                entries.append(BatchEntry(live.req.id, Phase.INCREMENT, 1, p + live.done))
                progressing = True
            else:
                entries.append(BatchEntry(live.req.id, Phase.STALL, 0, p + live.done - 1))
        if not progressing:
            self.blocked = True
            return None
        self.blocked = False
        return self._record(now, entries)

    def finish_iteration(self, end: float) -> list[Request]:
        rec = self._pending
        if rec is None:
            raise ContractError("finish_iteration without a started iteration")
        self._pending = None
        self.result.trace.append(rec)
        by_id = {live.req.id: live for live in self.batch}
        for e in rec.entries:
            if e.phase in (Phase.INITIATION, Phase.INCREMENT):
                live = by_id[e.req_id]
                live.done += 1
                live.finished = live.done == live.req.output_len
        if all(live.finished for live in self.batch):
            finished = [self._complete(live, end) for live in self.batch]
            self.batch = []
            return finished
        return []

    def force_progress(self) -> Request:
        unfinished = [live for live in self.batch if not live.finished]
        if unfinished:
            victim = unfinished[-1]
            self.batch.remove(victim)
            self.kv.release(victim.req.id)
            req = victim.req
        elif self.queue:
            req = self.queue.popleft()
        else:
            raise ContractError("nothing to force")
        self.result.rejected.append(req)
        self.blocked = False
        return req


SCHEDULERS = {"iteration": IterationLevelScheduler, "batch": BatchLevelScheduler}


def make_scheduler(mode: str, max_batch: int, cm: CostModel, kv=None, instance: int = 0) -> _Scheduler:
    try:
        cls = SCHEDULERS[mode]
    except KeyError:
        raise ContractError(f"unknown scheduler mode {mode!r}") from None
    return cls(max_batch, cm, kv, instance)


def drive(sched: _Scheduler, workload: Iterable[Request]) -> RunResult:
    """Run one scheduler over a workload on its own clock."""
    pending = deque(sorted(workload, key=lambda r: (r.arrival_ms, r.id)))
    now = 0.0
    while pending or sched.has_work():
        while pending and pending[0].arrival_ms <= now:
            sched.enqueue(pending.popleft())
        rec = sched.start_iteration(now)
        if rec is None:
            if sched.blocked:
                sched.force_progress()
                continue
            if pending:
                now = max(now, pending[0].arrival_ms)
                continue
            break
        end = now + rec.cost_ms
        sched.finish_iteration(end)
        now = end
    sched.result.completed.sort(key=lambda r: r.id)
    return sched.result


def run_iteration_level(workload: Iterable[Request], max_batch: int, cm: CostModel, kv=None) -> RunResult:
    return drive(IterationLevelScheduler(max_batch, cm, kv), workload)


def run_batch_level(workload: Iterable[Request], max_batch: int, cm: CostModel, kv=None) -> RunResult:
    return drive(BatchLevelScheduler(max_batch, cm, kv), workload)


def normalized_latency(requests: Sequence[Request]) -> float:
    """Mean over requests of end-to-end latency divided by output length (ms/token)."""
    if not requests:
        raise ContractError("normalized_latency needs at least one request")
    total = 0.0
    for r in requests:
        if r.completion_ms is None:
            raise ContractError(f"request {r.id} has not completed")
        total += (r.completion_ms - r.arrival_ms) / r.output_len
    return total / len(requests)


def per_request_normalized(requests: Sequence[Request]) -> list[float]:
    return [(r.completion_ms - r.arrival_ms) / r.output_len for r in requests]
