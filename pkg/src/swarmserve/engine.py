"""Discrete-event serving simulation.

A scenario binds a workload, a scheduler policy, a KV policy and optionally
distributed KV memory. Requests are dispatched round-robin to instances; all
instances share one event queue ordered by ``(time_ms, sequence number)``.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field, replace
from heapq import heappop, heappush
from pathlib import Path
from typing import Any, Mapping, Optional, Sequence

import numpy as np

from .core import (
    LengthDist,
    Request,
    Rng,
    SwarmTopology,
    WorkloadSpec,
    ArrivalSpec,
    _num,
    check_keys,
    generate_workload,
    topology_from_dict,
    topology_to_dict,
    workload_from_dict,
)
from .distmem import (
    DEFAULT_COMM_MS,
    TIER_REMOTE,
    TIER_SAME_DEVICE,
    TIER_SAME_NODE,
    BorrowingKVHandle,
    DistMemCluster,
    InstanceSpec,
)
from .errors import ConfigError, ContractError, SimError
from .kvcache import KVHandle, UnlimitedKV, make_cache
from .scheduler import SCHEDULERS, CostModel, IterationRecord, make_scheduler

KV_POLICIES = ("paged", "contiguous")
MODE_WORDS = {
    "iteration": ("scheduler", "iteration"),
    "batch": ("scheduler", "batch"),
    "paged": ("kv", "paged"),
    "contiguous": ("kv", "contiguous"),
    "distmem": ("distmem", True),
    "local": ("distmem", False),
}
LINK_KEYS = {"same_device": TIER_SAME_DEVICE, "same_node": TIER_SAME_NODE, "remote": TIER_REMOTE}

REPORT_COLUMNS = [
    "scenario",
    "seed",
    "mode",
    "mean_norm_latency_ms_per_tok",
    "p50",
    "p99",
    "throughput_tok_s",
    "kv_utilization_pct",
    "rejected",
    "borrow_events",
    "remote_ms",
    "queued",
]


@dataclass(frozen=True)
class KVConfig:
    policy: str = "paged"
    capacity_blocks: Optional[int] = None  # None: memory is not modelled
    block_size: int = 16
    max_len: int = 2048


@dataclass(frozen=True)
class SchedulerConfig:
    mode: str = "iteration"
    max_batch: int = 8


@dataclass(frozen=True)
class DistMemConfig:
    enabled: bool = False
    instances: tuple[InstanceSpec, ...] = ()
    heartbeat_ms: float = 50.0
    link_ms: tuple[tuple[int, float], ...] = tuple(sorted(DEFAULT_COMM_MS.items()))


@dataclass(frozen=True)
class Scenario:
    workload: WorkloadSpec
    kv: KVConfig = field(default_factory=KVConfig)
    scheduler: SchedulerConfig = field(default_factory=SchedulerConfig)
    distmem: DistMemConfig = field(default_factory=DistMemConfig)
    cost: CostModel = field(default_factory=CostModel)
    seed: int = 0
    topology: Optional[SwarmTopology] = None
    name: str = "scenario"

    def __post_init__(self) -> None:
        validate_scenario(self)

    @property
    def mode(self) -> str:
        return "+".join(
            (self.scheduler.mode, self.kv.policy, "distmem" if self.distmem.enabled else "local")
        )

    def instance_specs(self) -> tuple[InstanceSpec, ...]:
        if self.distmem.instances:
            return self.distmem.instances
        return (InstanceSpec(0, self.kv.capacity_blocks or 0),)

    def with_mode(self, mode: str) -> "Scenario":
        """Apply '+'-joined mode words such as ``"batch+contiguous"``."""
        s = self
        for word in mode.split("+"):
            try:
                part, value = MODE_WORDS[word]
            except KeyError:
                raise ConfigError("mode", f"unknown mode word {word!r}; expected one of {sorted(MODE_WORDS)}") from None
            if part == "scheduler":
                s = replace(s, scheduler=replace(s.scheduler, mode=value))
            elif part == "kv":
                s = replace(s, kv=replace(s.kv, policy=value))
            else:
                s = replace(s, distmem=replace(s.distmem, enabled=value))
        return s


def validate_scenario(s: Scenario) -> None:
    if s.kv.policy not in KV_POLICIES:
        raise ConfigError("kv.policy", f"expected one of {KV_POLICIES}, got {s.kv.policy!r}")
    if s.kv.capacity_blocks is not None and s.kv.capacity_blocks < 0:
        raise ConfigError("kv.capacity_blocks", "must be >= 0")
    if s.kv.block_size < 1:
        raise ConfigError("kv.block_size", "must be >= 1")
    if s.kv.max_len < 1:
        raise ConfigError("kv.max_len", "must be >= 1")
    if s.scheduler.mode not in SCHEDULERS:
        raise ConfigError("scheduler.mode", f"expected one of {sorted(SCHEDULERS)}, got {s.scheduler.mode!r}")
    if s.scheduler.max_batch < 1:
        raise ConfigError("scheduler.max_batch", "must be >= 1")
    ids = [inst.id for inst in s.distmem.instances]
    if len(set(ids)) != len(ids):
        raise ConfigError("distmem.instances", "instance ids must be unique")
    for i, inst in enumerate(s.distmem.instances):
        if inst.capacity_blocks < 0:
            raise ConfigError(f"distmem.instances[{i}].capacity_blocks", "must be >= 0")
    if s.distmem.heartbeat_ms <= 0:
        raise ConfigError("distmem.heartbeat_ms", "must be > 0")
    if s.kv.capacity_blocks is None and not s.distmem.instances and (s.distmem.enabled or s.kv.policy == "contiguous"):
        raise ConfigError("kv.capacity_blocks", "required for contiguous reservation and for distmem")
    if s.distmem.enabled and s.kv.policy != "paged":
        raise ConfigError("distmem.enabled", "borrowing needs the paged kv policy")


# ---------------------------------------------------------------------------
# Loading
# ---------------------------------------------------------------------------

TOP_KEYS = ["num_blocks", "servers", "workload", "kv", "scheduler", "distmem", "cost", "seed"]


def _opt_int(data: Mapping[str, Any], key: str, path: str) -> Optional[int]:
    if data.get(key) is None:
        return None
    return _num(data, key, path, kind=int)


def _bool(data: Mapping[str, Any], key: str, path: str, default: bool) -> bool:
    value = data.get(key, default)
    if not isinstance(value, bool):
        raise ConfigError(f"{path}.{key}", f"expected true or false, got {value!r}")
    return value


def _str(data: Mapping[str, Any], key: str, path: str, default: str) -> str:
    value = data.get(key, default)
    if not isinstance(value, str):
        raise ConfigError(f"{path}.{key}", f"expected a string, got {value!r}")
    return value


def scenario_from_dict(data: Mapping[str, Any], name: str = "scenario") -> Scenario:
    check_keys(data, TOP_KEYS, "")
    topology = None
    if "servers" in data or "num_blocks" in data:
        topology = topology_from_dict(data.get("num_blocks"), data.get("servers"))
    workload = workload_from_dict(data.get("workload", {"num_requests": 0}))

    kv_raw = data.get("kv", {})
    check_keys(kv_raw, ["policy", "capacity_blocks", "block_size", "max_len"], "kv")
    kv = KVConfig(
        policy=_str(kv_raw, "policy", "kv", "paged"),
        capacity_blocks=_opt_int(kv_raw, "capacity_blocks", "kv"),
        block_size=_num(kv_raw, "block_size", "kv", 16, kind=int),
        max_len=_num(kv_raw, "max_len", "kv", 2048, kind=int),
    )

    sc_raw = data.get("scheduler", {})
    check_keys(sc_raw, ["mode", "max_batch"], "scheduler")
    sched = SchedulerConfig(_str(sc_raw, "mode", "scheduler", "iteration"), _num(sc_raw, "max_batch", "scheduler", 8, kind=int))

    dm_raw = data.get("distmem", {})
    check_keys(dm_raw, ["enabled", "instances", "heartbeat_ms", "link_ms"], "distmem")
    instances = []
    raw_instances = dm_raw.get("instances", [])
    if not isinstance(raw_instances, list):
        raise ConfigError("distmem.instances", "expected an array")
    for i, raw in enumerate(raw_instances):
        path = f"distmem.instances[{i}]"
        check_keys(raw, ["id", "capacity_blocks", "device", "node"], path)
        instances.append(
            InstanceSpec(
                _num(raw, "id", path, kind=int),
                _num(raw, "capacity_blocks", path, kind=int),
                _num(raw, "device", path, -1, kind=int),
                _num(raw, "node", path, 0, kind=int),
            )
        )
    link_raw = dm_raw.get("link_ms", {})
    check_keys(link_raw, list(LINK_KEYS), "distmem.link_ms")
    link = dict(DEFAULT_COMM_MS)
    for key, tier in LINK_KEYS.items():
        link[tier] = _num(link_raw, key, "distmem.link_ms", DEFAULT_COMM_MS[tier])
        if link[tier] < 0:
            raise ConfigError(f"distmem.link_ms.{key}", "must be >= 0")
    dm = DistMemConfig(
        enabled=_bool(dm_raw, "enabled", "distmem", False),
        instances=tuple(instances),
        heartbeat_ms=_num(dm_raw, "heartbeat_ms", "distmem", 50.0),
        link_ms=tuple(sorted(link.items())),
    )

    cost_raw = data.get("cost", {})
    check_keys(cost_raw, ["c0_ms", "c1_ms_per_token", "c2_ms_per_ctx_token"], "cost")
    defaults = CostModel()
    try:
        cost = CostModel(
            _num(cost_raw, "c0_ms", "cost", defaults.c0_ms),
            _num(cost_raw, "c1_ms_per_token", "cost", defaults.c1_ms_per_token),
            _num(cost_raw, "c2_ms_per_ctx_token", "cost", defaults.c2_ms_per_ctx_token),
        )
    except ContractError as exc:
        raise ConfigError("cost", str(exc)) from None
    seed = _num(data, "seed", "", 0, kind=int)
    return Scenario(workload, kv, sched, dm, cost, seed, topology, name)


def load_scenario(path: str | Path) -> Scenario:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError("scenario", f"cannot read {path}: {exc.strerror}") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError("scenario", f"invalid JSON at line {exc.lineno}: {exc.msg}") from None
    return scenario_from_dict(data, path.stem)


def _dist_to_dict(d: LengthDist) -> dict[str, Any]:
    if d.kind == "uniform":
        return {"kind": "uniform", "low": d.low, "high": d.high}
    return {"kind": "lognormal", "mu": d.mu, "sigma": d.sigma, "max_len": d.max_len}


def scenario_to_dict(s: Scenario) -> dict[str, Any]:
    w = s.workload
    workload: dict[str, Any] = {
        "num_requests": w.num_requests,
        "arrival": {"kind": w.arrival.kind, "interval_ms": w.arrival.interval_ms, "rate_per_s": w.arrival.rate_per_s},
        "prompt": _dist_to_dict(w.prompt),
        "output": _dist_to_dict(w.output),
    }
    if w.long_fraction > 0:
        workload["long_fraction"] = w.long_fraction
        workload["long_prompt"] = _dist_to_dict(w.long_prompt)
        workload["long_output"] = _dist_to_dict(w.long_output)
    tiers = dict(s.distmem.link_ms)
    out: dict[str, Any] = {}
    if s.topology is not None:
        out.update(topology_to_dict(s.topology))
    out.update(
        {
            "workload": workload,
            "kv": {k: v for k, v in asdict(s.kv).items() if v is not None},
            "scheduler": asdict(s.scheduler),
            "distmem": {
                "enabled": s.distmem.enabled,
                "instances": [asdict(i) for i in s.distmem.instances],
                "heartbeat_ms": s.distmem.heartbeat_ms,
                "link_ms": {key: tiers[tier] for key, tier in LINK_KEYS.items()},
            },
            "cost": asdict(s.cost),
            "seed": s.seed,
        }
    )
    return out


# ---------------------------------------------------------------------------
# Simulation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MetricsReport:
    scenario: str
    seed: int
    mode: str
    num_requests: int
    completed: int
    mean_norm_latency_ms_per_tok: float
    p50: float
    p99: float
    throughput_tok_s: float
    kv_utilization_pct: float
    rejected: int
    queued: int
    borrow_events: int
    remote_ms: float
    makespan_ms: float

    def csv_row(self) -> dict[str, Any]:
        d = asdict(self)
        return {c: d[c] for c in REPORT_COLUMNS}


@dataclass
class SimulationResult:
    report: MetricsReport
    trace: list[IterationRecord]
    completed: list[Request]
    rejected: list[Request]
    ledger_rows: list[dict] = field(default_factory=list)
    cluster: Optional[DistMemCluster] = None


_ARRIVAL, _END, _HEARTBEAT = 0, 1, 2


class _Simulation:
    def __init__(self, scenario: Scenario, workload: list[Request], audit: bool = False):
        s = scenario
        self.s = s
        self.audit = audit
        self.workload = workload
        specs = s.instance_specs()
        self.ids = [spec.id for spec in specs]
        self.cluster: Optional[DistMemCluster] = None
        self.handles = {}
        if s.kv.capacity_blocks is None and not s.distmem.instances:
            self.handles[self.ids[0]] = UnlimitedKV()
        elif s.kv.policy == "paged":
            self.cluster = DistMemCluster(specs, s.kv.block_size, s.distmem.heartbeat_ms, dict(s.distmem.link_ms))
            for iid in self.ids:
                self.handles[iid] = BorrowingKVHandle(self.cluster, iid, enabled=s.distmem.enabled)
        else:
            for spec in specs:
                self.handles[spec.id] = KVHandle(make_cache("contiguous", spec.capacity_blocks, s.kv.block_size, s.kv.max_len))
        self.scheds = {
            iid: make_scheduler(s.scheduler.mode, s.scheduler.max_batch, s.cost, self.handles[iid], iid) for iid in self.ids
        }
        self.heap: list = []
        self.seq = 0
        self.in_flight: set[int] = set()
        self.waiting: set[int] = set()
        self.pending_arrivals = 0
        self.clock = 0.0

    def push(self, t: float, kind: int, payload) -> None:
        heappush(self.heap, (t, self.seq, kind, payload))
        self.seq += 1

    def borrowing(self) -> bool:
        return self.cluster is not None and self.s.distmem.enabled

    def try_start(self, iid: int, now: float) -> None:
        if iid in self.in_flight:
            return
        sched = self.scheds[iid]
        handle = self.handles[iid]
        refreshed = False
        while True:
            if isinstance(handle, BorrowingKVHandle):
                handle.clock = now
            rec = sched.start_iteration(now)
            if rec is not None:
                self.in_flight.add(iid)
                self.waiting.discard(iid)
                self.push(now + rec.cost_ms, _END, iid)
                return
            if not sched.blocked:
                self.waiting.discard(iid)
                return
            if self.borrowing():
                if self.in_flight:
                    # a peer may finish and free memory; retry at its iteration end
                    self.waiting.add(iid)
                    return
                if not refreshed:
                    self.cluster.heartbeat_all(now)
                    refreshed = True
                    continue
            sched.force_progress()
            if self.borrowing():
                self.cluster.return_unused(iid)

    def retry_waiting(self, now: float) -> None:
        for iid in sorted(self.waiting):
            self.try_start(iid, now)

    def busy(self) -> bool:
        return self.pending_arrivals > 0 or any(s.has_work() for s in self.scheds.values())

    def run(self) -> None:
        n = len(self.ids)
        for i, req in enumerate(self.workload):
            self.push(req.arrival_ms, _ARRIVAL, (self.ids[i % n], req))
        self.pending_arrivals = len(self.workload)
        if self.borrowing():
            for iid in self.ids:
                self.push(0.0, _HEARTBEAT, iid)
        while self.heap:
            t, _, kind, payload = heappop(self.heap)
            if t < self.clock:
                raise SimError("event scheduled in the past")
            self.clock = t
            if kind == _ARRIVAL:
                iid, req = payload
                self.pending_arrivals -= 1
                self.scheds[iid].enqueue(req)
                self.try_start(iid, t)
            elif kind == _END:
                self.in_flight.discard(payload)
                self.scheds[payload].finish_iteration(t)
                self.try_start(payload, t)
                self.retry_waiting(t)
            else:
                self.cluster.heartbeat(payload, t)
                self.retry_waiting(t)
                if self.busy():
                    self.push(t + self.s.distmem.heartbeat_ms, _HEARTBEAT, payload)
            if self.audit and self.cluster is not None:
                self.cluster.check_invariants()
        if any(s.has_work() for s in self.scheds.values()):
            raise SimError("simulation ended with unfinished requests")


def _percentile(values: np.ndarray, q: float) -> float:
    return float(np.percentile(values, q)) if values.size else 0.0


def run_scenario(
    scenario: Scenario, workload: Optional[list[Request]] = None, audit: bool = False
) -> SimulationResult:
    """Simulate a scenario end to end; the result depends only on the scenario.

    ``audit`` re-checks the distributed-memory ledger after every event.
    """
    if workload is None:
        workload = generate_workload(scenario.workload, Rng(scenario.seed))
    sim = _Simulation(scenario, workload, audit)
    sim.run()

    completed = sorted((r for s in sim.scheds.values() for r in s.result.completed), key=lambda r: r.id)
    rejected = sorted((r for s in sim.scheds.values() for r in s.result.rejected), key=lambda r: r.id)
    queued = sum(len(s.result.deferred) for s in sim.scheds.values())
    trace = sorted((rec for s in sim.scheds.values() for rec in s.result.trace), key=lambda r: (r.start_ms, r.instance, r.index))

    norm = np.array([(r.completion_ms - r.arrival_ms) / r.output_len for r in completed], dtype=np.float64)
    if completed:
        makespan = max(r.completion_ms for r in completed) - min(r.arrival_ms for r in workload)
    else:
        makespan = 0.0
    generated = sum(r.output_len for r in completed)
    throughput = generated / (makespan / 1000.0) if makespan > 0 else 0.0
    stored = sum(rec.kv_tokens * rec.cost_ms for rec in trace)
    held = sum(rec.kv_slots * rec.cost_ms for rec in trace)
    utilization = 100.0 if held == 0 else 100.0 * stored / held

    report = MetricsReport(
        scenario=scenario.name,
        seed=scenario.seed,
        mode=scenario.mode,
        num_requests=len(workload),
        completed=len(completed),
        mean_norm_latency_ms_per_tok=float(norm.mean()) if norm.size else 0.0,
        p50=_percentile(norm, 50),
        p99=_percentile(norm, 99),
        throughput_tok_s=throughput,
        kv_utilization_pct=utilization,
        rejected=len(rejected),
        queued=queued,
        borrow_events=sim.cluster.borrow_events if sim.cluster else 0,
        remote_ms=sim.cluster.remote_ms if sim.cluster else 0.0,
        makespan_ms=makespan,
    )
    ledger = sim.cluster.snapshot_rows() if sim.borrowing() else []
    return SimulationResult(report, trace, completed, rejected, ledger, sim.cluster)


# ---------------------------------------------------------------------------
# Mode comparison
# ---------------------------------------------------------------------------

RATIO_METRICS = [
    "mean_norm_latency_ms_per_tok",
    "p50",
    "p99",
    "throughput_tok_s",
    "kv_utilization_pct",
    "rejected",
    "queued",
    "borrow_events",
    "remote_ms",
]


def ratio(value: float, base: float) -> float:
    if base == 0:
        return 1.0 if value == 0 else math.inf
    return value / base


@dataclass
class Comparison:
    modes: list[str]
    reports: list[MetricsReport]
    ratios: list[dict[str, float]]

    def rows(self) -> list[dict[str, Any]]:
        out = []
        for mode, rep, rat in zip(self.modes, self.reports, self.ratios):
            row = {"mode": mode}
            row.update({m: getattr(rep, m) for m in RATIO_METRICS})
            row.update({f"{m}_ratio": rat[m] for m in RATIO_METRICS})
            out.append(row)
        return out


def compare_modes(scenario: Scenario, modes: Sequence[str]) -> Comparison:
    """Run each mode on the same request stream; ratios are relative to the first mode."""
    if len(modes) < 2:
        raise ConfigError("mode", "compare needs at least two modes")
    workload = generate_workload(scenario.workload, Rng(scenario.seed))
    reports = [run_scenario(scenario.with_mode(m), workload).report for m in modes]
    base = reports[0]
    ratios = [{m: ratio(getattr(r, m), getattr(base, m)) for m in RATIO_METRICS} for r in reports]
    return Comparison(list(modes), reports, ratios)


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------


def report_json(report: MetricsReport) -> str:
    return json.dumps(asdict(report), indent=2, sort_keys=True) + "\n"


def _csv(columns: Sequence[str], rows: Sequence[Mapping[str, Any]]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(columns), lineterminator="\n")
    w.writeheader()
    for row in rows:
        w.writerow({k: _fmt(v) for k, v in row.items()})
    return buf.getvalue()


def _fmt(v: Any) -> Any:
    if isinstance(v, float):
        return repr(round(v, 9))
    return v


def report_csv(reports: Sequence[MetricsReport]) -> str:
    return _csv(REPORT_COLUMNS, [r.csv_row() for r in reports])


def comparison_csv(comparison: Comparison) -> str:
    rows = comparison.rows()
    return _csv(list(rows[0]), rows)


TRACE_COLUMNS = ["iter_index", "start_ms", "cost_ms", "batch", "instance"]


def trace_csv(trace: Sequence[IterationRecord]) -> str:
    rows = [
        {"iter_index": r.index, "start_ms": r.start_ms, "cost_ms": r.cost_ms, "batch": r.composition(), "instance": r.instance}
        for r in trace
    ]
    return _csv(TRACE_COLUMNS, rows)


LEDGER_COLUMNS = ["kind", "instance_id", "capacity", "free", "locally_used", "lent_total", "borrowed_total", "creditor", "debtor", "count"]


def ledger_csv(rows: Sequence[Mapping[str, Any]]) -> str:
    return _csv(LEDGER_COLUMNS, rows)


# ---------------------------------------------------------------------------
# Presets
# ---------------------------------------------------------------------------


def _uniform(a: int, b: int) -> LengthDist:
    return LengthDist.uniform(a, b)


def preset_rr_example() -> Scenario:
    """Two requests at t=0, one short and one long, sharing a batch of two."""
    return Scenario(
        workload=WorkloadSpec(2, ArrivalSpec("fixed", 0.0), _uniform(1, 1), _uniform(2, 2)),
        scheduler=SchedulerConfig("iteration", 2),
        name="rr_example",
    )


def rr_example_workload() -> list[Request]:
    return [Request(0, 0.0, 1, 2), Request(1, 0.0, 1, 6)]


def preset_heavy_tail(seed: int = 0) -> Scenario:
    """Short prompts with heavy-tailed output lengths under steady load."""
    return Scenario(
        workload=WorkloadSpec(
            200,
            ArrivalSpec("poisson", rate_per_s=100.0),
            _uniform(1, 64),
            LengthDist.lognormal(math.log(32), 1.0, 512),
        ),
        scheduler=SchedulerConfig("iteration", 8),
        seed=seed,
        name="heavy_tail",
    )


def preset_fragmentation(seed: int = 0) -> Scenario:
    """Lognormal lengths (mean about 227) against a 2048-token reservation."""
    mu = math.log(200)
    return Scenario(
        workload=WorkloadSpec(
            400,
            ArrivalSpec("poisson", rate_per_s=50.0),
            LengthDist.lognormal(mu, 0.5, 2048),
            LengthDist.lognormal(mu, 0.5, 2048),
        ),
        kv=KVConfig("paged", 2048, 16, 2048),
        scheduler=SchedulerConfig("iteration", 16),
        seed=seed,
        name="fragmentation",
    )


def preset_long_context(seed: int = 0, long_fraction: float = 0.02) -> Scenario:
    """Four instances with tight KV pools and an occasional very long request."""
    instances = tuple(InstanceSpec(i, 256, device=i, node=i // 2) for i in range(4))
    return Scenario(
        workload=WorkloadSpec(
            300,
            ArrivalSpec("poisson", rate_per_s=20.0),
            _uniform(16, 256),
            LengthDist.lognormal(math.log(128), 0.5, 512),
            long_fraction,
            _uniform(3000, 6000),
            LengthDist.lognormal(math.log(128), 0.5, 512),
        ),
        kv=KVConfig("paged", 256, 16, 2048),
        scheduler=SchedulerConfig("iteration", 8),
        distmem=DistMemConfig(False, instances, 20.0),
        seed=seed,
        name="long_context",
    )


PRESETS = {
    "heavy_tail": preset_heavy_tail,
    "fragmentation": preset_fragmentation,
    "long_context": preset_long_context,
}
