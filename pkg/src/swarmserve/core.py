"""Shared domain types, seeded random streams and synthetic workloads."""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass, field
from typing import Any, Mapping, Optional, Sequence

import numpy as np

from .errors import ConfigError, TopologyError

RESAMPLE_LIMIT = 64


# ---------------------------------------------------------------------------
# Swarm description
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ServerSpec:
    """A swarm server hosting the contiguous block interval ``[start, end)``.

    ``per_block_ms`` is the time to push one token step through one block;
    the server's throughput in blocks/ms is ``1 / per_block_ms``.
    """

    id: int
    rtt_ms: float
    per_block_ms: float
    hosted: tuple[int, int]

    def __post_init__(self) -> None:
        if not math.isfinite(self.rtt_ms) or self.rtt_ms < 0:
            raise ConfigError(f"servers[{self.id}].rtt_ms", f"must be >= 0, got {self.rtt_ms}")
        if not math.isfinite(self.per_block_ms) or self.per_block_ms <= 0:
            raise ConfigError(
                f"servers[{self.id}].per_block_ms", f"must be > 0, got {self.per_block_ms}"
            )
        start, end = self.hosted
        if not 0 <= start < end:
            raise ConfigError(f"servers[{self.id}].blocks", f"need 0 <= start < end, got {self.hosted}")

    @property
    def start(self) -> int:
        return self.hosted[0]

    @property
    def end(self) -> int:
        return self.hosted[1]

    @property
    def throughput(self) -> float:
        return 1.0 / self.per_block_ms

    def hosts(self, block: int) -> bool:
        return self.hosted[0] <= block < self.hosted[1]


@dataclass(frozen=True)
class SwarmTopology:
    num_blocks: int
    servers: tuple[ServerSpec, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "servers", tuple(self.servers))
        if self.num_blocks < 1:
            raise TopologyError("num_blocks", f"must be >= 1, got {self.num_blocks}")
        ids = [s.id for s in self.servers]
        if len(set(ids)) != len(ids):
            raise TopologyError("servers", "duplicate server ids")
        for s in self.servers:
            if s.end > self.num_blocks:
                raise TopologyError(
                    f"servers[{s.id}].blocks", f"end {s.end} exceeds num_blocks {self.num_blocks}"
                )
        covered = [False] * self.num_blocks
        for s in self.servers:
            for b in range(s.start, s.end):
                covered[b] = True
        missing = [b for b, ok in enumerate(covered) if not ok]
        if missing:
            raise TopologyError("servers", f"blocks {missing} are not hosted by any server")

    @property
    def num_servers(self) -> int:
        return len(self.servers)

    def host_mask(self) -> np.ndarray:
        """Boolean servers x blocks matrix, True where the server hosts the block."""
        mask = np.zeros((self.num_servers, self.num_blocks), dtype=bool)
        for row, s in enumerate(self.servers):
            mask[row, s.start : s.end] = True
        return mask

    def server(self, server_id: int) -> ServerSpec:
        for s in self.servers:
            if s.id == server_id:
                return s
        raise KeyError(server_id)


# ---------------------------------------------------------------------------
# Requests and workloads
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Request:
    id: int
    arrival_ms: float
    prompt_len: int
    output_len: int
    completion_ms: Optional[float] = None

    def __post_init__(self) -> None:
        if self.prompt_len < 1:
            raise ConfigError(f"request[{self.id}].prompt_len", "must be >= 1")
        if self.output_len < 1:
            raise ConfigError(f"request[{self.id}].output_len", "must be >= 1")
        if self.completion_ms is not None and self.completion_ms < self.arrival_ms:
            raise ConfigError(f"request[{self.id}].completion_ms", "precedes arrival")

    @property
    def total_tokens(self) -> int:
        """KV footprint once generation finishes (last output token is never fed back)."""
        return self.prompt_len + self.output_len - 1


@dataclass(frozen=True)
class LengthDist:
    """Token-length distribution: ``uniform`` on [low, high] or truncated ``lognormal``."""

    kind: str
    low: int = 1
    high: int = 1
    mu: float = 0.0
    sigma: float = 1.0
    max_len: int = 2048

    def __post_init__(self) -> None:
        if self.kind == "uniform":
            if not 1 <= self.low <= self.high:
                raise ConfigError("low", f"need 1 <= low <= high, got [{self.low}, {self.high}]")
        elif self.kind == "lognormal":
            if not (math.isfinite(self.sigma) and self.sigma > 0):
                raise ConfigError("sigma", f"must be > 0, got {self.sigma}")
            if not math.isfinite(self.mu):
                raise ConfigError("mu", "must be finite")
            if self.max_len < 1:
                raise ConfigError("max_len", "must be >= 1")
        else:
            raise ConfigError("kind", f"unknown distribution {self.kind!r}")

    @property
    def cap(self) -> int:
        return self.high if self.kind == "uniform" else self.max_len

    @classmethod
    def uniform(cls, low: int, high: int) -> "LengthDist":
        return cls("uniform", low=low, high=high)

    @classmethod
    def lognormal(cls, mu: float, sigma: float, max_len: int = 2048) -> "LengthDist":
        return cls("lognormal", mu=mu, sigma=sigma, max_len=max_len)


@dataclass(frozen=True)
class ArrivalSpec:
    kind: str = "fixed"
    interval_ms: float = 0.0
    rate_per_s: float = 1.0

    def __post_init__(self) -> None:
        if self.kind == "fixed":
            if not self.interval_ms >= 0:
                raise ConfigError("arrival.interval_ms", "must be >= 0")
        elif self.kind == "poisson":
            if not self.rate_per_s > 0:
                raise ConfigError("arrival.rate_per_s", "must be > 0")
        else:
            raise ConfigError("arrival.kind", f"unknown arrival process {self.kind!r}")


@dataclass(frozen=True)
class WorkloadSpec:
    """Synthetic request stream.

    A ``long_fraction`` of requests draw their lengths from the ``long_*``
    distributions instead, which models long-context traffic mixes.
    """

    num_requests: int
    arrival: ArrivalSpec = field(default_factory=ArrivalSpec)
    prompt: LengthDist = field(default_factory=lambda: LengthDist.uniform(1, 1))
    output: LengthDist = field(default_factory=lambda: LengthDist.uniform(1, 1))
    long_fraction: float = 0.0
    long_prompt: Optional[LengthDist] = None
    long_output: Optional[LengthDist] = None

    def __post_init__(self) -> None:
        if self.num_requests < 0:
            raise ConfigError("workload.num_requests", "must be >= 0")
        if not 0.0 <= self.long_fraction <= 1.0:
            raise ConfigError("workload.long_fraction", "must be in [0, 1]")
        if self.long_fraction > 0 and (self.long_prompt is None or self.long_output is None):
            raise ConfigError("workload.long", "long_fraction > 0 needs long_prompt and long_output")


class Rng:
    """Seeded root with named, independent sub-streams.

    ``Rng(42).stream("workload")`` always yields the same generator state, and
    streams with different names never share state.
    """

    def __init__(self, seed: int):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF

    def stream(self, name: str) -> np.random.Generator:
        key = zlib.crc32(name.encode("utf-8"))
        seq = np.random.SeedSequence(entropy=self.seed, spawn_key=(key,))
        return np.random.Generator(np.random.PCG64(seq))

    def __repr__(self) -> str:
        return f"Rng(seed={self.seed})"


def sample_output_length(dist: LengthDist, rng: np.random.Generator) -> int:
    """Draw one token length in ``[1, dist.cap]``.

    Lognormal draws above the cap are redrawn up to ``RESAMPLE_LIMIT`` times,
    then clamped, so runtime stays bounded.
    """
    if dist.kind == "uniform":
        return int(rng.integers(dist.low, dist.high + 1))
    value = 0
    for _ in range(RESAMPLE_LIMIT):
        value = int(round(float(rng.lognormal(dist.mu, dist.sigma))))
        if value <= dist.max_len:
            break
    return max(1, min(value, dist.max_len))


def generate_workload(spec: WorkloadSpec, rng: Rng | np.random.Generator) -> list[Request]:
    gen = rng.stream("workload") if isinstance(rng, Rng) else rng
    requests: list[Request] = []
    t = 0.0
    for i in range(spec.num_requests):
        if spec.arrival.kind == "fixed":
            t = i * spec.arrival.interval_ms
        elif i > 0:
            t += float(gen.exponential(1000.0 / spec.arrival.rate_per_s))
        is_long = spec.long_fraction > 0 and float(gen.random()) < spec.long_fraction
        prompt_dist = spec.long_prompt if is_long else spec.prompt
        output_dist = spec.long_output if is_long else spec.output
        prompt = sample_output_length(prompt_dist, gen)
        output = sample_output_length(output_dist, gen)
        requests.append(Request(i, t, prompt, output))
    requests.sort(key=lambda r: (r.arrival_ms, r.id))
    return requests


# ---------------------------------------------------------------------------
# Dict parsing (scenario files)
# ---------------------------------------------------------------------------


def check_keys(data: Mapping[str, Any], allowed: Sequence[str], path: str) -> None:
    if not isinstance(data, Mapping):
        raise ConfigError(path, f"expected an object, got {type(data).__name__}")
    unknown = sorted(set(data) - set(allowed))
    if unknown:
        where = f"{path}.{unknown[0]}" if path else unknown[0]
        raise ConfigError(where, "unknown key")


def _num(data: Mapping[str, Any], key: str, path: str, default: Any = None, kind=float):
    if key not in data:
        if default is None:
            raise ConfigError(f"{path}.{key}" if path else key, "missing required key")
        return default
    value = data[key]
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{path}.{key}" if path else key, f"expected a number, got {value!r}")
    if kind is int:
        if float(value) != int(value):
            raise ConfigError(f"{path}.{key}" if path else key, f"expected an integer, got {value!r}")
        return int(value)
    return float(value)


def length_dist_from_dict(data: Mapping[str, Any], path: str) -> LengthDist:
    check_keys(data, ["kind", "low", "high", "mu", "sigma", "max_len"], path)
    kind = data.get("kind")
    try:
        if kind == "uniform":
            return LengthDist.uniform(_num(data, "low", path, kind=int), _num(data, "high", path, kind=int))
        if kind == "lognormal":
            return LengthDist.lognormal(
                _num(data, "mu", path),
                _num(data, "sigma", path),
                _num(data, "max_len", path, 2048, kind=int),
            )
    except ConfigError as exc:
        if exc.path.startswith(path):
            raise
        raise ConfigError(f"{path}.{exc.path}", exc.message) from None
    raise ConfigError(f"{path}.kind", f"expected 'uniform' or 'lognormal', got {kind!r}")


def workload_from_dict(data: Mapping[str, Any], path: str = "workload") -> WorkloadSpec:
    check_keys(
        data,
        ["num_requests", "arrival", "prompt", "output", "long_fraction", "long_prompt", "long_output"],
        path,
    )
    arrival_raw = data.get("arrival", {"kind": "fixed", "interval_ms": 0})
    check_keys(arrival_raw, ["kind", "interval_ms", "rate_per_s"], f"{path}.arrival")
    arrival = ArrivalSpec(
        kind=arrival_raw.get("kind", "fixed"),
        interval_ms=_num(arrival_raw, "interval_ms", f"{path}.arrival", 0.0),
        rate_per_s=_num(arrival_raw, "rate_per_s", f"{path}.arrival", 1.0),
    )
    long_prompt = data.get("long_prompt")
    long_output = data.get("long_output")
    return WorkloadSpec(
        num_requests=_num(data, "num_requests", path, kind=int),
        arrival=arrival,
        prompt=length_dist_from_dict(data.get("prompt", {"kind": "uniform", "low": 1, "high": 1}), f"{path}.prompt"),
        output=length_dist_from_dict(data.get("output", {"kind": "uniform", "low": 1, "high": 1}), f"{path}.output"),
        long_fraction=_num(data, "long_fraction", path, 0.0),
        long_prompt=None if long_prompt is None else length_dist_from_dict(long_prompt, f"{path}.long_prompt"),
        long_output=None if long_output is None else length_dist_from_dict(long_output, f"{path}.long_output"),
    )


def topology_from_dict(num_blocks: Any, servers: Any) -> SwarmTopology:
    if isinstance(num_blocks, bool) or not isinstance(num_blocks, int):
        raise ConfigError("num_blocks", f"expected an integer, got {num_blocks!r}")
    if not isinstance(servers, list) or not servers:
        raise ConfigError("servers", "expected a non-empty array")
    specs = []
    for i, raw in enumerate(servers):
        path = f"servers[{i}]"
        check_keys(raw, ["id", "rtt_ms", "per_block_ms", "blocks"], path)
        blocks = raw.get("blocks")
        if not (isinstance(blocks, list) and len(blocks) == 2 and all(isinstance(b, int) for b in blocks)):
            raise ConfigError(f"{path}.blocks", "expected [start, end] integers")
        specs.append(
            ServerSpec(
                id=_num(raw, "id", path, kind=int),
                rtt_ms=_num(raw, "rtt_ms", path),
                per_block_ms=_num(raw, "per_block_ms", path),
                hosted=(blocks[0], blocks[1]),
            )
        )
    return SwarmTopology(num_blocks, tuple(specs))


def topology_to_dict(topology: SwarmTopology) -> dict[str, Any]:
    return {
        "num_blocks": topology.num_blocks,
        "servers": [
            {"id": s.id, "rtt_ms": s.rtt_ms, "per_block_ms": s.per_block_ms, "blocks": [s.start, s.end]}
            for s in topology.servers
        ],
    }


def random_topology(
    rng: np.random.Generator,
    max_servers: int = 4,
    max_blocks: int = 5,
    min_servers: int = 1,
    min_blocks: int = 1,
) -> SwarmTopology:
    """Small random swarm where every block is hosted (used by oracles and tests)."""
    while True:
        num_blocks = int(rng.integers(min_blocks, max_blocks + 1))
        num_servers = int(rng.integers(min_servers, max_servers + 1))
        servers = []
        for sid in range(num_servers):
            start = int(rng.integers(0, num_blocks))
            end = int(rng.integers(start + 1, num_blocks + 1))
            rtt = float(rng.integers(1, 101))
            per_block = float(rng.integers(1, 21))
            servers.append(ServerSpec(sid, rtt, per_block, (start, end)))
        try:
            return SwarmTopology(num_blocks, tuple(servers))
        except TopologyError:
            continue
