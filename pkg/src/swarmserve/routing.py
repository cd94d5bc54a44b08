"""Server-chain selection over a swarm.

Three ways to pick servers for a pipeline over the model's blocks:

* ``shortest_chain``: minimum end-to-end time over the block-boundary DAG,
  edge weight = rtt + span * per_block_ms.
* ``max_throughput_chain``: same graph, maximizing summed per-block throughput.
* ``pareto_chains``: NSGA-II over a servers x blocks assignment matrix with
  objectives (sum of rtt over assignments, minus sum of throughput over
  assignments) and the constraint that every block has at least one server.
"""

from __future__ import annotations

import heapq
import itertools
import math
from dataclasses import dataclass, field
from typing import Iterator, Optional, Sequence

import numpy as np

from .core import SwarmTopology
from .errors import CapacityError, ContractError
from .optimizer import EvolveResult, Nsga2Config, evolve

BRUTE_FORCE_LIMIT = 20


@dataclass(frozen=True)
class Segment:
    server_id: int
    start: int
    end: int

    def __str__(self) -> str:
        return f"{self.server_id}:{self.start}-{self.end}"


@dataclass(frozen=True)
class Chain:
    segments: tuple[Segment, ...]

    def __str__(self) -> str:
        return ";".join(str(s) for s in self.segments)

    def total_ms(self, topology: SwarmTopology) -> float:
        total = 0.0
        for seg in self.segments:
            s = topology.server(seg.server_id)
            total += s.rtt_ms + (seg.end - seg.start) * s.per_block_ms
        return total

    def throughput(self, topology: SwarmTopology) -> float:
        return sum((seg.end - seg.start) / topology.server(seg.server_id).per_block_ms for seg in self.segments)

    def validate(self, topology: SwarmTopology) -> None:
        pos = 0
        for seg in self.segments:
            s = topology.server(seg.server_id)
            if seg.start != pos or seg.end <= seg.start:
                raise ContractError(f"segment {seg} does not continue at block {pos}")
            if not (s.start <= seg.start and seg.end <= s.end):
                raise ContractError(f"segment {seg} outside server {s.id}'s blocks {s.hosted}")
            pos = seg.end
        if pos != topology.num_blocks:
            raise ContractError(f"chain stops at block {pos}, model has {topology.num_blocks}")


@dataclass(frozen=True)
class RouteEdge:
    start: int
    end: int
    server_id: int
    weight: float


@dataclass
class RouteGraph:
    num_blocks: int
    edges: list[RouteEdge]

    def out_edges(self) -> dict[int, list[RouteEdge]]:
        adj: dict[int, list[RouteEdge]] = {i: [] for i in range(self.num_blocks + 1)}
        for e in self.edges:
            adj[e.start].append(e)
        return adj


def build_route_graph(topology: SwarmTopology) -> RouteGraph:
    edges = []
    for s in topology.servers:
        for i in range(s.start, s.end):
            for j in range(i + 1, s.end + 1):
                edges.append(RouteEdge(i, j, s.id, s.rtt_ms + (j - i) * s.per_block_ms))
    return RouteGraph(topology.num_blocks, edges)


def _walk_back(prev: dict[int, RouteEdge], target: int) -> Chain:
    segs = []
    node = target
    while node != 0:
        e = prev[node]
        segs.append(Segment(e.server_id, e.start, e.end))
        node = e.start
    return Chain(tuple(reversed(segs)))


def shortest_chain(topology: SwarmTopology) -> tuple[Chain, float]:
    """Dijkstra from boundary 0 to boundary ``num_blocks``."""
    graph = build_route_graph(topology)
    adj = graph.out_edges()
    target = topology.num_blocks
    dist = {0: 0.0}
    prev: dict[int, RouteEdge] = {}
    heap = [(0.0, 0)]
    done = set()
    while heap:
        d, u = heapq.heappop(heap)
        if u in done:
            continue
        done.add(u)
        if u == target:
            break
        for e in adj[u]:
            nd = d + e.weight
            if e.end not in dist or nd < dist[e.end]:
                dist[e.end] = nd
                prev[e.end] = e
                heapq.heappush(heap, (nd, e.end))
    chain = _walk_back(prev, target)
    return chain, chain.total_ms(topology)


def max_throughput_chain(topology: SwarmTopology) -> tuple[Chain, float]:
    """Longest path by summed throughput; ties go to the lower end-to-end time.

    Equivalent to a shortest path with negated-throughput weights, solved by
    dynamic programming since the graph is a DAG in boundary order.
    """
    adj = build_route_graph(topology).out_edges()
    servers = {s.id: s for s in topology.servers}
    best: dict[int, tuple[float, float]] = {0: (0.0, 0.0)}
    prev: dict[int, RouteEdge] = {}
    for u in range(topology.num_blocks):
        if u not in best:
            continue
        neg_thr, ms = best[u]
        for e in adj[u]:
            cand = (neg_thr - (e.end - e.start) / servers[e.server_id].per_block_ms, ms + e.weight)
            if e.end not in best or cand < best[e.end]:
                best[e.end] = cand
                prev[e.end] = e
    chain = _walk_back(prev, topology.num_blocks)
    return chain, chain.total_ms(topology)


def enumerate_chains(topology: SwarmTopology) -> Iterator[Chain]:
    """Every valid chain, by depth-first search over segments (oracle use)."""
    adj = build_route_graph(topology).out_edges()

    def walk(pos: int, acc: list[Segment]) -> Iterator[Chain]:
        if pos == topology.num_blocks:
            yield Chain(tuple(acc))
            return
        for e in adj[pos]:
            acc.append(Segment(e.server_id, e.start, e.end))
            yield from walk(e.end, acc)
            acc.pop()

    yield from walk(0, [])


# ---------------------------------------------------------------------------
# Assignment-matrix formulation
# ---------------------------------------------------------------------------


class GenomeCodec:
    """Per-topology arrays used to evaluate flattened servers x blocks genomes."""

    def __init__(self, topology: SwarmTopology):
        self.topology = topology
        self.shape = (topology.num_servers, topology.num_blocks)
        self.mask = topology.host_mask()
        self.flat_mask = self.mask.reshape(-1).astype(np.uint8)
        self.rtt = np.array([s.rtt_ms for s in topology.servers], dtype=np.float64)
        self.thr = np.array([1.0 / s.per_block_ms for s in topology.servers], dtype=np.float64)
        self.ids = [s.id for s in topology.servers]

    @property
    def length(self) -> int:
        return self.shape[0] * self.shape[1]

    def matrix(self, x) -> np.ndarray:
        arr = np.asarray(x, dtype=np.uint8)
        return arr.reshape(self.shape)

    def objectives_from_counts(self, counts: np.ndarray) -> tuple[float, float]:
        # summed per server so that genomes with equal counts give identical floats
        return float(counts @ self.rtt), float(-(counts @ self.thr))

    def evaluate(self, x) -> tuple[tuple[float, float], float]:
        mat = self.matrix(x)
        counts = mat.sum(axis=1).astype(np.float64)
        per_block = mat.sum(axis=0)
        violation = float(np.maximum(0, 1 - per_block.astype(np.int64)).sum())
        return self.objectives_from_counts(counts), violation

    def repair(self, x) -> np.ndarray:
        arr = np.asarray(x, dtype=np.uint8)
        if arr.ndim == 2 and arr.shape[1] == self.length:
            return arr & self.flat_mask
        return (arr.reshape(-1) & self.flat_mask).astype(np.uint8)


def evaluate_genome(x, topology: SwarmTopology) -> tuple[tuple[float, float], float]:
    """Objectives ``(f1, f2)`` and coverage violation of an assignment matrix.

    f1 is the summed rtt over assigned (server, block) pairs, f2 the negated
    summed throughput (blocks/ms). Violation counts blocks with no server.
    """
    return GenomeCodec(topology).evaluate(x)


def repair_genome(x, topology: SwarmTopology) -> np.ndarray:
    """Clear bits for blocks a server does not host; returns the flat genome."""
    return GenomeCodec(topology).repair(np.asarray(x).reshape(-1))


def decode_chain(x, topology: SwarmTopology) -> Chain:
    """Turn a feasible assignment matrix into a pipeline.

    Left to right, the current server is kept while it stays assigned. On a
    switch the assigned server with the longest run of consecutive assigned
    blocks from here wins, lowest id on ties.
    """
    codec = GenomeCodec(topology)
    mat = codec.matrix(codec.repair(x))
    if codec.evaluate(mat)[1] != 0:
        raise ContractError("cannot decode an infeasible genome: some block has no server")
    S, B = codec.shape
    segments: list[Segment] = []
    cur: Optional[int] = None
    start = 0
    for b in range(B):
        if cur is not None and mat[cur, b]:
            continue
        if cur is not None:
            segments.append(Segment(codec.ids[cur], start, b))
        best_row, best_run = None, -1
        for row in range(S):
            if not mat[row, b]:
                continue
            run = 0
            while b + run < B and mat[row, b + run]:
                run += 1
            if run > best_run or (run == best_run and codec.ids[row] < codec.ids[best_row]):
                best_row, best_run = row, run
        cur, start = best_row, b
    segments.append(Segment(codec.ids[cur], start, B))
    return Chain(tuple(segments))


def encode_chain(chain: Chain, topology: SwarmTopology) -> np.ndarray:
    codec = GenomeCodec(topology)
    mat = np.zeros(codec.shape, dtype=np.uint8)
    rows = {sid: r for r, sid in enumerate(codec.ids)}
    for seg in chain.segments:
        mat[rows[seg.server_id], seg.start : seg.end] = 1
    return mat.reshape(-1)


# ---------------------------------------------------------------------------
# Pareto search and oracle
# ---------------------------------------------------------------------------


@dataclass
class ParetoChain:
    chain: Chain
    f1: float
    f2: float
    # every front point whose genome decodes to this chain
    points: list[tuple[float, float]] = field(default_factory=list)


def pareto_chains(
    topology: SwarmTopology,
    config: Nsga2Config = Nsga2Config(),
    result: Optional[list] = None,
) -> list[ParetoChain]:
    """NSGA-II "latency_throughput_tradeoff" mode.

    Returns one entry per distinct decoded chain, ordered by f1. Pass a list as
    ``result`` to receive the raw ``EvolveResult`` as well.
    """
    codec = GenomeCodec(topology)
    out = evolve(codec.evaluate, codec.length, config, repair=codec.repair)
    if result is not None:
        result.append(out)
    return chains_from_front(out, topology)


def chains_from_front(out: EvolveResult, topology: SwarmTopology) -> list[ParetoChain]:
    entries: dict[Chain, ParetoChain] = {}
    for ind in sorted(out.front, key=lambda ind: (ind.objectives, ind.key())):
        chain = decode_chain(ind.genome, topology)
        f1, f2 = ind.objectives
        if chain not in entries:
            entries[chain] = ParetoChain(chain, f1, f2)
        entries[chain].points.append((f1, f2))
    return sorted(entries.values(), key=lambda e: (e.f1, e.f2))


def front_points(entries: Sequence[ParetoChain]) -> set[tuple[float, float]]:
    return {p for e in entries for p in e.points}


@dataclass(frozen=True)
class OracleEntry:
    genome: np.ndarray
    f1: float
    f2: float


def brute_force_pareto(topology: SwarmTopology) -> list[OracleEntry]:
    """Exact Pareto set by enumerating every genome inside the host mask."""
    codec = GenomeCodec(topology)
    if codec.length > BRUTE_FORCE_LIMIT:
        raise CapacityError(
            f"{codec.shape[0]} servers x {codec.shape[1]} blocks exceeds the {BRUTE_FORCE_LIMIT}-bit enumeration limit"
        )
    free = np.flatnonzero(codec.flat_mask)
    k = free.shape[0]
    combos = ((np.arange(2**k)[:, None] >> np.arange(k)[None, :]) & 1).astype(np.uint8)
    genomes = np.zeros((combos.shape[0], codec.length), dtype=np.uint8)
    genomes[:, free] = combos
    mats = genomes.reshape(-1, *codec.shape)
    feasible = np.all(mats.sum(axis=1) >= 1, axis=1)
    counts = mats.sum(axis=2).astype(np.float64)

    points: dict[tuple[float, float], list[int]] = {}
    for idx in np.flatnonzero(feasible):
        points.setdefault(codec.objectives_from_counts(counts[idx]), []).append(int(idx))
    front = []
    best_f2 = math.inf
    for p in sorted(points):
        if p[1] < best_f2:
            front.append(p)
            best_f2 = p[1]
    return [OracleEntry(genomes[i], p[0], p[1]) for p in front for i in points[p]]


def knee_index(points: Sequence[tuple[float, float]]) -> int:
    """Index of the point closest to the ideal point after min-max scaling."""
    if not points:
        raise ContractError("knee_index needs at least one point")
    arr = np.asarray(points, dtype=np.float64)
    lo, hi = arr.min(axis=0), arr.max(axis=0)
    span = np.where(hi > lo, hi - lo, 1.0)
    scaled = (arr - lo) / span
    return int(np.argmin(np.sqrt((scaled**2).sum(axis=1))))


def chain_objectives(chain: Chain, topology: SwarmTopology) -> tuple[float, float]:
    return evaluate_genome(encode_chain(chain, topology), topology)[0]


def all_chain_assignments(topology: SwarmTopology) -> Iterator[tuple[int, ...]]:
    """Every one-server-per-block assignment respecting the host mask."""
    hosts = [[s.id for s in topology.servers if s.hosts(b)] for b in range(topology.num_blocks)]
    yield from itertools.product(*hosts)
