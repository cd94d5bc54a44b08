import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import naive_chains, naive_genome_front, weakly_better
from swarmserve.core import Rng, ServerSpec, SwarmTopology, random_topology
from swarmserve.errors import CapacityError, ContractError
from swarmserve.optimizer import Nsga2Config
from swarmserve.routing import (
    Chain,
    Segment,
    brute_force_pareto,
    build_route_graph,
    decode_chain,
    encode_chain,
    enumerate_chains,
    evaluate_genome,
    front_points,
    knee_index,
    max_throughput_chain,
    pareto_chains,
    repair_genome,
    shortest_chain,
)


def two_servers():
    return SwarmTopology(2, (ServerSpec(1, 10.0, 5.0, (0, 2)), ServerSpec(2, 50.0, 1.0, (0, 2))))


def as_tuples(topo):
    return [(s.id, s.rtt_ms, s.per_block_ms, s.start, s.end) for s in topo.servers]


def small_topology(seed):
    gen = Rng(seed).stream("topo")
    return random_topology(gen, 4, 5)


def test_edge_counts_and_weight():
    one = SwarmTopology(2, (ServerSpec(0, 10.0, 5.0, (0, 2)),))
    graph = build_route_graph(one)
    assert sorted((e.start, e.end) for e in graph.edges) == [(0, 1), (0, 2), (1, 2)]
    assert [e.weight for e in graph.edges if (e.start, e.end) == (0, 2)] == [20.0]
    assert len(build_route_graph(two_servers()).edges) == 6


def test_edge_count_formula():
    for seed in range(20):
        topo = small_topology(seed)
        spans = [s.end - s.start for s in topo.servers]
        graph = build_route_graph(topo)
        assert len(graph.edges) == sum(t * (t + 1) // 2 for t in spans)
        assert all(e.end > e.start and e.weight > 0 for e in graph.edges)


def test_two_server_chain_candidates():
    topo = two_servers()
    costs = sorted(c.total_ms(topo) for c in enumerate_chains(topo))
    # four two-segment-or-fewer chains plus the per-block variants of single servers
    assert costs[0] == 20.0
    oracle = sorted(cost for _, cost in naive_chains(2, as_tuples(topo)))
    assert costs == oracle
    assert {20.0, 52.0, 66.0} <= set(oracle)
    chain, total = shortest_chain(topo)
    assert str(chain) == "1:0-2" and total == 20.0


def test_single_server_shortest():
    topo = SwarmTopology(3, (ServerSpec(4, 7.0, 2.0, (0, 3)),))
    chain, total = shortest_chain(topo)
    assert chain.segments == (Segment(4, 0, 3),) and total == 7.0 + 3 * 2.0


def test_shortest_matches_enumeration_oracle():
    for seed in range(100):
        topo = small_topology(seed)
        _, total = shortest_chain(topo)
        assert total == pytest.approx(min(cost for _, cost in naive_chains(topo.num_blocks, as_tuples(topo))))


def test_max_throughput_matches_enumeration():
    for seed in range(50):
        topo = small_topology(seed)
        chain, _ = max_throughput_chain(topo)
        chain.validate(topo)
        best = max(c.throughput(topo) for c in enumerate_chains(topo))
        assert chain.throughput(topo) == pytest.approx(best)


def test_evaluate_examples():
    topo = two_servers()
    assert evaluate_genome(np.zeros(4, dtype=np.uint8), topo)[1] == 2.0
    (f1, f2), v = evaluate_genome([1, 1, 0, 0], topo)
    assert (f1, f2, v) == (20.0, -0.4, 0.0)
    (f1, f2), v = evaluate_genome([1, 0, 0, 1], topo)
    assert f1 == 60.0 and f2 == pytest.approx(-1.2) and v == 0.0


def test_repair_clears_unhosted_bits():
    topo = SwarmTopology(2, (ServerSpec(0, 1.0, 1.0, (0, 1)), ServerSpec(1, 1.0, 1.0, (0, 2))))
    assert repair_genome([1, 1, 1, 1], topo).tolist() == [1, 0, 1, 1]
    assert repair_genome([1, 0, 0, 1], topo).tolist() == [1, 0, 0, 1]


@given(st.integers(0, 500), st.integers(0, 2**20))
def test_repair_idempotent(seed, bits):
    topo = small_topology(seed)
    n = topo.num_servers * topo.num_blocks
    x = np.array([(bits >> i) & 1 for i in range(n)], dtype=np.uint8)
    once = repair_genome(x, topo)
    assert np.array_equal(repair_genome(once, topo), once)
    assert np.all(once <= x)


def test_decode_examples():
    topo = two_servers()
    assert decode_chain([1, 1, 0, 0], topo).segments == (Segment(1, 0, 2),)
    assert decode_chain([1, 0, 1, 1], topo).segments == (Segment(2, 0, 2),)
    assert decode_chain([1, 1, 1, 1], topo).segments == (Segment(1, 0, 2),)


def test_decode_rejects_infeasible():
    with pytest.raises(ContractError):
        decode_chain([1, 0, 0, 0], two_servers())


@given(st.integers(0, 500), st.integers(0, 2**20))
def test_decode_round_trip_feasible(seed, bits):
    topo = small_topology(seed)
    n = topo.num_servers * topo.num_blocks
    x = repair_genome(np.array([(bits >> i) & 1 for i in range(n)], dtype=np.uint8), topo)
    if evaluate_genome(x, topo)[1] != 0:
        return
    chain = decode_chain(x, topo)
    chain.validate(topo)
    assert evaluate_genome(encode_chain(chain, topo), topo)[1] == 0
    # shortest chain is a lower bound on every decoded chain
    assert shortest_chain(topo)[1] <= chain.total_ms(topo) + 1e-9


def test_chain_validate_errors():
    topo = two_servers()
    with pytest.raises(ContractError):
        Chain((Segment(1, 0, 1),)).validate(topo)
    with pytest.raises(ContractError):
        Chain((Segment(1, 1, 2),)).validate(topo)


def test_brute_force_small():
    one = SwarmTopology(1, (ServerSpec(0, 3.0, 1.0, (0, 1)),))
    front = brute_force_pareto(one)
    assert len(front) == 1 and front[0].genome.tolist() == [1]
    topo = two_servers()
    pts = {(e.f1, e.f2) for e in brute_force_pareto(topo)}
    assert pts == naive_genome_front(2, as_tuples(topo))
    for a, b in itertools.permutations(pts, 2):
        assert not weakly_better(a, b)


def test_brute_force_matches_naive_oracle():
    for seed in range(30):
        topo = small_topology(seed)
        pts = {(e.f1, e.f2) for e in brute_force_pareto(topo)}
        want = naive_genome_front(topo.num_blocks, as_tuples(topo))
        assert len(pts) == len(want)
        for p, q in zip(sorted(pts), sorted(want)):
            assert p == pytest.approx(q)


def test_brute_force_capacity_error():
    topo = SwarmTopology(7, tuple(ServerSpec(i, 1.0, 1.0, (0, 7)) for i in range(3)))
    with pytest.raises(CapacityError):
        brute_force_pareto(topo)


def test_f1_minimum_uses_one_server_per_block():
    for seed in range(30):
        topo = small_topology(seed)
        front = brute_force_pareto(topo)
        low = min(e.f1 for e in front)
        for e in front:
            if e.f1 == low:
                mat = e.genome.reshape(topo.num_servers, topo.num_blocks)
                assert mat.sum(axis=0).tolist() == [1] * topo.num_blocks


def test_pareto_single_server():
    topo = SwarmTopology(3, (ServerSpec(0, 2.0, 1.0, (0, 3)),))
    entries = pareto_chains(topo, Nsga2Config(population_size=8, generations=10, seed=0))
    assert len(entries) == 1 and entries[0].chain.segments == (Segment(0, 0, 3),)


def test_pareto_two_by_two_contains_extremes():
    topo = two_servers()
    oracle = naive_genome_front(2, as_tuples(topo))
    got = front_points(pareto_chains(topo, Nsga2Config(population_size=20, generations=30, seed=1)))
    assert min(oracle) in got
    assert min(oracle, key=lambda p: p[1]) in got


def test_pareto_front_non_dominated_and_feasible():
    topo = small_topology(3)
    entries = pareto_chains(topo, Nsga2Config(population_size=40, generations=40, seed=2))
    pts = front_points(entries)
    for a, b in itertools.permutations(pts, 2):
        assert not weakly_better(a, b)
    for e in entries:
        e.chain.validate(topo)


def test_pareto_deterministic():
    topo = small_topology(5)
    cfg = Nsga2Config(population_size=20, generations=15, seed=11)
    a = [(str(e.chain), e.f1, e.f2) for e in pareto_chains(topo, cfg)]
    b = [(str(e.chain), e.f1, e.f2) for e in pareto_chains(topo, cfg)]
    assert a == b


def test_knee_index():
    assert knee_index([(5.0, -1.0)]) == 0
    assert knee_index([(0.0, 10.0), (1.0, 1.0), (10.0, 0.0)]) == 1
    with pytest.raises(ContractError):
        knee_index([])
