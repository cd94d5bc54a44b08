import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import naive_attention
from swarmserve.distmem import (
    MAX_RECOMMENDATIONS,
    BorrowingKVHandle,
    DistMemCluster,
    GManager,
    InstanceSpec,
    dist_attention,
    dual_role_demo,
    resolve_rblock,
)
from swarmserve.errors import ContractError, LookupFailure, NumericDomainError, RegistrationError

BS = 4


def cluster(caps, nodes=None, devices=None, heartbeat_ms=50.0):
    nodes = nodes or [0] * len(caps)
    devices = devices or list(range(len(caps)))
    specs = [InstanceSpec(i, c, devices[i], nodes[i]) for i, c in enumerate(caps)]
    return DistMemCluster(specs, block_size=BS, heartbeat_ms=heartbeat_ms)


def fill(cl, instance, blocks):
    return cl.rm(instance).cache.admit_sequence(blocks * BS)


def ledger_state(cl):
    return {
        iid: (row.available, dict(row.lent_to), dict(row.borrowed_from))
        for iid, row in cl.gmanager.ledger.items()
    }


def test_heartbeat_write_through_and_rows():
    g = GManager(heartbeat_ms=10.0)
    for i in range(5):
        g.register(InstanceSpec(i, 16))
    g.heartbeat(2, 10, 5.0)
    assert g.row(2).available == 10 and g.row(2).last_heartbeat_ms == 5.0
    assert len(g.ledger) == 5
    with pytest.raises(RegistrationError):
        g.heartbeat(9, 1, 0.0)
    with pytest.raises(RegistrationError):
        g.register(InstanceSpec(0, 16))


def test_staleness_rule():
    g = GManager(heartbeat_ms=10.0)
    g.register(InstanceSpec(0, 8))
    g.register(InstanceSpec(1, 8))
    g.heartbeat(1, 8, 0.0)
    g.heartbeat(0, 0, 100.0)
    assert g.is_live(1, 30.0)
    assert not g.is_live(1, 30.001)
    assert g.recommend_creditors(0, 1, 30.0) == [1]
    assert g.recommend_creditors(0, 1, 31.0) == []


def test_recommend_all_full_and_single():
    cl = cluster([2, 2, 2])
    for i in range(3):
        fill(cl, i, 2)
    cl.heartbeat_all(0.0)
    assert cl.recommend_creditors(0, 1, 0.0) == []
    cl.rm(2).cache.free_sequence(0)
    cl.heartbeat_all(0.0)
    assert cl.recommend_creditors(0, 1, 0.0) == [2]


def test_recommend_ordering():
    # 0 is the debtor on node 0 device 0; 1 shares device, 2 shares node, 3 and 4 remote
    cl = cluster([4, 4, 8, 8, 2], nodes=[0, 0, 0, 1, 1], devices=[0, 0, 1, 2, 3])
    cl.heartbeat_all(0.0)
    assert cl.recommend_creditors(0, 1, 0.0) == [1, 2, 3]
    fill(cl, 1, 4)
    cl.heartbeat_all(0.0)
    # among remote ties, more availability first
    assert cl.recommend_creditors(0, 1, 0.0) == [2, 3, 4]
    assert len(cl.recommend_creditors(0, 1, 0.0)) <= MAX_RECOMMENDATIONS


def test_recommend_ties_by_id():
    cl = cluster([4, 4, 4, 4, 4], devices=[0, 1, 2, 3, 4])
    cl.heartbeat_all(0.0)
    assert cl.recommend_creditors(2, 1, 0.0) == [0, 1, 3]


def test_borrow_single_creditor():
    cl = cluster([4, 10])
    fill(cl, 0, 4)
    cl.heartbeat_all(0.0)
    assert cl.borrow(0, 4, 0.0) == [(1, 4)]
    assert cl.gmanager.row(1).lent_to == {0: 4}
    assert cl.gmanager.row(0).borrowed_from == {1: 4}
    assert cl.gmanager.row(1).available == 6
    cl.check_invariants()


def test_borrow_sequential_partial_grants():
    cl = cluster([4, 2, 3], devices=[0, 1, 2])
    fill(cl, 0, 4)
    cl.heartbeat_all(0.0)
    # instance 2 has more space, so it is asked first
    assert cl.borrow(0, 4, 0.0) == [(2, 3), (1, 1)]
    cl2 = cluster([4, 2, 3], devices=[0, 0, 1])
    fill(cl2, 0, 4)
    cl2.heartbeat_all(0.0)
    # same-device creditor ranks ahead regardless of size
    assert cl2.borrow(0, 4, 0.0) == [(1, 2), (2, 2)]
    cl2.check_invariants()


def test_borrow_total_failure_and_bad_demand():
    cl = cluster([2, 2])
    fill(cl, 0, 2)
    fill(cl, 1, 2)
    cl.heartbeat_all(0.0)
    assert cl.borrow(0, 3, 0.0) == []
    with pytest.raises(ContractError):
        cl.borrow(0, 0, 0.0)


def test_borrow_skips_stale_recommendation():
    cl = cluster([2, 4, 4], devices=[0, 1, 2])
    fill(cl, 0, 2)
    cl.heartbeat_all(0.0)
    # instance 1 fills up after its heartbeat; the ledger still shows 4 free
    fill(cl, 1, 4)
    before = dict(cl.gmanager.row(1).lent_to)
    assert cl.borrow(0, 2, 0.0) == [(2, 2)]
    assert cl.gmanager.row(1).lent_to == before
    cl.check_invariants()


def test_dual_role_pattern():
    cl, grants = dual_role_demo()
    assert grants == [[(0, 10)], [(0, 18), (3, 2)]]
    row3 = cl.gmanager.row(3)
    assert row3.lent_to.get(1, 0) > 0 and row3.borrowed_from.get(0, 0) > 0
    assert set(cl.gmanager.row(1).borrowed_from) <= {0, 3}
    cl.check_invariants()


def test_reclaim_full_zero_and_over():
    cl = cluster([2, 8])
    fill(cl, 0, 2)
    cl.heartbeat_all(0.0)
    initial = ledger_state(cl)
    cl.borrow(0, 3, 0.0)
    cl.reclaim(0, 1, 0)
    assert cl.gmanager.row(1).lent_to == {0: 3}
    with pytest.raises(ContractError):
        cl.reclaim(0, 1, 4)
    cl.reclaim(0, 1, 3)
    assert 0 not in cl.gmanager.row(1).lent_to and 1 not in cl.gmanager.row(0).borrowed_from
    assert ledger_state(cl) == initial
    cl.check_invariants()


def test_reclaim_refuses_blocks_in_use():
    cl = cluster([1, 8])
    fill(cl, 0, 1)
    cl.heartbeat_all(0.0)
    cl.borrow(0, 2, 0.0)
    fill(cl, 0, 1)
    with pytest.raises(ContractError):
        cl.reclaim(0, 1, 2)
    assert cl.return_unused(0) == 1
    cl.check_invariants()


@given(st.integers(1, 12))
def test_borrow_reclaim_round_trip(k):
    cl = cluster([2, 6, 6], devices=[0, 1, 2])
    fill(cl, 0, 2)
    cl.heartbeat_all(0.0)
    initial = ledger_state(cl)
    grants = cl.borrow(0, k, 0.0)
    assert sum(n for _, n in grants) == k
    for creditor, n in grants:
        cl.reclaim(0, creditor, n)
    cl.heartbeat_all(0.0)
    assert ledger_state(cl) == initial
    cl.check_invariants()


def test_resolve_local_remote_and_exhaustive():
    cl = cluster([2, 8], devices=[5, 6])
    seq = fill(cl, 0, 2)
    cl.heartbeat_all(0.0)
    rm = cl.rm(0)
    local = rm.cache.block_table(seq)[0]
    device, physical, remote = resolve_rblock(rm, local)
    assert (device, remote) == (5, False)
    cl.borrow(0, 3, 0.0)
    borrowed = [bid for bid, b in rm.cache.blocks.items() if b.origin is not None]
    located = [resolve_rblock(rm, bid) for bid in borrowed]
    assert all(dev == 6 and remote for dev, _, remote in located)
    # every granted block resolves to a distinct lent physical block of the creditor
    assert sorted(p for _, p, _ in located) == sorted(cl.rm(1).lent_out[0])
    assert rm.rblock(borrowed[0]).instance_id == 1
    with pytest.raises(LookupFailure):
        resolve_rblock(rm, 999)


def test_unknown_instances():
    cl = cluster([2, 2])
    with pytest.raises(RegistrationError):
        cl.rm(7)
    with pytest.raises(RegistrationError):
        cl.borrow(7, 1, 0.0)


def test_snapshot_rows():
    cl, _ = dual_role_demo()
    rows = cl.snapshot_rows()
    inst = [r for r in rows if r["kind"] == "instance"]
    edges = [(r["creditor"], r["debtor"], r["count"]) for r in rows if r["kind"] == "edge"]
    assert len(inst) == 5
    assert edges == [(0, 1, 18), (0, 3, 10), (3, 1, 2)]
    for r in inst:
        assert r["free"] + r["locally_used"] + r["lent_total"] == r["capacity"]


def test_borrowing_handle_admits_and_returns():
    cl = cluster([2, 8])
    cl.heartbeat_all(0.0)
    h = BorrowingKVHandle(cl, 0)
    assert h.admit(1, 5 * BS)
    assert cl.gmanager.row(0).borrowed_from == {1: 3}
    assert h.extra_cost_ms([1]) > 0
    for _ in range(BS):
        assert h.append(1)
    assert cl.gmanager.row(0).borrowed_from == {1: 4}
    h.release(1)
    assert cl.gmanager.row(0).borrowed_from == {}
    cl.check_invariants()
    off = BorrowingKVHandle(cluster([2, 8]), 0, enabled=False)
    assert not off.admit(1, 3 * BS)
    assert not off.fits_ever(1, 3 * BS) and h.fits_ever(1, 10 * BS)


def test_random_ops_keep_ledger_consistent():
    gen = np.random.default_rng(0)
    cl = cluster([6, 6, 6, 6, 6], nodes=[0, 0, 1, 1, 1], heartbeat_ms=5.0)
    handles = [BorrowingKVHandle(cl, i) for i in range(5)]
    live: list[tuple[int, int]] = []
    now = 0.0
    for step in range(2000):
        now += 1.0
        op = gen.integers(0, 4)
        inst = int(gen.integers(5))
        handles[inst].clock = now
        if op == 0:
            cl.heartbeat(inst, now)
        elif op == 1:
            if handles[inst].admit(step, int(gen.integers(1, 4 * BS))):
                live.append((inst, step))
        elif op == 2 and live:
            i, rid = live[int(gen.integers(len(live)))]
            handles[i].clock = now
            handles[i].append(rid)
        elif live:
            i, rid = live.pop(int(gen.integers(len(live))))
            handles[i].release(rid)
        cl.check_invariants()


def test_dist_attention_matches_dense():
    gen = np.random.default_rng(4)
    for _ in range(20):
        n = int(gen.integers(1, 30))
        q, k, v = gen.normal(size=5), gen.normal(size=(n, 5)), gen.normal(size=(n, 3))
        owners = gen.integers(0, 4, size=n).tolist()
        np.testing.assert_allclose(dist_attention(q, k, v, owners), naive_attention(q.tolist(), k.tolist(), v.tolist()), atol=1e-12)
    with pytest.raises(NumericDomainError):
        dist_attention([1.0], [[1.0]], [[1.0]], [0, 1])
