from fractions import Fraction

import pytest
from hypothesis import given, settings, strategies as st

from osdsim.engine import run
from osdsim.errors import CapacityZero, NonUniformMetric, ZeroWeight
from osdsim.hst import Hst, Metric
from osdsim.instance import ClairvoyanceMode, Instance, PenaltyFn, Request
from osdsim.kosd import KServer
from osdsim.paging import (
    EMPTY_SLOT,
    DemandLRU,
    ThresholdPaging,
    alternating_requests,
    classical_paging,
    page_metric_instance,
    paging_with_delay,
    random_page_instance,
    reduce_stream,
    weighted_star_instance,
)
from osdsim.ps import PreemptiveService

F = Fraction


def req(rid, page, t, pen):
    return Request(rid, page, F(t), pen)


def test_reduce_unit_slope():
    s = reduce_stream([req(0, 0, 0, PenaltyFn.linear(1))], flush=False)
    assert s.pages == [0] and s.times == [1]


def test_reduce_combines_rates():
    s = reduce_stream([req(0, 3, 0, PenaltyFn.linear(F(1, 2))), req(1, 3, 0, PenaltyFn.linear(F(1, 2)))])
    assert s.times == [1] and s.emissions[0].requests == [0, 1]


def test_reduce_deadline_jump():
    s = reduce_stream([req(0, 1, 2, PenaltyFn.deadline_only(F(5, 2)))])
    assert s.times == [F(9, 2)] and not s.emissions[0].flushed


def test_reduce_flushes_open_intervals():
    s = reduce_stream([req(0, 0, 0, PenaltyFn.linear(0)), req(1, 1, 1, PenaltyFn.linear(1))])
    assert [(e.page, e.time, e.flushed) for e in s.emissions] == [(1, 2, False), (0, 2, True)]
    assert reduce_stream([req(0, 0, 0, PenaltyFn.linear(0))], flush=False).emissions == []


@settings(max_examples=80, deadline=None)
@given(st.integers(0, 10**6))
def test_reduce_emits_at_first_crossing(seed):
    inst = random_page_instance(seed, n_requests=10)
    by_id = {r.id: r for r in inst.requests}
    s = reduce_stream(inst.requests)
    seen = [rid for e in s.emissions for rid in e.requests]
    assert sorted(seen) == sorted(by_id)
    for e in s.emissions:
        if e.flushed:
            continue
        rs = [by_id[i] for i in e.requests]
        left = sum(r.penalty.finite_value(e.time - r.arrival) for r in rs)
        dl = any(r.penalty.deadline is not None and e.time - r.arrival >= r.penalty.deadline
                 for r in rs)
        assert dl or left >= 1
        # nothing in the interval could have crossed earlier
        assert left <= 1 or len(rs) == 1 and rs[0].arrival == e.time


def test_classical_examples():
    a, b = 0, 1
    assert classical_paging([a, b, a, b], "lru", 2).swaps == 2
    for pol in ("lru", "belady", "marking_det", "marking_rand"):
        assert classical_paging([a, b, a, b], pol, 1).faults == 4


def test_classical_errors():
    with pytest.raises(CapacityZero):
        classical_paging([0], "lru", 0)
    with pytest.raises(ValueError):
        classical_paging([0], "fifo", 1)


def brute_faults(stream, k):
    """Fewest faults over every eviction choice (demand paging)."""
    best = [None]

    def rec(i, cache, faults):
        if best[0] is not None and faults >= best[0]:
            return
        if i == len(stream):
            best[0] = faults
            return
        p = stream[i]
        if p in cache:
            rec(i + 1, cache, faults)
        elif len(cache) < k:
            rec(i + 1, cache | {p}, faults + 1)
        else:
            for v in sorted(cache):
                rec(i + 1, (cache - {v}) | {p}, faults + 1)

    rec(0, frozenset(), 0)
    return best[0]


@settings(max_examples=150, deadline=None)
@given(st.lists(st.integers(0, 4), max_size=10), st.integers(1, 3))
def test_belady_is_optimal_and_marking_is_k_competitive(stream, k):
    opt = classical_paging(stream, "belady", k).faults
    assert opt == brute_faults(stream, k)
    for pol in ("lru", "marking_det", "marking_rand"):
        res = classical_paging(stream, pol, k, seed=3)
        assert opt <= res.faults <= k * opt + k
        assert all(len(c) <= k for c in res.caches)


def test_single_request_cost():
    inst = Instance(Metric.uniform([0, 1]), (req(0, 1, 0, PenaltyFn.linear(1)),), 1, (0,), pages=True)
    rep = paging_with_delay(inst, "marking_det")
    assert rep.alg_I <= 2


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10**6), st.sampled_from(["marking_det", "lru", "marking_rand", "belady"]))
def test_alg_I_at_most_twice_alg_I_prime(seed, policy):
    inst = random_page_instance(seed)
    rep = paging_with_delay(inst, policy, seed=seed)
    assert rep.alg_I <= 2 * rep.alg_I_prime
    assert set(rep.served_at) == {r.id for r in inst.requests}
    for r in inst.requests:
        assert rep.served_at[r.id] >= r.arrival


def test_paging_needs_uniform_metric():
    inst = Instance(Hst.star([0, 0]), (), 1, (0,))
    with pytest.raises(NonUniformMetric):
        paging_with_delay(inst, "lru")
    inst = Instance(Metric.line([0, 1, 3]), (), 1, (0,))
    with pytest.raises(NonUniformMetric):
        paging_with_delay(inst, "lru")


def test_page_metric_view():
    inst = random_page_instance(2, k=2)
    v = page_metric_instance(inst)
    assert v.start == (EMPTY_SLOT, EMPTY_SLOT)
    assert v.space.d(EMPTY_SLOT, 0) == 1 and v.validate() is v


def test_weighted_star_shapes():
    inst = weighted_star_instance({0: 1, 1: 1}, [])
    assert [inst.space.length(e) for e in inst.space.edges] == [1, 1]
    inst = weighted_star_instance({0: 5, 1: 1}, [])
    assert inst.space.length(1) == 4
    inst = weighted_star_instance({0: F(1, 2), 1: 2}, [])
    assert [inst.space.length(e) for e in inst.space.edges] == [1, 4]
    with pytest.raises(ZeroWeight):
        weighted_star_instance({0: 0}, [])


def test_alternating_penalties_plateau_at_weight():
    reqs = alternating_requests(0, 1, {0: 8, 1: 1}, 2)
    assert [r.leaf for r in reqs] == [0, 1, 0, 1]
    assert reqs[0].penalty.finite_value(1) == 8 and reqs[0].penalty.finite_value(5) == 8
    assert reqs[1].penalty.finite_value(F(1, 2)) == 0


def weighted_costs(W, rounds):
    w = {0: W, 1: 1}
    inst = weighted_star_instance(w, alternating_requests(0, 1, w, rounds))
    return {a.name: run(inst, a, ClairvoyanceMode.NONCLAIRVOYANT)[0].total
            for a in (PreemptiveService(), KServer(), ThresholdPaging(), DemandLRU())}


def test_single_server_keeps_heavy_page():
    c = weighted_costs(16, 64)
    assert c["threshold"] >= 4 * c["ps"]
    assert c["lru"] >= 4 * c["ps"]


@pytest.mark.xfail(strict=True, reason="k-server service returns to the key edge's base, "
                                       "which on a star is the center, so no page stays resident")
def test_kosd_keeps_heavy_page():
    c = weighted_costs(16, 64)
    assert c["threshold"] >= 4 * c["kosd"]


def test_threshold_on_uniform_star_matches_lru_need():
    t = Hst.star([0, 0, 0])
    reqs = tuple(req(i, 1 + i % 3, i, PenaltyFn.linear(1)) for i in range(6))
    inst = Instance(t, reqs, 2, (0, 0))
    a = run(inst, ThresholdPaging())[0]
    b = run(inst, DemandLRU())[0]
    assert a.to_dict()["total"] == b.to_dict()["total"]
    assert not a.unserved
