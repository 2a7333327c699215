import itertools
from fractions import Fraction

import pytest
from hypothesis import given, settings, strategies as st

from osdsim.adversaries import gen_random
from osdsim.engine import run
from osdsim.errors import InsufficientSum, NonPowerOfTwo, NotSaturated, PlanStateMismatch, UnknownEdge
from osdsim.hst import Hst, RootedTree
from osdsim.instance import ClairvoyanceMode, Instance, PenaltyFn, Request
from osdsim.ps import (
    Counters,
    InvariantLog,
    PlanContext,
    PreemptiveService,
    RateSchedule,
    all_cuts,
    apply_plan,
    build_plan,
    compute_f,
    critical_subtree,
    key_edges,
    major_edge,
    relevant_subtree,
    simulate,
    subset_exact,
    subtree_scope,
    time_forwarding,
    x_scope,
)
from osdsim.ps.planner import CriticalTree, cut_properties, subset_greedy, walk_cost

F = Fraction


def saturate(c: Counters, edges, rid=0):
    for e in edges:
        c.add(e, rid, c.length(e) - c.weight(e))
        c.sat.add(e)


# ------------------------------------------------------------------ counters

def test_accrue_three_on_length_four():
    tree = Hst(0, {1: 0}, {1: 2})
    c = Counters(tree.length)
    simulate(c, {0: [1]}, {0: RateSchedule.constant(F(0), F(1))}, F(0), until=F(3))
    assert c.weight(1) == 3 and not c.saturated(1)
    assert c.bound_violations() == []


def test_cascade_up_the_path():
    tree = Hst(0, {1: 0, 2: 1}, {1: 2, 2: 1})
    c = Counters(tree.length)
    out = simulate(c, {0: [2, 1]}, {0: RateSchedule.constant(F(0), F(1))}, F(0), until=F(5))
    assert out.reason == "until"
    assert (c.weight(2), c.weight(1)) == (2, 3)
    assert c.saturated(2) and not c.saturated(1)
    assert c.holders(0) == [1, 2]


def test_stop_predicate_and_idle():
    tree = Hst(0, {1: 0}, {1: 2})
    c = Counters(tree.length)
    out = simulate(c, {0: [1]}, {0: RateSchedule.constant(F(0), F(1, 2))}, F(0),
                   stop=lambda: c.saturated(1))
    assert (out.reason, out.time) == ("stop", 8)
    out = simulate(c, {0: [1]}, {0: RateSchedule.constant(F(0), F(1, 2))}, F(8))
    assert out.reason == "idle"


def test_infinite_rate_saturates_instantly():
    tree = Hst(0, {1: 0, 2: 1}, {1: 2, 2: 1})
    c = Counters(tree.length)
    sched = RateSchedule([(F(0), F(0)), (F(1), float("inf"))])
    out = simulate(c, {0: [2, 1]}, {0: sched}, F(0), stop=lambda: c.saturated(1))
    assert out.time == 1 and out.instant == 6


def test_remove_request_clears_contribution():
    tree = Hst.star([1, 1])
    c = Counters(tree.length)
    c.add(1, 0, F(1))
    c.add(1, 1, F(1))
    c.sat.add(1)
    assert c.remove_request(0) == [1]
    assert c.weight(1) == 1 and c.bound_violations() == []


# ------------------------------------------------------------------ major edge and scopes

def path_tree():
    return Hst(0, {1: 0, 2: 1, 3: 2}, {1: 3, 2: 2, 3: 1})


def test_major_edge_unique_max():
    assert major_edge(path_tree(), 3, 0) == 1


def test_major_edge_tie_goes_to_request_side():
    t = RootedTree(0, {1: 0, 2: 1}, {1: 4, 2: 4})
    assert major_edge(t, 2, 0) == 2
    star = Hst.star([2, 2])
    assert major_edge(star, 2, 1) == 2


def test_trigger_on_longest_edge():
    tree = path_tree()
    inst = Instance(tree, (Request(0, 3, F(0), PenaltyFn.linear(100)),), 1, (0,))
    rep, tr = run(inst, PreemptiveService())
    ph = tr.kinds("phase")
    assert len(ph) == 1 and ph[0]["major_edge"] == 1
    assert ph[0]["t"] == F(14, 100)


def test_deadline_forces_trigger():
    tree = Hst.star([2, 2])
    reqs = (Request(0, 1, F(0), PenaltyFn.deadline_only(1)), Request(1, 2, F(0), PenaltyFn.linear(0)))
    rep, tr = run(Instance(tree, reqs, 1, (0,)), PreemptiveService(), horizon=2)
    assert tr.kinds("phase")[0]["t"] == 1
    assert rep.served_at[0] == 1 and rep.delay_penalty == 0


def test_relevant_subtree_of_star_leaf():
    star = Hst.star([1, 1, 1])
    R = relevant_subtree(star, 0, 2)
    assert R.nodes == {2} and R.top == 2


def relevant_fixture():
    # root 0: edge 1 (8) -> node 1 with leaf 2 (4); edge 4 (8) -> node 4 with leaf 5 (4); leaf 6 (4)
    return Hst(0, {1: 0, 2: 1, 4: 0, 5: 4, 6: 0}, {1: 3, 2: 2, 4: 3, 5: 2, 6: 2})


def test_relevant_subtree_excludes_equal_sibling():
    t = relevant_fixture()
    R = relevant_subtree(t, 2, 1)
    assert R.nodes == {0, 6}
    assert R.top == 0


def test_x_scope_with_server_inside():
    t = relevant_fixture()
    assert x_scope(t, 2, 1) == relevant_subtree(t, 2, 1)
    X = x_scope(t, 2, 4)
    assert X.kind == "T" and X.nodes == {4, 5}


def test_unknown_edge():
    with pytest.raises(UnknownEdge):
        relevant_subtree(Hst.star([0]), 0, 7)
    with pytest.raises(UnknownEdge):
        subtree_scope(Hst.star([0]), 0)


# ------------------------------------------------------------------ critical subtree and key edges

def test_critical_subtree_single_edge():
    t = path_tree()
    c = Counters(t.length)
    saturate(c, [1])
    ct = critical_subtree(t, c, subtree_scope(t, 1), {0: 3})
    assert ct.edges == {1}
    assert key_edges(ct, t.length) == ([1], 8)


def test_critical_subtree_follows_saturated_path():
    t = path_tree()
    c = Counters(t.length)
    saturate(c, [1, 2, 3])
    ct = critical_subtree(t, c, subtree_scope(t, 1), {0: 3})
    assert ct.edges == {1, 2, 3}
    assert ct.children[1] == [2] and ct.children[2] == [3]


def test_critical_subtree_needs_saturation():
    t = path_tree()
    with pytest.raises(NotSaturated):
        critical_subtree(t, Counters(t.length), subtree_scope(t, 1), {})


def test_critical_subtree_rerooted_when_server_inside():
    # server at the end of the long edge; request behind the short sibling
    t = Hst.star([1, 0])
    c = Counters(t.length)
    saturate(c, [1, 2])
    X = x_scope(t, 1, 1)
    ct = critical_subtree(t, c, X, {0: 2})
    assert ct.root == 1 and ct.children[1] == [2]


def ct_from(children, root=0):
    edges = set(children) | {c for cs in children.values() for c in cs} | {root}
    return CriticalTree(root, {x: list(children.get(x, [])) for x in edges}, edges)


LEN = {0: 4, 1: 2, 2: 2, 3: 1, 4: 1}


def test_key_edges_examples():
    assert key_edges(ct_from({}), LEN.get) == ([0], 4)
    assert key_edges(ct_from({0: [1, 2]}), LEN.get) == ([1, 2], 4)
    # children win ties, so the grandchildren replace their equal-length parent
    cut, val = key_edges(ct_from({0: [1, 2], 2: [3, 4]}), LEN.get)
    assert val == 4 and cut == [1, 3, 4]
    assert max(sum(LEN[x] for x in c) for c in all_cuts(ct_from({0: [1, 2], 2: [3, 4]}))) == 4


@st.composite
def critical_trees(draw):
    n = draw(st.integers(1, 9))
    parent = {i: draw(st.integers(0, i - 1)) for i in range(1, n)}
    exps = {0: draw(st.integers(4, 6))}
    for i in range(1, n):
        exps[i] = draw(st.integers(exps[parent[i]] - 3, exps[parent[i]] - 1))
    children = {}
    for c, p in parent.items():
        children.setdefault(p, []).append(c)
    return ct_from(children), {i: F(2) ** e for i, e in exps.items()}


@settings(max_examples=200, deadline=None)
@given(critical_trees())
def test_key_edges_is_maximum_cut(data):
    ct, lens = data
    cut, val = key_edges(ct, lens.get)
    props = cut_properties(ct, cut)
    assert props["antichain"] and props["disconnecting"]
    assert val == sum(lens[x] for x in cut)
    assert val == max(sum(lens[x] for x in c) for c in all_cuts(ct))
    assert val >= lens[0]
    assert val * ct.depth() >= sum(lens.values())


# ------------------------------------------------------------------ f values

def f_tree():
    return Hst(0, {1: 0, 2: 1, 3: 1, 4: 1}, {1: 2, 2: 1, 3: 1, 4: 0})


def test_f_unsaturated_is_zero():
    t = f_tree()
    fv = compute_f(t, Counters(t.length), subtree_scope(t, 1), {0: 2})
    assert fv.f[1] == 0 and not fv.over_saturated(1)


def test_f_leaf_edge():
    t = f_tree()
    c = Counters(t.length)
    saturate(c, [4])
    fv = compute_f(t, c, subtree_scope(t, 4), {0: 4})
    assert fv.f[4] == 1
    assert 4 not in fv.over_by_children and 4 in fv.all_critical


def test_f_over_saturated_by_children():
    t = f_tree()
    c = Counters(t.length)
    saturate(c, [1, 2, 3, 4])
    fv = compute_f(t, c, subtree_scope(t, 1), {0: 2, 1: 3, 2: 4})
    assert fv.f[1] == 5 and 1 in fv.over_by_children


# ------------------------------------------------------------------ exact subset

def brute_subset(vals, target):
    return any(sum(c) == target for r in range(len(vals) + 1) for c in itertools.combinations(vals, r))


@pytest.mark.parametrize("vals,target", [([4, 4], 8), ([1, 1, 1], 2), ([2, 2, 2, 1, 1], 4)])
def test_subset_examples(vals, target):
    idx = subset_exact(vals, target)
    assert sum(vals[i] for i in idx) == target
    assert len(set(idx)) == len(idx)


def test_subset_errors():
    with pytest.raises(InsufficientSum):
        subset_exact([1, 1], 4)
    with pytest.raises(NonPowerOfTwo):
        subset_exact([3, 1], 4)
    with pytest.raises(NonPowerOfTwo):
        subset_exact([4, 1], 4)


@settings(max_examples=300, deadline=None)
@given(st.integers(1, 8), st.data())
def test_subset_exact_property(texp, data):
    vals = data.draw(st.lists(st.integers(0, texp - 1), min_size=1, max_size=12))
    lens = [2 ** e for e in vals]
    target = 2 ** texp
    if sum(lens) < target:
        return
    idx = subset_exact(lens, target)
    assert sum(lens[i] for i in idx) == target
    assert brute_subset(lens, target)


def test_subset_greedy_stays_below():
    assert sum([3, 3, 2][i] for i in subset_greedy([3, 3, 2], 5)) <= 5


# ------------------------------------------------------------------ time forwarding and plans

def test_time_forwarding_all_critical_after_one():
    t = Hst(0, {1: 0, 2: 1}, {1: 1, 2: 0})
    c = Counters(t.length)
    saturate(c, [1], rid=0)
    ctx = PlanContext(t, {0: 2}, {0: RateSchedule.constant(F(0), F(1))}, F(0), InvariantLog())
    res = time_forwarding(ctx, subtree_scope(t, 1), c.copy(), F(0))
    assert res.time == 1 and res.edges == {2}


def test_time_forwarding_everything_critical_now():
    t = Hst(0, {1: 0, 2: 1}, {1: 1, 2: 0})
    c = Counters(t.length)
    saturate(c, [1, 2], rid=0)
    ctx = PlanContext(t, {0: 2}, {0: RateSchedule.constant(F(0), F(1))}, F(0), InvariantLog())
    res = time_forwarding(ctx, subtree_scope(t, 1), c.copy(), F(0))
    assert res.edges == {2} and ctx.tf_calls[0]["H"] == []


def test_star_plan_is_major_edge_only():
    star = Hst.star([2, 1, 1])
    reqs = (Request(0, 1, F(0), PenaltyFn.linear(1)), Request(1, 3, F(0), PenaltyFn.linear(F(1, 4))))
    alg = PreemptiveService(strict=True)
    run(Instance(star, reqs, 1, (2,)), alg)
    p = alg.plans[0]
    assert (p.time, p.major_edge, p.key_edges) == (4, 1, [1])
    assert p.served == [0] and p.walk == [2, 0, 1] and p.cost == 6


def test_walk_cost():
    t = Hst.star([1, 1])
    assert walk_cost(t, [0, 1]) == 2
    assert walk_cost(t, [0, 1, 0, 2]) == 6


def test_plan_on_two_subtrees_walks_first_one_twice():
    # two sibling subtrees of length 2, each with two unit leaves; all critical
    t = Hst(0, {1: 0, 2: 1, 3: 2, 4: 2, 5: 1, 6: 5, 7: 5},
            {1: 2, 2: 1, 3: 0, 4: 0, 5: 1, 6: 0, 7: 0})
    c = Counters(t.length)
    unserved = {0: 3, 1: 4, 2: 6, 3: 7}
    for rid, leaf in unserved.items():
        saturate(c, t.path_edges(leaf, 1), rid)
    saturate(c, [1])
    ctx = PlanContext(t, dict(unserved), {r: RateSchedule.constant(F(0), F(1)) for r in unserved},
                      F(0), InvariantLog(strict=True))
    plan = build_plan(ctx, c, 0, 1, t.depth)
    assert plan.served == [0, 1, 2, 3]
    # 4 down, first subtree 2*(2+1+1), second subtree without return 2+1+1+1
    assert plan.cost == 4 + 8 + 5
    final, cost = apply_plan(t, c, dict(unserved), plan, 0)
    assert final == plan.final_position and cost == plan.cost
    with pytest.raises(PlanStateMismatch):
        apply_plan(t, c, {}, plan, 0)


def test_literal_one_over_h_bound_fails_on_sibling_case():
    star = Hst.star([1, 0])
    inst = Instance(star, (Request(0, 2, F(0), PenaltyFn.linear(1)),), 1, (1,))
    alg = PreemptiveService()
    run(inst, alg)
    summary = alg.log.summary()
    assert alg.log.violations == 0
    assert summary["diagnostics"]["key_cut_fraction_of_critical_h"]["exceeded"] == 1


@pytest.mark.parametrize("mode", list(ClairvoyanceMode))
def test_delay_bounded_by_service(mode):
    for seed in range(40):
        inst = gen_random(seed, n_leaves=5, depth=3, n_requests=7)
        alg = PreemptiveService()
        rep, _ = run(inst, alg, mode)
        assert rep.delay_penalty <= rep.service_cost
        assert alg.log.violations == 0
        assert not rep.unserved
