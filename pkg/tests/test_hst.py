import math
from fractions import Fraction

import pytest
from hypothesis import given, settings, strategies as st

from osdsim.errors import EmptyMetric, NonTree, RatioViolation
from osdsim.hst import (
    Hst,
    Metric,
    RootedTree,
    aspect_ratio,
    depth_bound,
    floor_pow2_exp,
    frt_embed,
    is_power_of_two,
    random_metric,
    round_edges_down,
    tree_distance,
    validate_hst,
)


def test_single_edge_is_valid():
    assert validate_hst(Hst(0, {1: 0}, {1: 2})) == []


def test_child_as_long_as_parent_is_rejected():
    h = Hst(0, {1: 0, 2: 1}, {1: 2, 2: 2})
    out = validate_hst(h)
    assert len(out) == 1 and "edge 2" in out[0]


def test_non_power_of_two_length():
    t = RootedTree(0, {1: 0}, {1: 3})
    out = validate_hst(t)
    assert len(out) == 1 and "2^i" in out[0]


def test_cycle_and_orphan_are_structure_errors():
    assert validate_hst(RootedTree(0, {1: 2, 2: 1}, {1: 1, 2: 1}))
    with pytest.raises(NonTree):
        round_edges_down(RootedTree(0, {1: 2, 2: 1}, {1: 1, 2: 1}))


@pytest.mark.parametrize("x,exp", [(1, 0), (4, 2), (5, 2), (7, 2), (8, 3), (Fraction(3, 2), 0)])
def test_floor_pow2(x, exp):
    assert floor_pow2_exp(x) == exp


def test_is_power_of_two():
    assert is_power_of_two(Fraction(1, 4)) and is_power_of_two(16)
    assert not is_power_of_two(3) and not is_power_of_two(0) and not is_power_of_two(Fraction(3, 4))


def test_round_down_examples():
    assert round_edges_down(RootedTree(0, {1: 0}, {1: 5})).length(1) == 4
    assert round_edges_down(RootedTree(0, {1: 0}, {1: 4})).length(1) == 4
    path = RootedTree(0, {1: 0, 2: 1}, {1: 10, 2: 3})
    h = round_edges_down(path)
    assert (h.length(1), h.length(2)) == (8, 2)
    for u in path.nodes:
        for v in path.nodes:
            d0, d1 = path.distance(u, v), h.distance(u, v)
            assert d1 <= d0 <= 2 * d1


def test_round_down_can_break_ratio():
    with pytest.raises(RatioViolation):
        round_edges_down(RootedTree(0, {1: 0, 2: 1}, {1: 7, 2: 5}))


def test_round_down_rejects_short_edges():
    with pytest.raises(RatioViolation):
        round_edges_down(RootedTree(0, {1: 0}, {1: Fraction(1, 2)}))


def test_tree_distance_examples():
    h = Hst(0, {1: 0, 2: 1, 3: 1}, {1: 2, 2: 1, 3: 1})
    assert tree_distance(h, 2, 2) == 0
    assert tree_distance(h, 2, 1) == 2
    assert tree_distance(h, 2, 3) == 4
    assert tree_distance(h, 2, 0) == 6


def test_tree_queries():
    h = Hst.star([3, 0, 0])
    assert h.depth == 1 and h.leaf_nodes == [1, 2, 3]
    assert h.path_edges(2, 3) == [2, 3]
    assert h.path_nodes(2, 3) == [2, 0, 3]
    assert h.lca(2, 3) == 0 and h.is_ancestor(0, 3) and not h.is_ancestor(2, 3)


def test_metric_checks():
    m = Metric((0, 1, 2), ((0, 1, 5), (1, 0, 1), (5, 1, 0)))
    assert any("triangle" in v for v in m.violations())
    assert Metric.uniform([0, 1, 2]).violations() == []
    assert aspect_ratio(Metric.line([0, 1, 4])) == 4


def test_two_point_embedding_dominates_for_every_seed():
    m = Metric.line([0, 5])
    for seed in range(50):
        e = frt_embed(m, seed)
        assert e.dominating
        assert validate_hst(e.hst) == []
        assert e.distortion[(0, 1)] >= 1


def test_uniform_embedding_dominates():
    m = Metric.uniform([0, 1, 2, 3])
    for seed in range(50):
        e = frt_embed(m, seed)
        assert e.dominating
        assert all(v >= 1 for v in e.distortion.values())


def test_embedding_depth_bound_and_leaf_map():
    m = random_metric(8, seed=3)
    for seed in range(20):
        e = frt_embed(m, seed)
        assert e.hst.depth <= depth_bound(m)
        assert sorted(e.hst.leaves) == list(m.points)
        assert set(e.hst.leaves.values()) <= set(e.hst.leaf_nodes)


def test_embedding_line_mean_distortion():
    m = Metric.line([0, 1, 2, 3])
    per_pair = {}
    for seed in range(300):
        for pair, d in frt_embed(m, seed).distortion.items():
            per_pair.setdefault(pair, []).append(d)
    worst = max(sum(v) / len(v) for v in per_pair.values())
    assert worst <= 8 * math.log(4)


def test_embedding_is_seeded():
    m = random_metric(6, seed=1)
    assert frt_embed(m, 9).hst == frt_embed(m, 9).hst


def test_empty_metric():
    with pytest.raises(EmptyMetric):
        frt_embed(Metric((), ()), 0)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(0, 40), min_size=2, max_size=6, unique=True), st.integers(0, 10**6))
def test_embedding_dominates_property(coords, seed):
    m = Metric.line(coords)
    e = frt_embed(m, seed)
    assert validate_hst(e.hst) == []
    for u in m.points:
        for v in m.points:
            assert tree_distance(e.hst, e.hst.leaves[u], e.hst.leaves[v]) >= m.d(u, v)
