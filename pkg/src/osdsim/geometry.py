"""Points on tree edges.

A point is ``(node, offset)``: ``offset`` is the distance from ``node`` up
along the edge to ``node``'s parent, ``0 <= offset < length(node)``.  A
plain node ``v`` is ``Point(v, 0)``.
"""

from __future__ import annotations

from fractions import Fraction
from typing import List, NamedTuple, Optional, Set

from .hst import RootedTree


class Point(NamedTuple):
    node: int
    offset: Fraction = Fraction(0)

    @property
    def at_node(self) -> bool:
        return self.offset == 0

    def __repr__(self):
        return f"{self.node}" if self.offset == 0 else f"{self.node}+{self.offset}"


def at(v: int) -> Point:
    return Point(v, Fraction(0))


def normalize(tree: RootedTree, p: Point) -> Point:
    if p.offset == 0:
        return Point(p.node, Fraction(0))
    ln = tree.length(p.node)
    if p.offset == ln:
        return Point(tree.parent[p.node], Fraction(0))
    if not 0 < p.offset < ln:
        raise ValueError(f"offset {p.offset} outside edge {p.node}")
    return Point(p.node, Fraction(p.offset))


def incident_edges(tree: RootedTree, p: Point) -> Set[int]:
    if p.offset != 0:
        return {p.node}
    out = set(tree.children.get(p.node, ()))
    if p.node != tree.root:
        out.add(p.node)
    return out


def coord_on_edge(tree: RootedTree, p: Point, e: int) -> Fraction:
    """Distance from the child end of edge ``e`` to ``p`` (p must lie on e)."""
    if p.offset != 0:
        assert p.node == e
        return p.offset
    if p.node == e:
        return Fraction(0)
    assert tree.parent[e] == p.node
    return tree.length(e)


def common_edge(tree: RootedTree, a: Point, b: Point) -> Optional[int]:
    both = incident_edges(tree, a) & incident_edges(tree, b)
    return min(both) if both else None


def point_distance(tree: RootedTree, a: Point, b: Point) -> Fraction:
    e = common_edge(tree, a, b)
    if e is not None:
        return abs(coord_on_edge(tree, a, e) - coord_on_edge(tree, b, e))
    if a == b:
        return Fraction(0)
    pts = waypoints(tree, a, b)
    return sum((point_distance(tree, x, y) for x, y in zip(pts, pts[1:])), Fraction(0))


def _exits(tree: RootedTree, p: Point):
    """Nodes through which one can leave p, with the distance to each."""
    if p.offset == 0:
        return [(p.node, Fraction(0))]
    return [(p.node, p.offset), (tree.parent[p.node], tree.length(p.node) - p.offset)]


def waypoints(tree: RootedTree, a: Point, b: Point) -> List[Point]:
    """Shortest route from a to b as a list of points, consecutive ones on a common edge."""
    if a == b:
        return [a]
    if a.offset != 0 and b.offset != 0 and a.node == b.node:
        return [a, b]
    best = None
    for ua, da in _exits(tree, a):
        for ub, db in _exits(tree, b):
            d = da + tree.distance(ua, ub) + db
            if best is None or d < best[0]:
                best = (d, ua, ub)
    _, ua, ub = best
    pts = [a]
    for v in tree.path_nodes(ua, ub):
        q = Point(v, Fraction(0))
        if q != pts[-1]:
            pts.append(q)
    if b != pts[-1]:
        pts.append(b)
    return pts


def on_path(tree: RootedTree, q: Point, a: Point, b: Point) -> bool:
    """True iff q lies on the route between a and b (endpoints included)."""
    return point_distance(tree, a, q) + point_distance(tree, q, b) == point_distance(tree, a, b)


def move_toward(tree: RootedTree, a: Point, b: Point, step: Fraction) -> Point:
    """Point reached after moving ``step`` from a toward b along one edge (a, b share an edge)."""
    e = common_edge(tree, a, b)
    assert e is not None
    ca, cb = coord_on_edge(tree, a, e), coord_on_edge(tree, b, e)
    c = ca + step if cb > ca else ca - step
    return normalize(tree, Point(e, c))


def edges_covered(tree: RootedTree, a: Point, b: Point) -> Set[int]:
    """Edges (fully or partly) traversed moving between two points on a common edge."""
    if a == b:
        return set()
    e = common_edge(tree, a, b)
    return {e} if e is not None else set()
