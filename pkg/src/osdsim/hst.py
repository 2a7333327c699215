"""Finite metrics, hierarchically separated trees and the FRT embedding.

Edges of a rooted tree are identified by their child node: edge ``v`` joins
``v`` to ``parent[v]``.  All arithmetic is exact (ints / Fractions).
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

from .errors import EmptyMetric, NonTree, RatioViolation, UnknownNode

Number = int | Fraction


def _frac(x) -> Fraction:
    return x if isinstance(x, Fraction) else Fraction(x)


def is_power_of_two(x) -> bool:
    x = _frac(x)
    if x <= 0:
        return False
    n, d = x.numerator, x.denominator
    return (n & (n - 1) == 0) and (d & (d - 1) == 0) and (n == 1 or d == 1)


def floor_pow2_exp(x) -> int:
    """Largest integer i with 2**i <= x (x > 0)."""
    x = _frac(x)
    if x <= 0:
        raise ValueError("length must be positive")
    i = x.numerator.bit_length() - x.denominator.bit_length()
    # correct the estimate by at most one step either way
    while Fraction(2) ** (i + 1) <= x:
        i += 1
    while Fraction(2) ** i > x:
        i -= 1
    return i


@dataclass(frozen=True)
class Metric:
    points: Tuple[int, ...]
    dist: Tuple[Tuple[Fraction, ...], ...]

    def __post_init__(self):
        object.__setattr__(self, "points", tuple(self.points))
        object.__setattr__(
            self, "dist", tuple(tuple(_frac(x) for x in row) for row in self.dist)
        )

    @cached_property
    def index(self) -> Dict[int, int]:
        return {p: i for i, p in enumerate(self.points)}

    def d(self, u: int, v: int) -> Fraction:
        idx = self.index
        return self.dist[idx[u]][idx[v]]

    def violations(self, tol: float = 1e-9) -> List[str]:
        out = []
        n = len(self.points)
        if len(self.dist) != n or any(len(r) != n for r in self.dist):
            return ["distance matrix shape does not match points"]
        for i in range(n):
            if self.dist[i][i] != 0:
                out.append(f"d({self.points[i]},{self.points[i]}) != 0")
            for j in range(i + 1, n):
                if self.dist[i][j] != self.dist[j][i]:
                    out.append(f"asymmetric at ({self.points[i]},{self.points[j]})")
                if self.dist[i][j] <= 0:
                    out.append(f"non-positive distance at ({self.points[i]},{self.points[j]})")
        for i in range(n):
            for j in range(n):
                for k in range(n):
                    if self.dist[i][k] > self.dist[i][j] + self.dist[j][k] + Fraction(tol):
                        out.append(
                            f"triangle inequality fails for "
                            f"({self.points[i]},{self.points[j]},{self.points[k]})"
                        )
        return out

    @classmethod
    def uniform(cls, points: Sequence[int], d=1) -> "Metric":
        n = len(points)
        return cls(tuple(points), tuple(
            tuple(Fraction(0) if i == j else _frac(d) for j in range(n)) for i in range(n)
        ))

    @classmethod
    def line(cls, coords: Sequence) -> "Metric":
        cs = [_frac(c) for c in coords]
        return cls(tuple(range(len(cs))), tuple(tuple(abs(a - b) for b in cs) for a in cs))


class RootedTree:
    """A rooted tree with arbitrary positive edge lengths."""

    def __init__(self, root: int, parent: Mapping[int, int], length: Mapping[int, Number]):
        self.root = root
        self.parent: Dict[int, int] = dict(parent)
        self._length = {v: _frac(x) for v, x in length.items()}

    def length(self, e: int):
        return self._length[e]

    @property
    def edges(self) -> List[int]:
        return sorted(self.parent)

    @cached_property
    def nodes(self) -> List[int]:
        return sorted({self.root, *self.parent, *self.parent.values()})

    @cached_property
    def children(self) -> Dict[int, List[int]]:
        ch: Dict[int, List[int]] = {v: [] for v in self.nodes}
        for v, p in self.parent.items():
            ch.setdefault(p, []).append(v)
        for v in ch:
            ch[v].sort()
        return ch

    @cached_property
    def node_depth(self) -> Dict[int, int]:
        depth = {self.root: 0}
        stack = [self.root]
        while stack:
            u = stack.pop()
            for c in self.children.get(u, ()):
                depth[c] = depth[u] + 1
                stack.append(c)
        return depth

    @property
    def depth(self) -> int:
        """Maximum number of edges on a root-to-leaf path."""
        return max(self.node_depth.values(), default=0)

    @cached_property
    def leaf_nodes(self) -> List[int]:
        return [v for v in self.nodes if not self.children.get(v)]

    def structure_violations(self) -> List[str]:
        out = []
        if self.root in self.parent:
            out.append(f"root {self.root} has a parent edge")
        for v in self.parent:
            seen = {v}
            u = v
            while u in self.parent:
                u = self.parent[u]
                if u in seen:
                    out.append(f"cycle through node {v}")
                    break
                seen.add(u)
            else:
                if u != self.root:
                    out.append(f"node {v} is not connected to root {self.root}")
        return out

    def _check_node(self, u):
        if u != self.root and u not in self.parent:
            raise UnknownNode(f"unknown node {u!r}")

    def path_to_root(self, u: int) -> List[int]:
        self._check_node(u)
        out = [u]
        while u != self.root:
            u = self.parent[u]
            out.append(u)
        return out

    def lca(self, u: int, v: int) -> int:
        du, dv = self.node_depth[u], self.node_depth[v]
        while du > dv:
            u = self.parent[u]
            du -= 1
        while dv > du:
            v = self.parent[v]
            dv -= 1
        while u != v:
            u, v = self.parent[u], self.parent[v]
        return u

    def path_edges(self, u: int, v: int) -> List[int]:
        """Edges on the u-v path, ordered starting from u."""
        self._check_node(u)
        self._check_node(v)
        a = self.lca(u, v)
        up = []
        while u != a:
            up.append(u)
            u = self.parent[u]
        down = []
        while v != a:
            down.append(v)
            v = self.parent[v]
        return up + down[::-1]

    def path_nodes(self, u: int, v: int) -> List[int]:
        a = self.lca(u, v)
        up = [u]
        while u != a:
            u = self.parent[u]
            up.append(u)
        down = []
        while v != a:
            down.append(v)
            v = self.parent[v]
        return up + down[::-1]

    def distance(self, u: int, v: int):
        return sum((self.length(e) for e in self.path_edges(u, v)), Fraction(0))

    def subtree_nodes(self, u: int) -> List[int]:
        out = []
        stack = [u]
        while stack:
            x = stack.pop()
            out.append(x)
            stack.extend(self.children.get(x, ()))
        return sorted(out)

    def is_ancestor(self, a: int, u: int) -> bool:
        """True iff a is u or an ancestor of u."""
        while True:
            if u == a:
                return True
            if u == self.root:
                return False
            u = self.parent[u]


class Hst(RootedTree):
    """HST whose edge lengths are stored as base-2 exponents.

    ``leaves`` maps metric points to the leaf nodes that represent them
    (empty when the tree is given directly rather than by embedding).
    """

    def __init__(self, root: int, parent: Mapping[int, int], len_exp: Mapping[int, int],
                 leaves: Optional[Mapping[int, int]] = None):
        self.len_exp: Dict[int, int] = dict(len_exp)
        super().__init__(root, parent, {})
        self.leaves: Dict[int, int] = dict(leaves or {})

    def length(self, e: int) -> Fraction:
        i = self.len_exp[e]
        return Fraction(2) ** i

    def __eq__(self, other):
        return (isinstance(other, Hst) and self.root == other.root and self.parent == other.parent
                and self.len_exp == other.len_exp and self.leaves == other.leaves)

    def __hash__(self):
        return hash((self.root, tuple(sorted(self.parent.items())), tuple(sorted(self.len_exp.items()))))

    def __repr__(self):
        return f"Hst(root={self.root}, nodes={len(self.nodes)}, depth={self.depth})"

    def point_of_leaf(self) -> Dict[int, int]:
        return {leaf: p for p, leaf in self.leaves.items()}

    @classmethod
    def star(cls, exps: Sequence[int], root: int = 0) -> "Hst":
        """Depth-1 star; leaf i+1 hangs from the root with length 2**exps[i]."""
        parent = {i + 1: root for i in range(len(exps))}
        return cls(root, parent, {i + 1: e for i, e in enumerate(exps)})


def validate_hst(tree: RootedTree) -> List[str]:
    """Return a list of human-readable violations; empty iff ``tree`` is a valid HST."""
    out = tree.structure_violations()
    if out:
        return out
    for e in tree.edges:
        if isinstance(tree, Hst) and tree.len_exp[e] < 0:
            out.append(f"edge {e}: negative exponent {tree.len_exp[e]}")
            continue
        ln = tree.length(e)
        if not is_power_of_two(ln) or ln < 1:
            out.append(f"edge {e}: length {ln} is not 2^i with i >= 0")
    for e in tree.edges:
        p = tree.parent[e]
        if p in tree.parent and tree.length(e) * 2 > tree.length(p):
            out.append(
                f"edge {e}: length {tree.length(e)} exceeds half of parent edge {p} "
                f"length {tree.length(p)}"
            )
    if isinstance(tree, Hst) and tree.leaves:
        leafset = set(tree.leaf_nodes)
        targets = list(tree.leaves.values())
        if len(set(targets)) != len(targets):
            out.append("leaf map is not injective")
        for p, leaf in sorted(tree.leaves.items()):
            if leaf not in leafset:
                out.append(f"point {p} mapped to non-leaf node {leaf}")
    return out


def round_edges_down(tree: RootedTree) -> Hst:
    """Round every edge length down to a power of two."""
    bad = tree.structure_violations()
    if bad:
        raise NonTree("; ".join(bad))
    exps = {}
    for e in tree.edges:
        ln = tree.length(e)
        if ln < 1:
            raise RatioViolation(f"edge {e}: length {ln} < 1 cannot round to 2^i with i >= 0")
        exps[e] = floor_pow2_exp(ln)
    leaves = getattr(tree, "leaves", None)
    out = Hst(tree.root, tree.parent, exps, leaves)
    for e in out.edges:
        p = out.parent[e]
        if p in out.parent and exps[e] >= exps[p]:
            raise RatioViolation(f"edge {e}: rounding breaks the factor-2 rule under edge {p}")
    return out


def tree_distance(h: RootedTree, u: int, v: int) -> Fraction:
    return h.distance(u, v)


@dataclass
class EmbeddingSample:
    hst: Hst
    seed: int
    scale: Fraction
    # (u, v) -> d_T / d_M, both in scaled units
    distortion: Dict[Tuple[int, int], Fraction] = field(default_factory=dict)

    @property
    def dominating(self) -> bool:
        return all(r >= 1 for r in self.distortion.values())


def _normalize(m: Metric) -> Tuple[Fraction, List[List[Fraction]]]:
    n = len(m.points)
    nz = [m.dist[i][j] for i in range(n) for j in range(n) if i != j]
    dmin = min(nz) if nz else Fraction(1)
    scale = Fraction(1) / dmin if dmin < 1 else Fraction(1)
    return scale, [[m.dist[i][j] * scale for j in range(n)] for i in range(n)]


def frt_embed(m: Metric, seed: int) -> EmbeddingSample:
    """Sample an HST from the FRT distribution.

    Distances are scaled so the minimum nonzero distance is at least 1 and
    then stretched by 2/beta, with beta drawn from [1, 2) with density
    proportional to 1/x.  In the stretched units level-i clusters are balls
    of radius 2**(i-1) around points taken in a random order, so their
    diameter is at most 2**i, and the edge from a level-i cluster to its
    parent has length 2**i.  A cluster holding a single point becomes that
    point's leaf at once instead of growing a chain of one-child nodes;
    pairs split at level i still end up at tree distance at least 2**(i+1).
    """
    n = len(m.points)
    if n == 0:
        raise EmptyMetric("metric has no points")
    rng = random.Random(seed)
    scale, D = _normalize(m)
    beta = Fraction(2 ** rng.random())  # density proportional to 1/x on [1, 2)
    stretch = 2 / beta
    scale *= stretch
    D = [[x * stretch for x in row] for row in D]
    order = list(range(n))
    rng.shuffle(order)
    dmax = max((D[i][j] for i in range(n) for j in range(n)), default=Fraction(0))
    top = (floor_pow2_exp(dmax) + 1 if dmax >= 1 else 0) + 2

    parent: Dict[int, int] = {}
    len_exp: Dict[int, int] = {}
    root = 0
    next_id = 1
    height = {root: 0}  # distance from the root, integral
    leaf_of: Dict[int, int] = {}
    clusters: List[Tuple[int, List[int]]] = [(root, list(range(n)))] if n > 1 else []
    if n == 1:
        leaf_of[0] = root
    for level in range(top - 1, -1, -1):
        radius = Fraction(2) ** (level - 1)
        new_clusters = []
        for node, members in clusters:
            unassigned = set(members)
            for c in order:
                if not unassigned:
                    break
                ball = sorted(u for u in unassigned if D[u][c] <= radius)
                if not ball:
                    continue
                unassigned.difference_update(ball)
                child = next_id
                next_id += 1
                parent[child] = node
                len_exp[child] = level
                height[child] = height[node] + 2 ** level
                if len(ball) == 1:
                    leaf_of[ball[0]] = child
                else:
                    new_clusters.append((child, ball))
        clusters = new_clusters
    assert not clusters, "level-0 clusters must be singletons"
    leaves = {m.points[i]: leaf_of[i] for i in range(n)}
    hst = Hst(root, parent, len_exp, leaves)
    sample = EmbeddingSample(hst, seed, scale)
    anc = {}
    for i in range(n):
        chain, u = [], leaf_of[i]
        while u != root:
            chain.append(u)
            u = parent[u]
        chain.append(root)
        anc[i] = chain
    for i in range(n):
        up = set(anc[i])
        for j in range(i + 1, n):
            w = next(x for x in anc[j] if x in up)
            dt = height[leaf_of[i]] + height[leaf_of[j]] - 2 * height[w]
            sample.distortion[(m.points[i], m.points[j])] = dt / D[i][j]
    return sample


def aspect_ratio(m: Metric) -> Fraction:
    n = len(m.points)
    nz = [m.dist[i][j] for i in range(n) for j in range(n) if i != j]
    return max(nz) / min(nz) if nz else Fraction(1)


def depth_bound(m: Metric) -> int:
    """Upper bound on the depth of any tree produced by :func:`frt_embed` on ``m``."""
    scale, D = _normalize(m)
    n = len(m.points)
    dmax = 2 * max((D[i][j] for i in range(n) for j in range(n)), default=Fraction(0))
    return (floor_pow2_exp(dmax) + 1 if dmax >= 1 else 0) + 2


def random_metric(n: int, seed: int, lo: int = 1, hi: int = 100) -> Metric:
    """Shortest-path closure of random integer weights on the complete graph."""
    rng = random.Random(seed)
    d = [[Fraction(0) if i == j else None for j in range(n)] for i in range(n)]
    for i in range(n):
        for j in range(i + 1, n):
            d[i][j] = d[j][i] = Fraction(rng.randint(lo, hi))
    for k in range(n):
        for i in range(n):
            for j in range(n):
                if d[i][k] + d[k][j] < d[i][j]:
                    d[i][j] = d[i][k] + d[k][j]
    return Metric(tuple(range(n)), tuple(tuple(r) for r in d))
