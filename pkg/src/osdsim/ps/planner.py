"""Serving-phase planning for the preemptive service algorithm.

Works on any rooted tree (an HST, or the split view a k-server uses when a
server sits inside an edge).  Edges are named by their child node.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, FrozenSet, List, Optional, Sequence, Set, Tuple

from ..errors import (
    InsufficientSum,
    InternalConsistencyError,
    NonPowerOfTwo,
    NotSaturated,
    UnknownEdge,
)
from ..hst import RootedTree, is_power_of_two
from .counters import Counters, RateSchedule, simulate


class InvariantLog:
    """Counts checks and failures of runtime-asserted properties.

    ``strict`` makes any failing hard check raise; diagnostics never raise.
    """

    def __init__(self, strict: bool = False):
        self.strict = strict
        self.checks: Counter = Counter()
        self.failures: Counter = Counter()
        self.diag_checks: Counter = Counter()
        self.diag_failures: Counter = Counter()
        self.messages: List[str] = []

    def check(self, name: str, ok: bool, msg: str = ""):
        self.checks[name] += 1
        if not ok:
            self.failures[name] += 1
            if len(self.messages) < 200:
                self.messages.append(f"{name}: {msg}")
            if self.strict:
                raise InternalConsistencyError(f"{name}: {msg}")

    def diag(self, name: str, ok: bool, msg: str = ""):
        self.diag_checks[name] += 1
        if not ok:
            self.diag_failures[name] += 1
            if len(self.messages) < 200:
                self.messages.append(f"[diag] {name}: {msg}")

    @property
    def violations(self) -> int:
        return sum(self.failures.values())

    def merge(self, other: "InvariantLog"):
        self.checks.update(other.checks)
        self.failures.update(other.failures)
        self.diag_checks.update(other.diag_checks)
        self.diag_failures.update(other.diag_failures)
        self.messages.extend(other.messages[: max(0, 200 - len(self.messages))])

    def summary(self) -> dict:
        return {
            "checks": dict(sorted(self.checks.items())),
            "violations": dict(sorted(self.failures.items())),
            "diagnostics": {k: {"checked": self.diag_checks[k], "exceeded": self.diag_failures[k]}
                            for k in sorted(self.diag_checks)},
        }


# ------------------------------------------------------------------ scopes

def major_edge(tree: RootedTree, v: int, server: int) -> Optional[int]:
    """Longest edge on the v-server path; ties go to the edge nearer v."""
    best = None
    for e in tree.path_edges(v, server):
        if best is None or tree.length(e) > tree.length(best):
            best = e
    return best


@dataclass(frozen=True)
class Scope:
    """The region X_e below an edge: ``top`` is e's endpoint inside it."""

    edge: int
    top: int
    nodes: FrozenSet[int]
    kind: str  # "T" (subtree under e) or "R" (relevant subtree)

    def edges(self) -> List[int]:
        return sorted(v for v in self.nodes if v != self.top)

    def children(self, tree: RootedTree, node: int) -> List[int]:
        return [c for c in tree.children.get(node, ()) if c in self.nodes]

    def top_layer(self, tree: RootedTree) -> List[int]:
        return self.children(tree, self.top)


def subtree_scope(tree: RootedTree, e: int) -> Scope:
    if e not in tree.parent:
        raise UnknownEdge(f"unknown edge {e!r}")
    return Scope(e, e, frozenset(tree.subtree_nodes(e)), "T")


def relevant_subtree(tree: RootedTree, server: int, e: int) -> Scope:
    """Vertices whose major edge toward ``server`` is ``e``."""
    if e not in tree.parent:
        raise UnknownEdge(f"unknown edge {e!r}")
    nodes = frozenset(v for v in tree.nodes if v != server and major_edge(tree, v, server) == e)
    ends = [x for x in (e, tree.parent[e]) if x in nodes]
    top = ends[0] if len(ends) == 1 else (e if e in nodes else tree.parent[e])
    return Scope(e, top, nodes, "R")


def x_scope(tree: RootedTree, server: int, e: int) -> Scope:
    """X_e: the subtree below e when the server is outside it, else R_e."""
    if not tree.is_ancestor(e, server):
        return subtree_scope(tree, e)
    return relevant_subtree(tree, server, e)


def near_end(tree: RootedTree, scope: Scope) -> int:
    e = scope.edge
    return tree.parent[e] if scope.top == e else e


# ------------------------------------------------------------------ critical subtree / key edges

def requests_in(scope: Scope, unserved: Dict[int, int]) -> Dict[int, int]:
    return {r: leaf for r, leaf in unserved.items() if leaf in scope.nodes}


def is_critical(tree: RootedTree, counters: Counters, scope: Scope, leaf: int) -> bool:
    if scope.edge not in counters.sat:
        return False
    return all(x in counters.sat for x in tree.path_edges(leaf, scope.top))


@dataclass
class CriticalTree:
    root: int
    children: Dict[int, List[int]]
    edges: Set[int]

    def parent_map(self) -> Dict[int, int]:
        return {c: p for p, cs in self.children.items() for c in cs}

    def leaves(self) -> List[int]:
        return sorted(x for x in self.edges if not self.children.get(x))

    def depth(self) -> int:
        def d(x):
            cs = self.children.get(x, [])
            return 1 + max((d(c) for c in cs), default=0)
        return d(self.root)


def _cut_tree(tree: RootedTree, scope: Scope, edges: Set[int]) -> CriticalTree:
    """Re-root ``edges`` (inside ``scope``) under scope.edge as their parent."""
    e = scope.edge
    children: Dict[int, List[int]] = {x: [] for x in edges | {e}}
    for x in sorted(edges):
        if x == e:
            continue
        p = tree.parent[x]
        children[e if p == scope.top else p].append(x)
    return CriticalTree(e, children, set(edges) | {e})


def critical_subtree(tree: RootedTree, counters: Counters, scope: Scope,
                     unserved: Dict[int, int]) -> CriticalTree:
    if scope.edge not in counters.sat:
        raise NotSaturated(f"edge {scope.edge} is not saturated")
    edges: Set[int] = {scope.edge}
    for r, leaf in requests_in(scope, unserved).items():
        if is_critical(tree, counters, scope, leaf):
            edges.update(tree.path_edges(leaf, scope.top))
    return _cut_tree(tree, scope, edges)


def key_edges(ct: CriticalTree, length) -> Tuple[List[int], Fraction]:
    """Maximum-length cut; on ties between an edge and its children, take the children."""

    def best(x) -> Tuple[Fraction, List[int]]:
        cs = ct.children.get(x, [])
        if not cs:
            return Fraction(length(x)), [x]
        total, cut = Fraction(0), []
        for c in cs:
            v, k = best(c)
            total += v
            cut += k
        if total >= length(x):
            return total, cut
        return Fraction(length(x)), [x]

    value, cut = best(ct.root)
    return sorted(cut), value


def cut_properties(ct: CriticalTree, cut: Sequence[int]) -> Dict[str, bool]:
    par = ct.parent_map()
    cutset = set(cut)

    def ancestors(x):
        out = []
        while x in par:
            x = par[x]
            out.append(x)
        return out

    antichain = all(not (cutset & set(ancestors(x))) for x in cut)
    disconnecting = all(
        len(cutset & ({leaf} | set(ancestors(leaf)))) == 1 for leaf in ct.leaves()
    )
    return {"antichain": antichain, "disconnecting": disconnecting}


def all_cuts(ct: CriticalTree) -> List[List[int]]:
    """Every cut of ``ct`` (exponential; for oracles on small trees)."""

    def cuts(x):
        cs = ct.children.get(x, [])
        out = [[x]]
        if cs:
            combos = [[]]
            for c in cs:
                combos = [a + b for a in combos for b in cuts(c)]
            out += combos
        return out

    return [sorted(c) for c in cuts(ct.root)]


# ------------------------------------------------------------------ f values

@dataclass
class FView:
    f: Dict[int, Fraction]
    over_by_children: Set[int]
    all_critical: Set[int]

    def over_saturated(self, e: int) -> bool:
        return e in self.over_by_children or e in self.all_critical


def compute_f(tree: RootedTree, counters: Counters, scope: Scope,
              unserved: Dict[int, int]) -> FView:
    f: Dict[int, Fraction] = {}
    by_children: Set[int] = set()
    all_crit: Set[int] = set()
    reqs = requests_in(scope, unserved)

    def child_edges(x):
        return scope.top_layer(tree) if x == scope.edge else scope.children(tree, x)

    def rec(x) -> Fraction:
        kids = child_edges(x)
        s = sum((rec(c) for c in kids), Fraction(0))
        if x in counters.sat:
            ln = tree.length(x)
            f[x] = max(ln, s)
            if s >= ln:
                by_children.add(x)
        else:
            f[x] = Fraction(0)
        return f[x]

    rec(scope.edge)
    # all-requests-critical clause, per edge of the scope (X = T_x below e)
    for x in [scope.edge] + scope.edges():
        top = scope.top if x == scope.edge else x
        sub = reqs if x == scope.edge else {r: l for r, l in reqs.items() if tree.is_ancestor(x, l)}
        if all(x in counters.sat and all(y in counters.sat for y in tree.path_edges(l, top))
               for l in sub.values()):
            all_crit.add(x)
    return FView(f, by_children, all_crit)


def over_saturated(tree: RootedTree, counters: Counters, scope: Scope, reqs: Dict[int, int]) -> bool:
    e = scope.edge
    if e not in counters.sat:
        return False if reqs else True
    if all(all(y in counters.sat for y in tree.path_edges(l, scope.top)) for l in reqs.values()):
        return True

    def rec(x) -> Fraction:
        if x not in counters.sat:
            return Fraction(0)
        s = sum((rec(c) for c in scope.children(tree, x)), Fraction(0))
        return max(tree.length(x), s)

    s = sum((rec(c) for c in scope.top_layer(tree)), Fraction(0))
    return s >= tree.length(e)


# ------------------------------------------------------------------ exact subset

def subset_exact(lengths: Sequence, target) -> List[int]:
    """Indices of a sub-multiset of powers of two summing exactly to ``target``.

    Follows the constructive argument: trim the multiset below 3/2 of the
    target, then either take two halves, take one half and recurse on the
    rest for the other half, or split the rest into two groups that each
    reach half the target and recurse on both.
    """
    target = Fraction(target)
    vals = [Fraction(x) for x in lengths]
    if not is_power_of_two(target) or any(not is_power_of_two(v) for v in vals):
        raise NonPowerOfTwo("lengths and target must be powers of two")
    if any(v >= target for v in vals):
        raise NonPowerOfTwo("every length must be strictly below the target")
    if sum(vals, Fraction(0)) < target:
        raise InsufficientSum(f"total {sum(vals)} is below target {target}")
    items = sorted(range(len(vals)), key=lambda i: (-vals[i], i))
    out = _subset_rec(items, vals, target)
    assert sum(vals[i] for i in out) == target
    return sorted(out)


def _trim(items: List[int], vals, bound: Fraction) -> List[int]:
    items = list(items)
    total = sum((vals[i] for i in items), Fraction(0))
    while total >= bound:
        total -= vals[items.pop()]
    return items


def _subset_rec(items: List[int], vals, target: Fraction) -> List[int]:
    items = _trim(items, vals, target * Fraction(3, 2))
    half = target / 2
    if target == 2:
        ones = [i for i in items if vals[i] == 1]
        return ones[:2]
    halves = [i for i in items if vals[i] == half]
    if len(halves) >= 2:
        return halves[:2]
    if len(halves) == 1:
        rest = [i for i in items if i != halves[0]]
        return halves + _subset_rec(rest, vals, half)
    groups: List[List[int]] = []
    pool = list(items)
    for _ in range(2):
        grp, s = [], Fraction(0)
        while s < half:
            i = pool.pop(0)
            grp.append(i)
            s += vals[i]
        groups.append(grp)
    return _subset_rec(groups[0], vals, half) + _subset_rec(groups[1], vals, half)


def subset_greedy(lengths: Sequence, target) -> List[int]:
    """Largest-first selection with total at most ``target`` (non power-of-two fallback)."""
    target = Fraction(target)
    vals = [Fraction(x) for x in lengths]
    out, s = [], Fraction(0)
    for i in sorted(range(len(vals)), key=lambda i: (-vals[i], i)):
        if s + vals[i] <= target:
            out.append(i)
            s += vals[i]
    return sorted(out)


# ------------------------------------------------------------------ time forwarding

@dataclass
class PlanContext:
    tree: RootedTree
    unserved: Dict[int, int]            # rid -> leaf
    schedules: Dict[int, RateSchedule]  # future rates as the planner may see them
    now: Fraction
    log: InvariantLog
    # service edges visited, with their scopes, for the distance diagnostic
    service: List[Scope] = field(default_factory=list)
    tf_calls: List[dict] = field(default_factory=list)


@dataclass
class ForwardResult:
    edges: Set[int]
    time: Optional[Fraction]  # None if e never over-saturates


def time_forwarding(ctx: PlanContext, scope: Scope, counters: Counters, t: Fraction) -> ForwardResult:
    """Edges to traverse inside X_e so the requests closest to criticality get served.

    ``counters`` is a planning copy; it is advanced in place.
    """
    tree = ctx.tree
    e = scope.edge
    ctx.service.append(scope)
    reqs = requests_in(scope, ctx.unserved)
    ctx.log.check("service_edge_saturated", e in counters.sat, f"edge {e} not saturated at {t}")
    paths = {r: tree.path_edges(leaf, scope.top) for r, leaf in reqs.items()}
    out = simulate(counters, paths, {r: ctx.schedules[r] for r in reqs}, t,
                   stop=lambda: over_saturated(tree, counters, scope, reqs))
    never = out.reason == "idle"
    t_over = out.time
    edges: Set[int] = set()
    noncritical = []
    for r, p in paths.items():
        if all(x in counters.sat for x in p):
            edges.update(p)
        else:
            noncritical.append(r)
    record = {"edge": e, "time": None if never else t_over, "G": [], "H": []}
    ctx.tf_calls.append(record)
    if not noncritical or never:
        return ForwardResult(edges, None if never else t_over)

    fv = compute_f(tree, counters, scope, ctx.unserved)
    ctx.log.check("over_saturated_by_children", e in fv.over_by_children,
                  f"edge {e} stopped with non-critical requests but is not over-saturated by children")
    G: List[int] = []
    stack = list(scope.top_layer(tree))
    while stack:
        x = stack.pop(0)
        if x not in counters.sat:
            continue
        kids = scope.children(tree, x)
        if x in fv.over_by_children:
            stack.extend(kids)
        else:
            G.append(x)
    G.sort()
    ln = tree.length(e)
    sum_g = sum((tree.length(x) for x in G), Fraction(0))
    record["G"] = G
    ctx.log.check("G_at_least_edge", sum_g >= ln, f"sum G(e={e}) = {sum_g} < {ln}")
    ctx.log.check("G_at_most_three_halves", sum_g <= ln * Fraction(3, 2),
                  f"sum G(e={e}) = {sum_g} > 3/2 * {ln}")
    lens = [tree.length(x) for x in G]
    if sum_g >= ln and is_power_of_two(ln) and all(is_power_of_two(v) and v < ln for v in lens):
        H = [G[i] for i in subset_exact(lens, ln)]
    else:
        H = [G[i] for i in subset_greedy(lens, ln)]
    record["H"] = H
    sum_h = sum((tree.length(x) for x in H), Fraction(0))
    ctx.log.check("H_equals_edge", sum_h == ln, f"sum H(e={e}) = {sum_h} != {ln}")
    for x in H:
        # route from e down to x
        y = x
        while y != scope.top:
            edges.add(y)
            y = tree.parent[y]
        sub = time_forwarding(ctx, subtree_scope(tree, x), counters.copy(), t_over)
        edges |= sub.edges
    return ForwardResult(edges, t_over)


# ------------------------------------------------------------------ plans

@dataclass
class ServicePlan:
    time: Fraction
    major_edge: int
    key_edges: List[int]
    S: Set[int]
    walk: List[int]              # node sequence, first = server's position
    served: List[int]
    final_position: int
    critical: List[int]
    critical_edges: Set[int]
    cost: Fraction
    scope_top: int = 0
    tf_calls: List[dict] = field(default_factory=list)
    dfs_order: List[int] = field(default_factory=list)  # edges in traversal order

    def traversed(self, tree: RootedTree) -> List[int]:
        out = []
        for a, b in zip(self.walk, self.walk[1:]):
            out.append(a if tree.parent.get(a) == b else b)
        return out

    def summary(self) -> dict:
        return {
            "time": str(self.time),
            "major_edge": self.major_edge,
            "key_edges": list(self.key_edges),
            "edges": sorted(self.S),
            "served": list(self.served),
            "cost": str(self.cost),
            "final_position": self.final_position,
        }


def _euler(tree: RootedTree, node: int, S: Set[int]) -> List[int]:
    seq = [node]
    for c in tree.children.get(node, ()):
        if c in S:
            seq += _euler(tree, c, S)
            seq.append(node)
    return seq


def _preorder_edges(tree: RootedTree, node: int, S: Set[int]) -> List[int]:
    out = []
    for c in tree.children.get(node, ()):
        if c in S:
            out.append(c)
            out += _preorder_edges(tree, c, S)
    return out


def walk_cost(tree: RootedTree, walk: Sequence[int]) -> Fraction:
    total = Fraction(0)
    for a, b in zip(walk, walk[1:]):
        e = a if tree.parent.get(a) == b else b
        total += tree.length(e)
    return total


def build_plan(ctx: PlanContext, counters: Counters, server: int, e_star: int,
               depth: int, diag_const: int = 64, check_hst_ratio: bool = True) -> ServicePlan:
    tree = ctx.tree
    log = ctx.log
    if e_star not in counters.sat:
        raise NotSaturated(f"major edge {e_star} is not saturated")
    R = relevant_subtree(tree, server, e_star)
    ends = {e_star, tree.parent[e_star]}
    log.check("major_edge_at_root", R.top in ends and all(tree.is_ancestor(R.top, v) for v in R.nodes),
              f"major edge {e_star} does not attach at the root of its relevant subtree")
    if check_hst_ratio:
        ln = tree.length(e_star)
        log.check("major_edge_dominates", all(ln >= 2 * tree.length(x) for x in R.edges()),
                  f"major edge {e_star} shorter than twice an edge of R_e")
    X = x_scope(tree, server, e_star)
    log.check("x_scope_matches", X.nodes == R.nodes or X.kind == "T",
              f"X_e for major edge {e_star} differs from R_e with the server inside T_e")
    X = R if X.kind == "R" else X
    ct = critical_subtree(tree, counters, X, ctx.unserved)
    critical = sorted(r for r, leaf in requests_in(X, ctx.unserved).items()
                      if is_critical(tree, counters, X, leaf))
    K, kval = key_edges(ct, tree.length)
    props = cut_properties(ct, K)
    sum_k = sum((tree.length(x) for x in K), Fraction(0))
    sum_c = sum((tree.length(x) for x in ct.edges), Fraction(0))
    log.check("key_cut_antichain", props["antichain"], f"key edges {K} not an antichain")
    log.check("key_cut_disconnecting", props["disconnecting"], f"key edges {K} do not cut every leaf")
    log.check("key_cut_at_least_major", sum_k >= tree.length(e_star), f"sum K = {sum_k}")
    log.check("key_cut_fraction_of_critical_levels", sum_k * ct.depth() >= sum_c,
              f"sum K = {sum_k}, sum C_e = {sum_c}, levels {ct.depth()}")
    log.diag("key_cut_fraction_of_critical_h", sum_k * max(depth, 1) >= sum_c,
             f"sum K = {sum_k}, sum C_e = {sum_c}, h = {depth}")

    par = ct.parent_map()
    S: Set[int] = set()
    for k in K:
        x = k
        S.add(x)
        while x in par:
            x = par[x]
            S.add(x)
    plan_counters = counters.copy()
    for k in K:
        scope = X if k == e_star else subtree_scope(tree, k)
        res = time_forwarding(ctx, scope, plan_counters.copy(), ctx.now)
        S |= res.edges

    a = near_end(tree, X)
    z = X.top
    inner = S - {e_star}
    euler = _euler(tree, z, inner)
    if K == [e_star]:
        final = z
    else:
        pre = [x for x in _preorder_edges(tree, z, inner) if x in set(K)]
        final = pre[-1]
    cut = max(i for i, v in enumerate(euler) if v == final)
    walk = tree.path_nodes(server, a) + euler[: cut + 1]
    cost = walk_cost(tree, walk)
    on_walk = set(walk)
    served = sorted(r for r, leaf in ctx.unserved.items() if leaf in on_walk)
    log.check("critical_served", set(critical) <= set(served),
              f"critical requests {sorted(set(critical) - set(served))} not served")

    for scope in ctx.service:
        inside = [x for x in inner if x in scope.nodes and x != scope.top]
        travel = 2 * sum((tree.length(x) for x in inside), Fraction(0))
        bound = diag_const * max(depth, 1) ** 2 * tree.length(scope.edge)
        log.diag("service_edge_travel_h2", travel <= bound,
                 f"travel {travel} inside X_{scope.edge} exceeds {bound}")

    plan = ServicePlan(ctx.now, e_star, K, S, walk, served, final, critical, set(ct.edges), cost,
                       z, list(ctx.tf_calls))
    plan.dfs_order = plan.traversed(tree)
    return plan


def apply_plan(tree: RootedTree, counters: Counters, unserved: Dict[int, int], plan: ServicePlan,
               server: int, log: Optional[InvariantLog] = None) -> Tuple[int, Fraction]:
    """Execute a plan on the real state: reset traversed counters, drop served requests."""
    from ..errors import PlanStateMismatch

    if not plan.walk or plan.walk[0] != server:
        raise PlanStateMismatch(f"plan starts at {plan.walk[:1]}, server is at {server}")
    for r in plan.served:
        if r not in unserved:
            raise PlanStateMismatch(f"request {r} is not pending")
    for e in plan.traversed(tree):
        counters.reset(e)
    for r in plan.served:
        del unserved[r]
        left = counters.holders(r)
        if log is not None:
            log.check("served_weight_cleared", not left,
                      f"served request {r} still has weight on edges {left}")
        counters.remove_request(r)
    return plan.final_position, plan.cost
