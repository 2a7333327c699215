"""k servers on an HST: per-server counters, mid-edge positions, active cover.

Each server sees the tree through its own *view*: when the server sits
inside an edge, that edge is split at a virtual node ``-(s+1)``.  The lower
segment keeps the child's id and the upper segment takes the virtual id,
so counters on every other edge are shared between view and tree.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Dict, List, Optional, Sequence, Set, Tuple

from .engine import Algorithm, Decision, Move
from .errors import InternalConsistencyError, NoServers, UnknownServer
from .geometry import Point, at, common_edge, normalize, point_distance, waypoints
from .hst import RootedTree
from .ps.counters import Counters, RateSchedule, schedule_from_penalty, simulate
from .ps.planner import (
    InvariantLog,
    PlanContext,
    build_plan,
    major_edge,
    near_end,
    relevant_subtree,
    x_scope,
)


def virtual(s: int) -> int:
    return -(s + 1)


class ServerView(RootedTree):
    """The tree as seen from one server; splits the server's edge if needed."""

    def __init__(self, tree: RootedTree, s: int, pos: Point):
        parent = dict(tree.parent)
        length = {e: tree.length(e) for e in tree.parent}
        self.split: Optional[int] = None
        self.base = tree
        if pos.offset != 0:
            c = pos.node
            v = virtual(s)
            parent[v] = parent[c]
            parent[c] = v
            length[v] = tree.length(c) - pos.offset
            length[c] = pos.offset
            self.split = c
            self.node = v
        else:
            self.node = pos.node
        self.server = s
        self.pos = pos
        super().__init__(tree.root, parent, length)

    def real_edge(self, e: int) -> int:
        return self.split if e == virtual(self.server) else e

    def view_edges(self, real: int) -> List[int]:
        if real == self.split:
            return [real, virtual(self.server)]
        return [real]

    def to_point(self, node: int) -> Point:
        if node == virtual(self.server):
            return self.pos
        return at(node)


def _view_major(view: ServerView, leaf: int) -> Optional[int]:
    return major_edge(view, leaf, view.node)


def major_edge_k(state: "KServerState", s: int, leaf: int) -> Optional[int]:
    """Longest element of the server-to-request path; a split edge contributes its segment.

    Returns a view edge id: a negative id names the upper segment of the
    edge the server sits on.
    """
    if not 0 <= s < state.k:
        raise UnknownServer(f"unknown server {s!r}")
    return _view_major(state.views[s], leaf)


def _server_between(positions: Sequence[Point], tree: RootedTree, s: int, target: Point) -> bool:
    me = positions[s]
    d_total = point_distance(tree, me, target)
    for o, q in enumerate(positions):
        if o == s:
            continue
        if q == me:
            if o < s:
                return True
            continue
        if point_distance(tree, me, q) + point_distance(tree, q, target) == d_total:
            return True
    return False


def active_servers(tree: RootedTree, positions: Sequence[Point], target: Point) -> List[int]:
    """Servers with no other server on their route to ``target`` (co-located: lowest id)."""
    return [s for s in range(len(positions)) if not _server_between(positions, tree, s, target)]


@dataclass
class CoverResult:
    moves: List[Move]
    distance: Dict[int, Fraction]
    arrived: int
    visited: Set[int]


def active_cover_move(tree: RootedTree, positions: List[Point], target: Point) -> CoverResult:
    """Move all active servers toward ``target`` at equal speed until one arrives.

    ``positions`` is updated in place.  Activity is recomputed whenever a
    server reaches a node.
    """
    if not positions:
        raise NoServers("no servers to move")
    target = normalize(tree, target)
    moves: List[Move] = []
    dist = {s: Fraction(0) for s in range(len(positions))}
    visited: Set[int] = set()
    for _ in range(10 * (len(tree.nodes) + 2) * len(positions) + 10):
        here = [s for s, p in enumerate(positions) if p == target]
        if here:
            return CoverResult(moves, dist, min(here), visited)
        act = active_servers(tree, positions, target)
        if not act:
            raise InternalConsistencyError("no active server")
        nxt = {}
        for s in act:
            pts = waypoints(tree, positions[s], target)
            nxt[s] = pts[1]
        step = min(point_distance(tree, positions[s], nxt[s]) for s in act)
        for s in act:
            src = positions[s]
            gap = point_distance(tree, src, nxt[s])
            if gap == step:
                dst = nxt[s]
            else:
                dst = _advance(tree, src, nxt[s], step)
            if dst != src:
                moves.append(Move(s, src, dst))
                dist[s] += step
                positions[s] = dst
                if dst.offset == 0:
                    visited.add(dst.node)
    raise InternalConsistencyError("active cover does not converge")


def _advance(tree: RootedTree, a: Point, b: Point, step: Fraction) -> Point:
    e = common_edge(tree, a, b)
    ca = a.offset if a.offset != 0 or a.node == e else tree.length(e)
    cb = b.offset if b.offset != 0 or b.node == e else tree.length(e)
    c = ca + step if cb > ca else ca - step
    return normalize(tree, Point(e, c))


class KServerState:
    """Positions, per-server counters and pending requests."""

    def __init__(self, tree: RootedTree, start: Sequence[int]):
        self.tree = tree
        self.positions: List[Point] = [at(v) for v in start]
        self.counters: List[Counters] = []
        self.views: List[ServerView] = []
        self.unserved: Dict[int, int] = {}
        self.schedules: Dict[int, RateSchedule] = {}
        self.clock = Fraction(0)
        self.paths: List[Dict[int, List[int]]] = []
        self.majors: List[Dict[int, Optional[int]]] = []
        self.instant: List[Fraction] = [Fraction(0)] * len(start)
        for s in range(len(start)):
            self.counters.append(Counters(lambda e, s=s: self.views[s].length(e)))
        self.refresh()

    @property
    def k(self) -> int:
        return len(self.positions)

    def refresh(self):
        self.views = [ServerView(self.tree, s, p) for s, p in enumerate(self.positions)]
        self.paths = [{} for _ in range(self.k)]
        self.majors = [{} for _ in range(self.k)]
        for rid in self.unserved:
            self._route(rid)

    def _route(self, rid: int):
        leaf = self.unserved[rid]
        for s, v in enumerate(self.views):
            self.paths[s][rid] = v.path_edges(leaf, v.node)
            self.majors[s][rid] = _view_major(v, leaf)

    def add(self, rid: int, leaf: int, sched: RateSchedule):
        self.unserved[rid] = leaf
        self.schedules[rid] = sched
        self._route(rid)

    def drop(self, rid: int):
        del self.unserved[rid]
        self.schedules.pop(rid, None)
        for s in range(self.k):
            self.paths[s].pop(rid, None)
            self.majors[s].pop(rid, None)
            self.counters[s].remove_request(rid)

    def triggered(self, s: int, c: Optional[Counters] = None) -> List[int]:
        c = c or self.counters[s]
        return sorted({m for m in self.majors[s].values() if m is not None and m in c.sat})

    def triggers(self) -> List[Tuple[int, int]]:
        """Triggered (server, edge) pairs, earliest first.

        Servers triggering at the same instant are ranked by the weight
        infinite rates had to inject at that instant: with a huge finite
        rate the server needing less would have triggered first.
        """
        out = [(self.instant[s], s, e) for s in range(self.k) for e in self.triggered(s)]
        return [(s, e) for _, s, e in sorted(out)]

    def accrue(self, until: Fraction):
        for s in range(self.k):
            out = simulate(self.counters[s], self.paths[s], self.schedules, self.clock, until,
                           lambda s=s: bool(self.triggered(s)))
            if out.time < until:
                raise InternalConsistencyError(f"server {s} missed a trigger at {out.time}")
            self.instant[s] = out.instant if until > self.clock else self.instant[s] + out.instant
        self.clock = until

    def next_trigger(self, now: Fraction) -> Optional[Tuple[Fraction, int, int]]:
        best = None
        for s in range(self.k):
            c = self.counters[s].copy()
            out = simulate(c, self.paths[s], self.schedules, now, None,
                           lambda: bool(self.triggered(s, c)))
            if out.reason == "stop":
                cand = (out.time, out.instant, s, self.triggered(s, c)[0])
                if best is None or cand < best:
                    best = cand
        return None if best is None else (best[0], best[2], best[3])

    def reset_real(self, real: int):
        for s, v in enumerate(self.views):
            for e in v.view_edges(real):
                self.counters[s].reset(e)

    def bound_problems(self) -> List[str]:
        out = []
        for s, c in enumerate(self.counters):
            out += [f"server {s}: {p}" for p in c.bound_violations()]
        return out


def next_trigger_k(state: KServerState, now: Fraction):
    return state.next_trigger(now)


def servers_in_relevant_subtree(state: KServerState, s: int, e: int) -> List[int]:
    view = state.views[s]
    R = relevant_subtree(view, view.node, e)
    inside = []
    for o, p in enumerate(state.positions):
        if o == s:
            continue
        if p.offset == 0:
            if p.node in R.nodes:
                inside.append(o)
        else:
            # on edge p.node: inside iff both of its endpoints are R vertices
            if p.node in R.nodes and view.parent.get(p.node) in R.nodes:
                inside.append(o)
    return inside


@dataclass
class KPhase:
    trigger_server: int
    major_edge: int
    key_edges: List[int]
    S: Set[int]
    served: List[int]
    moves: List[Move]
    cost: Fraction
    ps_served: Optional[List[int]] = None
    ps_cost: Optional[Fraction] = None


def _ordered_keys(view: RootedTree, top: int, S: Set[int], keys: Set[int]) -> List[int]:
    out = []

    def rec(u):
        for c in sorted((c for c in view.children.get(u, ()) if c in S),
                        key=lambda c: (view.length(c), c)):
            if c in keys:
                out.append(c)
            else:
                rec(c)

    rec(top)
    return out


def _dfs_nodes(view: RootedTree, u: int, S: Set[int]) -> List[int]:
    seq = [u]
    for c in sorted((c for c in view.children.get(u, ()) if c in S), key=lambda c: (view.length(c), c)):
        seq += _dfs_nodes(view, c, S)
        seq.append(u)
    return seq


def serving_phase_k(state: KServerState, s: int, e_star: int, ctx: PlanContext, depth: int,
                    log: InvariantLog, compare_ps: bool = False) -> KPhase:
    """Plan with the trigger server's counters, then serve key edges by active cover."""
    view = state.views[s]
    tree = state.tree
    inside = servers_in_relevant_subtree(state, s, e_star)
    log.check("no_servers_in_relevant_subtree", not inside,
              f"servers {inside} inside R_{e_star} of server {s}")
    plan = build_plan(ctx, state.counters[s], view.node, e_star, depth,
                      check_hst_ratio=view.split is None)
    X = x_scope(view, view.node, e_star)
    a = near_end(view, X)
    z = X.top
    keys = set(plan.key_edges)
    if keys == {e_star}:
        order = [e_star]
    else:
        order = _ordered_keys(view, z, plan.S - {e_star}, keys)
    positions = state.positions
    moves: List[Move] = []
    visited: Set[int] = {p.node for p in positions if p.offset == 0}
    touched: Set[int] = set()  # real edges traversed in full or in part

    def record(ms: List[Move]):
        for m in ms:
            e = common_edge(tree, m.src, m.dst)
            if e is not None:
                touched.add(e)
            if m.dst.offset == 0:
                visited.add(m.dst.node)
        moves.extend(ms)

    for k in order:
        if k == e_star:
            base, below, inner = a, z, plan.S - {e_star}
        else:
            base, below, inner = view.parent[k], k, plan.S
        base_pt = view.to_point(base)
        cov = active_cover_move(tree, positions, base_pt)
        record(cov.moves)
        srv = cov.arrived
        route = [base] + _dfs_nodes(view, below, inner) + [base]
        walk = []
        for x, y in zip(route, route[1:]):
            src, dst = positions[srv], view.to_point(y)
            walk.append(Move(srv, src, dst))
            positions[srv] = dst
        record(walk)
    served = sorted(r for r, leaf in state.unserved.items() if leaf in visited)
    log.check("critical_served_k", set(plan.critical) <= set(served),
              f"critical {sorted(set(plan.critical) - set(served))} missed")
    cost = sum((point_distance(tree, m.src, m.dst) for m in moves), Fraction(0))
    phase = KPhase(s, e_star, list(order), set(plan.S), served, moves, cost)
    if compare_ps:
        phase.ps_served = list(plan.served)
        phase.ps_cost = plan.cost
        log.check("k1_same_served", set(plan.served) == set(served),
                  f"ps serves {plan.served}, k-server phase serves {served}")
        log.check("k1_cost_within_2x", cost <= 2 * plan.cost, f"cost {cost} vs ps {plan.cost}")
    for e in sorted(touched):
        state.reset_real(e)
    for r in served:
        state.drop(r)
    state.refresh()
    return phase


class KServer(Algorithm):
    """The k-server generalization of preemptive service."""

    name = "kosd"

    def __init__(self, strict: bool = False, compare_ps: bool = True):
        self.strict = strict
        self.compare_ps = compare_ps

    def reset(self, tree, instance, view, seed=0):
        super().reset(tree, instance, view, seed)
        self.log = InvariantLog(self.strict)
        self.state = KServerState(tree, instance.start)
        self.depth = tree.depth
        self.phases: List[KPhase] = []
        self._cache = None

    def _schedule(self, rid, now):
        r = self.view.request(rid)
        if self.view.clairvoyant:
            return schedule_from_penalty(r.arrival, self.view.full_penalty(rid), now)
        return RateSchedule.constant(now, self.view.current_rate(rid))

    def _advance(self, now):
        self.state.accrue(now)
        probs = self.state.bound_problems()
        for p in probs:
            self.log.check("counter_bounds", False, p)
        self.log.check("counter_bounds", True)

    def on_arrival(self, request, now):
        self._advance(now)
        self.state.add(request.id, request.leaf, self._schedule(request.id, now))
        self._cache = None

    def on_tick(self, now):
        self._advance(now)
        for rid in self.state.unserved:
            self.state.schedules[rid] = self._schedule(rid, now)
        self._cache = None

    def _local(self) -> List[int]:
        nodes = {p.node for p in self.state.positions if p.offset == 0}
        return sorted(r for r, leaf in self.state.unserved.items() if leaf in nodes)

    def next_decision_time(self, now):
        if self._cache is not None and self._cache[0] == now:
            return self._cache[1]
        self._advance(now)
        if self._local() or self.state.triggers():
            t = now
        else:
            nt = self.state.next_trigger(now)
            t = None if nt is None else nt[0]
        self._cache = (now, t)
        return t

    def on_decision(self, now):
        self._advance(now)
        self._cache = None
        st = self.state
        here = self._local()
        if here:
            for r in here:
                st.drop(r)
            return Decision([], here, {"kind": "local"})
        trig = st.triggers()
        if not trig:
            return None
        s, e = trig[0]
        ctx = PlanContext(st.views[s], dict(st.unserved),
                          {r: self._schedule(r, now) for r in st.unserved}, now, self.log)
        phase = serving_phase_k(st, s, e, ctx, self.depth, self.log,
                                compare_ps=self.compare_ps and st.k == 1)
        self.phases.append(phase)
        for p in st.bound_problems():
            self.log.check("counter_bounds", False, p)
        info = {"kind": "phase", "server": s, "major_edge": e, "key_edges": phase.key_edges}
        return Decision(phase.moves, phase.served, info)

    def invariant_summary(self):
        return self.log.summary()
