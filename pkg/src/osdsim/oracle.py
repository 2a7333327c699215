"""Exact offline optimum for small instances, and the ball-growing baseline."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

from .engine import Algorithm, CostReport, Decision, Move, run
from .errors import TooLarge, UnknownNode
from .geometry import at
from .hst import RootedTree
from .instance import ClairvoyanceMode, Instance, Request, service_penalty

INF = math.inf


# ------------------------------------------------------------------ tours

def steiner_weight(tree: RootedTree, terminals: Iterable[int]) -> Fraction:
    """Total length of the minimal subtree spanning ``terminals``."""
    terms = set(terminals)
    for t in terms:
        if t not in tree.children and t != tree.root:
            raise UnknownNode(f"unknown node {t!r}")
    if len(terms) <= 1:
        return Fraction(0)
    below: Dict[int, int] = {}
    total = Fraction(0)
    n = len(terms)
    order = sorted(tree.nodes, key=lambda v: -tree.node_depth[v])
    for v in order:
        c = below.get(v, 0) + (1 if v in terms else 0)
        if v != tree.root:
            if 0 < c < n:
                total += tree.length(v)
            p = tree.parent[v]
            below[p] = below.get(p, 0) + c
    return total


def steiner_tour_cost(tree: RootedTree, start: int, targets: Iterable[int]) -> Tuple[Fraction, int]:
    """Cheapest walk from ``start`` visiting every target, ending anywhere.

    Equals twice the spanning subtree minus the longest start-to-terminal
    distance; the walk ends at that farthest terminal (lowest id on ties).
    """
    targets = set(targets)
    for v in targets | {start}:
        if v not in tree.children:
            raise UnknownNode(f"unknown node {v!r}")
    if not targets or targets == {start}:
        return Fraction(0), start
    w = steiner_weight(tree, targets | {start})
    far = max(sorted(targets), key=lambda t: tree.distance(start, t))
    return 2 * w - tree.distance(start, far), far


def brute_force_tour(dist: Callable[[int, int], Fraction], start: int,
                     targets: Iterable[int]) -> Tuple[Fraction, int]:
    """Minimum over all visiting orders; reference for small target sets."""
    targets = sorted(set(targets) - {start})
    if not targets:
        return Fraction(0), start
    best = None
    for perm in itertools.permutations(targets):
        cost, pos = Fraction(0), start
        for t in perm:
            cost += dist(pos, t)
            pos = t
        if best is None or cost < best[0] or (cost == best[0] and pos < best[1]):
            best = (cost, pos)
    return best


def held_karp(dist: Callable[[int, int], Fraction], start: int,
              targets: Iterable[int]) -> Tuple[Fraction, int]:
    """Open-path travelling salesman over a general metric (exact, exponential)."""
    pts = sorted(set(targets) - {start})
    if not pts:
        return Fraction(0), start
    n = len(pts)
    dp: Dict[Tuple[int, int], Fraction] = {}
    for i, p in enumerate(pts):
        dp[(1 << i, i)] = dist(start, p)
    for mask in range(1, 1 << n):
        for i in range(n):
            if (mask, i) not in dp:
                continue
            base = dp[(mask, i)]
            for j in range(n):
                if mask & (1 << j):
                    continue
                key = (mask | (1 << j), j)
                c = base + dist(pts[i], pts[j])
                if key not in dp or c < dp[key]:
                    dp[key] = c
    full = (1 << n) - 1
    best = min(range(n), key=lambda i: (dp[(full, i)], pts[i]))
    return dp[(full, best)], pts[best]


# ------------------------------------------------------------------ schedules

def distance_fn(space) -> Callable[[int, int], Fraction]:
    if isinstance(space, RootedTree):
        return space.distance
    return space.d


def evaluate_schedule(instance: Instance, visits: Sequence[tuple]):
    """Replay a schedule of visits and return (movement, delay penalty, served ids).

    Each visit is ``(time, route)`` for server 0 or ``(time, server, route)``;
    ``route`` lists locations visited in order from the server's position.
    Every arrived, pending request at a visited location is served.
    """
    d = distance_fn(instance.space)
    pos = list(instance.start)
    pending = {r.id: r for r in instance.requests}
    served: Dict[int, Fraction] = {}
    move = Fraction(0)
    delay = Fraction(0)
    last = Fraction(0)
    for v in visits:
        t, s, route = (v[0], 0, v[1]) if len(v) == 2 else v
        if t < last:
            raise ValueError("visits must be in time order")
        last = t
        for x in route:
            move += d(pos[s], x)
            pos[s] = x
            for rid in sorted(pending):
                r = pending[rid]
                if r.leaf == x and r.arrival <= t:
                    delay = delay + service_penalty(r.penalty, t - r.arrival)
                    served[rid] = t
                    del pending[rid]
    for r in pending.values():
        delay = INF
    return move, delay, served


@dataclass
class OracleConfig:
    max_requests: int = 10
    k: Optional[int] = None


@dataclass
class OracleResult:
    opt_cost: object
    movement: Fraction
    delay: object
    witness: List[Tuple[Fraction, int, List[int]]] = field(default_factory=list)
    grid: List[Fraction] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "opt_cost": str(self.opt_cost),
            "movement": str(self.movement),
            "delay": str(self.delay),
            "witness": [{"time": str(t), "server": s, "route": r} for t, s, r in self.witness],
        }


def decision_grid(instance: Instance) -> List[Fraction]:
    g = set()
    for r in instance.requests:
        g.add(r.arrival)
        g.update(r.tick_times())
    return sorted(g)


def offline_opt(instance: Instance, config: Optional[OracleConfig] = None) -> OracleResult:
    """Exhaustive dynamic program over (grid epoch, server positions, served set).

    Within an epoch a server hops to a location with pending requests and
    serves all of them; by the triangle inequality other moves never help.
    Leaving an epoch is forbidden while a pending request's deadline falls
    before the next epoch.
    """
    cfg = config or OracleConfig()
    k = cfg.k or instance.k
    reqs = list(instance.requests)
    if len(reqs) > cfg.max_requests:
        raise TooLarge(f"{len(reqs)} requests exceed the oracle limit of {cfg.max_requests}")
    if k > 2:
        raise TooLarge("the oracle handles at most two servers")
    start = tuple(instance.start[:k]) if len(instance.start) >= k else tuple(instance.start) * k
    d = distance_fn(instance.space)
    grid = decision_grid(instance)
    full = (1 << len(reqs)) - 1
    if not reqs:
        return OracleResult(Fraction(0), Fraction(0), Fraction(0), [], grid)
    locs = sorted({r.leaf for r in reqs})
    at_loc = {x: [i for i, r in enumerate(reqs) if r.leaf == x] for x in locs}
    dl = [r.deadline_time for r in reqs]

    chains: List[dict] = []
    # state -> (cost, move, delay, back-pointer)
    layer: Dict[Tuple[tuple, int], tuple] = {(start, 0): (Fraction(0), Fraction(0), Fraction(0), None)}
    for ei, t in enumerate(grid):
        arrived = 0
        for i, r in enumerate(reqs):
            if r.arrival <= t:
                arrived |= 1 << i
        pen_at = {}
        for x in locs:
            for i in at_loc[x]:
                if arrived >> i & 1:
                    pen_at[i] = service_penalty(reqs[i].penalty, t - reqs[i].arrival)
        # expand by popcount so each state is final before it is extended
        states = dict(layer)
        order = sorted(states, key=lambda s: bin(s[1]).count("1"))
        buckets: Dict[int, List] = {}
        for s in order:
            buckets.setdefault(bin(s[1]).count("1"), []).append(s)
        pc = 0
        maxpc = len(reqs)
        while pc <= maxpc:
            for s in sorted(buckets.get(pc, []), key=repr):
                pos, mask = s
                cost, mv, dy, _ = states[s]
                pend = arrived & ~mask
                if not pend:
                    continue
                for x in locs:
                    here = [i for i in at_loc[x] if pend >> i & 1]
                    if not here:
                        continue
                    pen = sum((pen_at[i] for i in here), Fraction(0))
                    if pen == INF:
                        continue
                    nmask = mask
                    for i in here:
                        nmask |= 1 << i
                    for sv in range(k):
                        step = d(pos[sv], x)
                        npos = pos[:sv] + (x,) + pos[sv + 1:]
                        key = (npos, nmask)
                        val = (cost + step + pen, mv + step, dy + pen, (s, ei, sv, x))
                        old = states.get(key)
                        if old is None or val[0] < old[0]:
                            if old is None:
                                buckets.setdefault(bin(nmask).count("1"), []).append(key)
                            states[key] = val
            pc += 1
        # leave the epoch
        nxt = grid[ei + 1] if ei + 1 < len(grid) else None
        layer = {}
        for s, val in states.items():
            pos, mask = s
            pend = arrived & ~mask
            ok = True
            for i in range(len(reqs)):
                if pend >> i & 1 and (nxt is None or (dl[i] is not None and dl[i] < nxt)):
                    ok = False
                    break
            if ok:
                layer[s] = (val[0], val[1], val[2], ("epoch", s, ei, val[3]))
        chains.append(states)
    finals = {s: v for s, v in layer.items() if s[1] == full}
    if not finals:
        return OracleResult(INF, Fraction(0), INF, [], grid)
    best = min(finals, key=lambda s: (finals[s][0], repr(s)))
    cost, mv, dy, _ = finals[best]
    witness = _unwind(chains, best, grid)
    return OracleResult(cost, mv, dy, witness, grid)


def _unwind(chains: List[dict], final_state, grid) -> List[Tuple[Fraction, int, List[int]]]:
    hops = []
    s = final_state
    for ei in range(len(chains) - 1, -1, -1):
        states = chains[ei]
        while True:
            val = states[s]
            bp = val[3]
            if bp is None or bp[0] == "epoch":
                if bp is not None:
                    s = bp[1]
                break
            prev, e, sv, x = bp
            hops.append((grid[e], sv, x))
            s = prev
    hops.reverse()
    out: List[Tuple[Fraction, int, List[int]]] = []
    for t, sv, x in hops:
        if out and out[-1][0] == t and out[-1][1] == sv:
            out[-1][2].append(x)
        else:
            out.append((t, sv, [x]))
    return out


def replay_witness(instance: Instance, result: OracleResult):
    move, delay, served = evaluate_schedule(instance, result.witness)
    return move + delay


# ------------------------------------------------------------------ ball growing

class BallGrowing(Algorithm):
    """Serve a location once its pending penalty reaches the server's distance to it.

    Uses current penalties and rates only, so it runs unchanged in either
    clairvoyance mode.
    """

    name = "ball"

    def reset(self, tree, instance, view, seed=0):
        super().reset(tree, instance, view, seed)
        self.pos = instance.start[0]
        self.pending: Dict[int, Request] = {}

    def on_arrival(self, request, now):
        self.pending[request.id] = request

    def _by_loc(self) -> Dict[int, List[int]]:
        out: Dict[int, List[int]] = {}
        for rid, r in self.pending.items():
            out.setdefault(r.leaf, []).append(rid)
        return out

    def _reach_time(self, now, x, rids):
        dist = self.tree.distance(self.pos, x)
        acc = sum((self.view.current_penalty(r) for r in rids), Fraction(0))
        if acc >= dist:
            return now
        rate = sum((self.view.current_rate(r) for r in rids), Fraction(0))
        if rate == INF:
            return now
        if rate == 0:
            return None
        return now + (dist - acc) / rate

    def next_decision_time(self, now):
        best = None
        for x, rids in self._by_loc().items():
            t = self._reach_time(now, x, rids)
            if t is not None and (best is None or t < best):
                best = t
        return best

    def on_decision(self, now):
        ready = sorted(x for x, rids in self._by_loc().items() if self._reach_time(now, x, rids) == now)
        if not ready:
            return None
        x = min(ready, key=lambda v: (self.tree.distance(self.pos, v), v))
        path = self.tree.path_nodes(self.pos, x)
        moves = [Move(0, at(a), at(b)) for a, b in zip(path, path[1:])]
        on_path = set(path)
        served = sorted(rid for rid, r in self.pending.items() if r.leaf in on_path)
        for rid in served:
            del self.pending[rid]
        self.pos = x
        return Decision(moves, served, {"kind": "ball", "target": x})


def ball_growing_baseline(instance: Instance, mode=ClairvoyanceMode.CLAIRVOYANT,
                          horizon=None, seed: int = 0) -> CostReport:
    rep, _ = run(instance, BallGrowing(), mode, horizon, seed, trace=False)
    return rep
