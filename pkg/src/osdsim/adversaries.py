"""Instance generators and the adaptive nonclairvoyant adversary."""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, List, Optional, Tuple

from .engine import Adversary, Algorithm, EngineState, run
from .errors import BadParams, ClairvoyantAlgorithm
from .hst import Hst, floor_pow2_exp
from .instance import ClairvoyanceMode, Instance, PenaltyFn, Request

EPS0 = Fraction(1, 2 ** 20)  # stands in for an infinite rate: deadline right after arrival


def _star(light: int, heavy_exp: int) -> Hst:
    """Root 0; leaf 1 is the heavy location p_0, leaves 2.. are p_1, p_2, ..."""
    exps = [heavy_exp] + [0] * light
    return Hst.star(exps)


def _int_param(name, v, lo):
    if isinstance(v, bool) or not isinstance(v, int) or v < lo:
        raise BadParams(f"{name} must be an integer >= {lo}, got {v!r}")


def gen_star_rates(n: int, W: int, eps: Optional[Fraction] = None) -> Instance:
    """Rate-based gap instance: light page p_i accrues at (W+1)^(i+1), p_0 needs instant service."""
    _int_param("n", n, 2)
    _int_param("W", W, 1)
    tree = _star(n - 1, floor_pow2_exp(W))
    base = W + 1
    p0_times = [Fraction(0)] + [Fraction(1, base ** i) for i in range(1, n)]
    p0_times.sort()
    if eps is None:
        gap = min(b - a for a, b in zip(p0_times, p0_times[1:]))
        eps = min(EPS0, gap / 2048)
    reqs = []
    rid = 0
    for t in p0_times:
        # after time 0, p_0 asks again just after the server has left for p_i
        at_ = t + eps if t > 0 else t
        reqs.append(Request(rid, 1, at_, PenaltyFn.deadline_only(eps)))
        rid += 1
    for i in range(1, n):
        reqs.append(Request(rid, i + 1, Fraction(0), PenaltyFn.linear(base ** (i + 1))))
        rid += 1
    return Instance(tree, tuple(reqs), 1, (0,)).validate()


def gen_star_deadlines(n: int, W: int) -> Instance:
    """Deadline gap instance: p_i must be served within delay i, p_0 at once at t = 0..n-1."""
    _int_param("n", n, 2)
    _int_param("W", W, 1)
    tree = _star(n - 1, floor_pow2_exp(W))
    reqs = []
    rid = 0
    for t in range(n):
        reqs.append(Request(rid, 1, Fraction(t), PenaltyFn.deadline_only(EPS0)))
        rid += 1
    for i in range(1, n):
        reqs.append(Request(rid, i + 1, Fraction(0), PenaltyFn.deadline_only(i)))
        rid += 1
    return Instance(tree, tuple(reqs), 1, (0,)).validate()


def spatial_leaf(m: int, i: int, j: int) -> int:
    """Node id of the j-th unit leaf (1-based) under the i-th heavy edge."""
    return m + (i - 1) * m + j


def gen_spatial(m: int) -> Instance:
    """Two-layer tree; leaves become critical column by column across subtrees."""
    if isinstance(m, bool) or not isinstance(m, int) or m < 2 or m & (m - 1):
        raise BadParams(f"m must be a power of two >= 2, got {m!r}")
    parent, exps = {}, {}
    top = floor_pow2_exp(m)
    for i in range(1, m + 1):
        parent[i] = 0
        exps[i] = top
        for j in range(1, m + 1):
            v = spatial_leaf(m, i, j)
            parent[v] = i
            exps[v] = 0
    tree = Hst(0, parent, exps)
    reqs = []
    for i in range(1, m + 1):
        for j in range(1, m + 1):
            rank = (j - 1) * m + i
            reqs.append(Request(len(reqs), spatial_leaf(m, i, j), Fraction(0),
                                PenaltyFn.deadline_only(rank)))
    return Instance(tree, tuple(reqs), 1, (0,)).validate()


# ------------------------------------------------------------------ random instances

@dataclass
class RandomParams:
    n_leaves: int = 4
    depth: int = 2
    n_requests: int = 6
    slope_lo: int = 1
    slope_hi: int = 4
    deadline_prob: float = 0.2
    max_arrival: int = 8
    k: int = 1
    start_at_leaf: bool = True


def random_hst(rng: random.Random, n_leaves: int, depth: int) -> Hst:
    """Random HST with exactly ``depth`` levels and ``n_leaves`` leaves."""
    if n_leaves < 1 or depth < 1:
        raise BadParams("need n_leaves >= 1 and depth >= 1")
    parent: Dict[int, int] = {}
    exps: Dict[int, int] = {}
    ndepth = {0: 0}
    top = depth - 1 + rng.randint(0, 1)
    nxt = 1

    def grow(u: int, length: int):
        nonlocal nxt
        for _ in range(length):
            v = nxt
            nxt += 1
            parent[v] = u
            up = exps.get(u, top + 1)
            room = up - 1 - (depth - ndepth[u] - 1)
            exps[v] = up - 1 - (1 if room > 0 and rng.random() < 0.3 else 0)
            ndepth[v] = ndepth[u] + 1
            u = v

    grow(0, depth)
    leaves = 1
    while leaves < n_leaves:
        internal = sorted(u for u in ndepth if ndepth[u] < depth and (u == 0 or u in parent.values()))
        u = rng.choice(internal)
        grow(u, rng.randint(1, depth - ndepth[u]))
        leaves += 1
    return Hst(0, parent, exps)


def gen_random(seed: int, params: Optional[RandomParams] = None, **kw) -> Instance:
    """Seeded random instance on a random HST."""
    p = params or RandomParams(**kw)
    for name in ("n_leaves", "depth", "n_requests", "k"):
        _int_param(name, getattr(p, name), 0 if name == "n_requests" else 1)
    if p.slope_lo < 1 or p.slope_hi < p.slope_lo:
        raise BadParams("slope range must satisfy 1 <= lo <= hi")
    if not 0 <= p.deadline_prob <= 1:
        raise BadParams("deadline_prob must lie in [0, 1]")
    rng = random.Random(seed)
    tree = random_hst(rng, p.n_leaves, p.depth)
    leaves = tree.leaf_nodes
    if p.start_at_leaf:
        start = tuple(rng.choice(leaves) for _ in range(p.k))
    else:
        start = tuple([tree.root] * p.k)
    reqs = []
    for rid in range(p.n_requests):
        leaf = rng.choice(leaves)
        arrival = Fraction(rng.randint(0, 4 * p.max_arrival), 4)
        s1 = rng.randint(p.slope_lo, p.slope_hi)
        segs = [(Fraction(0), Fraction(s1))]
        if rng.random() < 0.3:
            segs.append((Fraction(rng.randint(1, 8), 2), Fraction(rng.randint(p.slope_lo, p.slope_hi))))
        dl = None
        if rng.random() < p.deadline_prob:
            dl = Fraction(rng.randint(1, 16), 4)
            segs = [s for s in segs if s[0] < dl]
        reqs.append(Request(rid, leaf, arrival, PenaltyFn(tuple(segs), dl)))
    return Instance(tree, tuple(reqs), p.k, start).validate()


# ------------------------------------------------------------------ nonclairvoyant adversary

P0 = 1  # heavy leaf in the adversary's star


def light_leaf(i: int) -> int:
    return i + 1


@dataclass
class PhaseRecord:
    index: int
    start: Fraction
    critical: List[int] = field(default_factory=list)        # light pages r_1, r_2, ...
    alg_light_served: List[int] = field(default_factory=list)
    alg_p0_services: int = 0
    all_light_served: bool = False


class CriticalityAdversary(Adversary):
    """Adaptive lower-bound construction against a nonclairvoyant single server.

    Each phase lasts W+1 time units.  All light pages are requested at the
    phase start with zero penalty; p_0 is requested at eps with an instant
    deadline; at t = 1..W an unserved light page is made critical and p_0
    is requested again at t + eps.
    """

    def __init__(self, W: int, phases: int, eps: Fraction = Fraction(1, 4)):
        self.W = W
        self.n = W * W
        self.phases = phases
        self.eps = Fraction(eps)
        self.tree = _star(self.n, floor_pow2_exp(W))
        self.records: List[PhaseRecord] = []
        self._next_id = 0
        self._plan: List[Tuple[Fraction, str, int]] = []
        for j in range(phases):
            T = Fraction(j * (W + 1))
            self._plan.append((T, "phase", j))
            self._plan.append((T + self.eps, "p0", j))
            for t in range(1, W + 1):
                self._plan.append((T + t, "crit", j))
                self._plan.append((T + t + self.eps, "p0", j))
        self._plan.sort(key=lambda x: x[0])
        self._pi = 0
        self.light_requests: Dict[int, List[int]] = {}   # page -> request ids
        self.requests: Dict[int, Request] = {}

    def _new(self, leaf: int, now: Fraction, pen: PenaltyFn) -> Request:
        r = Request(self._next_id, leaf, now, pen)
        self._next_id += 1
        self.requests[r.id] = r
        return r

    def next_time(self, now):
        return self._plan[self._pi][0] if self._pi < len(self._plan) else None

    def _sync(self, state: EngineState):
        rec = self.records[-1] if self.records else None
        if rec is None:
            return
        for rid, t in state.served_at.items():
            r = self.requests[rid]
            if t < rec.start:
                continue
            if r.leaf == P0:
                pass
            elif r.leaf - 1 not in rec.alg_light_served:
                rec.alg_light_served.append(r.leaf - 1)

    def act(self, now, state: EngineState):
        new, upd = [], []
        while self._pi < len(self._plan) and self._plan[self._pi][0] == now:
            _, kind, j = self._plan[self._pi]
            self._pi += 1
            self._sync(state)
            if kind == "phase":
                self.records.append(PhaseRecord(j, now))
                for i in range(1, self.n + 1):
                    r = self._new(light_leaf(i), now, PenaltyFn.linear(0))
                    self.light_requests.setdefault(i, []).append(r.id)
                    new.append(r)
            elif kind == "p0":
                new.append(self._new(P0, now, PenaltyFn.deadline_only(EPS0)))
            else:
                rec = self.records[-1]
                # a page this phase's service has not touched yet
                served = set(rec.alg_light_served)
                cand = [i for i in range(1, self.n + 1) if i not in served and i not in rec.critical]
                if not cand:
                    continue
                page = cand[0]
                rec.critical.append(page)
                for rid in self.light_requests[page]:
                    if rid in state.pending:
                        r = state.pending[rid]
                        crit = Request(r.id, r.leaf, r.arrival,
                                       PenaltyFn(r.penalty.segments, now - r.arrival))
                        self.requests[rid] = crit
                        upd.append(crit)
        return new, upd

    def finish(self, state: EngineState, served_at: Dict[int, Fraction]):
        for rec, nxt in zip(self.records, self.records[1:] + [None]):
            end = nxt.start if nxt is not None else None
            light, p0 = set(), 0
            for rid, t in served_at.items():
                if t < rec.start or (end is not None and t >= end):
                    continue
                r = self.requests[rid]
                if r.leaf == P0:
                    p0 += 1
                else:
                    light.add(r.leaf - 1)
            rec.alg_light_served = sorted(light)
            rec.alg_p0_services = p0
            rec.all_light_served = len(light) == self.n


def witness_schedule(adv: CriticalityAdversary, end: Fraction) -> List[Tuple[Fraction, List[int]]]:
    """Offline schedule: serve the phase's critical pages at its start, then sit at p_0."""
    tree = adv.tree
    visits = []
    pos = tree.root
    for rec in adv.records:
        route = [pos]
        for page in rec.critical:
            route += tree.path_nodes(route[-1], light_leaf(page))[1:]
        route += tree.path_nodes(route[-1], P0)[1:]
        visits.append((rec.start, route))
        pos = P0
        # staying at p_0 serves each of its requests on arrival
        nxt = rec.start + adv.W + 1
        for t in sorted({r.arrival for r in adv.requests.values()
                         if r.leaf == P0 and rec.start <= r.arrival < nxt}):
            visits.append((t, [P0]))
    flush = [pos]
    for i in range(1, adv.n + 1):
        flush += tree.path_nodes(flush[-1], light_leaf(i))[1:]
    visits.append((end, flush))
    return visits


@dataclass
class AdversaryResult:
    W: int
    phases: int
    eps: Fraction
    algorithm: str
    alg_cost: object
    witness_cost: Fraction
    witness_delay: object
    ratio: float
    records: List[PhaseRecord]
    properties: Dict[str, bool]

    def to_dict(self) -> dict:
        return {
            "W": self.W, "phases": self.phases, "eps": str(self.eps), "algorithm": self.algorithm,
            "alg_cost": str(self.alg_cost), "witness_cost": str(self.witness_cost),
            "ratio": round(self.ratio, 6), "properties": self.properties,
            "transcript": [
                {"phase": r.index, "start": str(r.start), "critical": r.critical,
                 "light_served": len(r.alg_light_served), "p0_services": r.alg_p0_services}
                for r in self.records
            ],
        }


def nonclairvoyant_adversary(W: int, phases: int, algorithm: Algorithm,
                             mode: ClairvoyanceMode = ClairvoyanceMode.NONCLAIRVOYANT,
                             eps: Fraction = Fraction(1, 4)) -> AdversaryResult:
    from .oracle import evaluate_schedule

    if mode is not ClairvoyanceMode.NONCLAIRVOYANT:
        raise ClairvoyantAlgorithm("the adversary only plays against nonclairvoyant algorithms")
    _int_param("W", W, 2)
    _int_param("phases", phases, 1)
    adv = CriticalityAdversary(W, phases, eps)
    empty = Instance(adv.tree, (), 1, (adv.tree.root,))
    rep, tr = run(empty, algorithm, mode, adversary=adv)
    st = EngineState()
    adv.finish(st, rep.served_at)
    end = max(rep.end_time, Fraction(phases * (W + 1)))
    final_reqs = sorted(adv.requests.values(), key=lambda r: (r.arrival, r.id))
    inst = Instance(adv.tree, tuple(final_reqs), 1, (adv.tree.root,))
    wit = witness_schedule(adv, end)
    move, delay, served = evaluate_schedule(inst, wit)
    props = {
        "alg_all_light_or_W_p0": all(r.all_light_served or r.alg_p0_services >= W for r in adv.records),
        "witness_no_delay": delay == 0 and len(served) == len(final_reqs),
        "witness_p0_once_le_W_light": all(len(r.critical) <= W for r in adv.records),
    }
    wcost = move + delay
    ratio = float(Fraction(rep.total) / wcost) if wcost else float("inf")
    return AdversaryResult(W, phases, Fraction(eps), algorithm.name, rep.total, wcost, delay,
                           ratio, adv.records, props)
